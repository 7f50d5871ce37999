"""Differentially private optimization via anchor-subspace gradient releases.

The library splits per-sample gradients against a low-dimensional basis
estimated from non-sensitive anchor data, perturbs the embedding and the
residual separately, and recombines them into an unbiased low-variance
private gradient estimate.  It ships with a Renyi-DP accountant, small
models with exact per-sample gradients, a training loop, and an
experiment harness.
"""

from .accounting import (
    CalibrationError,
    DpBudget,
    MechanismSpec,
    RdpCurve,
    calibrate_sigma_closed_form,
    calibrate_sigma_search,
    default_orders,
    rdp_compose,
    rdp_gaussian,
    rdp_subsampled_gaussian,
    rdp_to_dp,
)
from .data import CsvParseError, Dataset, ingest_csv, synth_dataset
from .linalg import (
    RandomStream,
    clip_rows,
    count_flops,
    gaussian_noise,
    orthonormalize_rows,
    power_iteration_basis,
    project_split,
    stable_rank,
)
from .models import (
    GroupLayout,
    ModelSpec,
    ParamGroup,
    evaluate,
    init_model,
    make_group_layout,
    per_sample_gradients,
)
from .release import (
    AnchorBasis,
    GepConfig,
    PrivateRelease,
    bgep_release,
    build_anchor_basis,
    gep_release,
    gp_release,
    projection_error_rate,
    single_group_layout,
)
from .training import (
    DivergenceError,
    StepMetrics,
    TrainConfig,
    convex_utility_experiment,
    dp_train,
    gd_train,
    optimizer_step,
)

__version__ = "0.1.0"

__all__ = [
    "AnchorBasis",
    "CalibrationError",
    "CsvParseError",
    "Dataset",
    "DivergenceError",
    "DpBudget",
    "GepConfig",
    "GroupLayout",
    "MechanismSpec",
    "ModelSpec",
    "ParamGroup",
    "PrivateRelease",
    "RandomStream",
    "RdpCurve",
    "StepMetrics",
    "TrainConfig",
    "bgep_release",
    "build_anchor_basis",
    "calibrate_sigma_closed_form",
    "calibrate_sigma_search",
    "clip_rows",
    "convex_utility_experiment",
    "count_flops",
    "default_orders",
    "dp_train",
    "evaluate",
    "gaussian_noise",
    "gd_train",
    "gep_release",
    "gp_release",
    "ingest_csv",
    "init_model",
    "make_group_layout",
    "optimizer_step",
    "orthonormalize_rows",
    "per_sample_gradients",
    "power_iteration_basis",
    "project_split",
    "projection_error_rate",
    "rdp_compose",
    "rdp_gaussian",
    "rdp_subsampled_gaussian",
    "rdp_to_dp",
    "single_group_layout",
    "stable_rank",
    "synth_dataset",
]
