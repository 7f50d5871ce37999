"""The private training loop and its non-private reference.

Each step recomputes anchor gradients on auxiliary data (relabeled at
random by default), rebuilds the per-group anchor basis, releases a
private batch-gradient estimate, and feeds it to SGD with momentum.
Everything downstream of the release is post-processing, so the final
model inherits the release's privacy guarantee under composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .accounting import (
    DpBudget,
    calibrate_sigma_search,
    default_orders,
    rdp_scale,
    rdp_to_dp,
    subsampled_gaussian_curve,
)
from .data import Dataset
from .linalg import RandomStream, row_norms, stable_rank
from .models import ModelSpec, evaluate, make_group_layout, per_sample_gradients
from .release import (
    GepConfig,
    bgep_release,
    build_anchor_basis,
    gep_release,
    gp_release,
)

__all__ = [
    "TrainConfig",
    "StepMetrics",
    "DivergenceError",
    "METHODS",
    "dp_train",
    "gd_train",
    "optimizer_step",
    "calibrate_noise_multiplier",
    "effective_step_multiplier",
    "UtilityPoint",
    "convex_utility_experiment",
    "nonprivate_optimum",
]

METHODS = ("gep", "bgep", "gp", "random-basis-gep")

# Substream purposes; one substream per (step, purpose) pair.
PURPOSE_BATCH = 0
PURPOSE_ANCHOR_LABELS = 1
PURPOSE_BASIS = 2
PURPOSE_NOISE = 3


class DivergenceError(RuntimeError):
    """The optimizer produced non-finite parameters."""


@dataclass(frozen=True, eq=False)
class TrainConfig:
    """Everything needed to reproduce one training run."""

    model: ModelSpec
    gep: GepConfig
    budget: DpBudget
    steps: int
    aux_data: Dataset
    method: str = "gep"
    batch: str = "full"  # "full" or "poisson"
    q: float = 1.0  # Poisson inclusion probability
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay: bool = True  # divide lr by 10 at the midpoint step
    seed: int = 0
    aux_label_mode: str = "random-each-step"  # or "fixed"
    sigma_override: float | None = None  # skip calibration when set (>= 0)
    track_spectra: bool = False  # per-step stable ranks of G and R
    iterate_averaging: bool = False  # return the averaged iterate

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.batch not in ("full", "poisson"):
            raise ValueError(f"unknown batch rule {self.batch!r}")
        if self.batch == "poisson" and not 0 < self.q <= 1:
            raise ValueError(f"poisson sampling rate must lie in (0, 1], got {self.q}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")
        if self.aux_label_mode not in ("random-each-step", "fixed"):
            raise ValueError(f"unknown auxiliary label mode {self.aux_label_mode!r}")
        if self.sigma_override is not None and self.sigma_override < 0:
            raise ValueError("sigma override must be >= 0")
        if self.aux_data.n < self.gep.m:
            raise ValueError(
                f"auxiliary dataset has {self.aux_data.n} rows, config asks for "
                f"m={self.gep.m} anchor gradients"
            )


@dataclass(frozen=True)
class StepMetrics:
    """Per-step training record.

    Losses and accuracy are measured after the step's update; release
    diagnostics describe the step's gradients.  ``epsilon_spent`` is the
    budget consumed by all steps up to and including this one.
    """

    step: int
    train_loss: float
    eval_loss: float
    eval_accuracy: float
    projection_error_rate: float
    stable_rank_g: float
    stable_rank_r: float
    k_effective: int
    clip_fraction_s1: float
    clip_fraction_s2: float
    epsilon_spent: float

    FIELDS = (
        "step",
        "train_loss",
        "eval_loss",
        "eval_accuracy",
        "projection_error_rate",
        "stable_rank_g",
        "stable_rank_r",
        "k_effective",
        "clip_fraction_s1",
        "clip_fraction_s2",
        "epsilon_spent",
    )


def optimizer_step(
    theta: np.ndarray,
    velocity: np.ndarray,
    update: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One SGD-with-momentum step on a released gradient estimate.

    Weight decay is added to the estimate before the momentum buffer; this
    touches no private data, so the step is pure post-processing.
    """
    grad = update + weight_decay * theta
    velocity = momentum * velocity + grad
    theta = theta - lr * velocity
    if not np.all(np.isfinite(theta)):
        raise DivergenceError(
            "non-finite parameters after update: "
            f"|update|={float(np.linalg.norm(update)):.3g}, "
            f"|velocity|={float(np.linalg.norm(velocity)):.3g}, lr={lr}"
        )
    return theta, velocity


def _single_release_method(cfg: TrainConfig) -> bool:
    if cfg.method in ("gp", "bgep"):
        return True
    return cfg.gep.release_mode == "joint"


def effective_step_multiplier(cfg: TrainConfig, sigma: float) -> float:
    """Unit-sensitivity multiplier of one step's combined release.

    A step that makes two separate releases at multiplier ``sigma`` is the
    same Gaussian mechanism as a single normalized release at
    ``sigma / sqrt(2)``; single-release methods (gp, bgep, joint-mode gep)
    spend ``sigma`` directly.
    """
    if _single_release_method(cfg):
        return sigma
    return sigma / math.sqrt(2.0)


def calibrate_noise_multiplier(cfg: TrainConfig) -> float:
    """Smallest noise multiplier that keeps the whole run within budget."""
    q = cfg.q if cfg.batch == "poisson" else 1.0
    step_sigma = calibrate_sigma_search(cfg.budget, q, max(cfg.steps, 1))
    if _single_release_method(cfg):
        return step_sigma
    return math.sqrt(2.0) * step_sigma


def _epsilon_schedule(cfg: TrainConfig, sigma: float) -> list[float]:
    """Budget spent after each step, via the accountant."""
    if cfg.steps == 0:
        return []
    sigma_eff = effective_step_multiplier(cfg, sigma)
    if sigma_eff == 0:
        return [math.inf] * cfg.steps
    q = cfg.q if cfg.batch == "poisson" else 1.0
    orders = default_orders(cfg.budget, include_analytic=(q == 1.0))
    per_step = subsampled_gaussian_curve(orders, q, sigma_eff)
    return [
        rdp_to_dp(rdp_scale(per_step, t + 1), cfg.budget.delta)[0]
        for t in range(cfg.steps)
    ]


def _anchor_batch(cfg: TrainConfig, stream: RandomStream, step: int) -> Dataset:
    aux = cfg.aux_data
    if aux.n > cfg.gep.m:
        aux = aux.subset(np.arange(cfg.gep.m))
    if cfg.aux_label_mode == "random-each-step":
        rng = stream.generator(step, PURPOSE_ANCHOR_LABELS)
        if cfg.model.kind == "linear":
            labels: np.ndarray = rng.standard_normal(aux.n)
        else:
            labels = rng.integers(0, cfg.model.output_dim, size=aux.n)
        aux = aux.with_labels(labels)
    return aux


def _lr_at(cfg: TrainConfig, step: int) -> float:
    if cfg.lr_decay and step >= cfg.steps // 2:
        return cfg.lr / 10.0
    return cfg.lr


def dp_train(
    cfg: TrainConfig, private: Dataset, eval_data: Dataset
) -> tuple[ModelSpec, list[StepMetrics]]:
    """Train a model on private data under the configured budget.

    Unless ``cfg.sigma_override`` is set, the noise multiplier is
    calibrated so the full run fits the budget (the per-step epsilons in
    the metrics are recomputed through the accountant, not assumed).  With
    ``cfg.iterate_averaging`` the returned model carries the average of
    the per-step iterates instead of the final one; the metrics always
    describe the actual iterates.
    """
    if private.d != cfg.model.input_dim:
        raise ValueError("private data does not match the model's input size")
    theta = cfg.model.theta.copy()
    velocity = np.zeros_like(theta)
    if cfg.steps == 0:
        return cfg.model.with_theta(theta), []

    stream = RandomStream(cfg.seed)
    sigma = (
        cfg.sigma_override
        if cfg.sigma_override is not None
        else calibrate_noise_multiplier(cfg)
    )
    gep_cfg = replace(
        cfg.gep,
        sigma=sigma,
        basis_mode="random" if cfg.method == "random-basis-gep" else cfg.gep.basis_mode,
    )
    layout = make_group_layout(cfg.model, gep_cfg.k)
    eps_schedule = _epsilon_schedule(cfg, sigma)

    theta_sum = np.zeros_like(theta)
    metrics: list[StepMetrics] = []
    n = private.n
    for t in range(cfg.steps):
        lr = _lr_at(cfg, t)
        if cfg.batch == "poisson":
            mask = stream.generator(t, PURPOSE_BATCH).random(n) < cfg.q
            batch = private.subset(np.flatnonzero(mask))
        else:
            batch = private

        proj_rate = math.nan
        sr_g = math.nan
        sr_r = math.nan
        k_eff = 0
        clip1 = math.nan
        clip2 = math.nan

        if batch.n > 0:
            model_t = cfg.model.with_theta(theta)
            grads = per_sample_gradients(model_t, batch)
            noise_rng = stream.generator(t, PURPOSE_NOISE)
            if cfg.method == "gp":
                update = gp_release(grads, gep_cfg.s1, sigma, noise_rng)
                clip1 = float(np.mean(row_norms(grads) > gep_cfg.s1))
                if cfg.track_spectra:
                    sr_g = stable_rank(grads)
            else:
                anchor = _anchor_batch(cfg, stream, t)
                anchor_grads = per_sample_gradients(model_t, anchor)
                basis = build_anchor_basis(
                    anchor_grads, layout, gep_cfg, stream.generator(t, PURPOSE_BASIS)
                )
                release_fn = bgep_release if cfg.method == "bgep" else gep_release
                rel = release_fn(grads, basis, gep_cfg, noise_rng)
                update = rel.v_tilde
                proj_rate = rel.projection_error_rate
                k_eff = rel.k_effective
                clip1 = rel.clip_fraction_s1
                clip2 = rel.clip_fraction_s2
                if cfg.track_spectra:
                    sr_g = stable_rank(grads)
                    _, resid = basis.split(grads)
                    sr_r = stable_rank(resid)
            theta, velocity = optimizer_step(
                theta, velocity, update, lr, cfg.momentum, cfg.weight_decay
            )

        theta_sum += theta
        model_now = cfg.model.with_theta(theta)
        train_loss, _ = evaluate(model_now, private)
        eval_loss, eval_acc = evaluate(model_now, eval_data)
        metrics.append(
            StepMetrics(
                step=t,
                train_loss=train_loss,
                eval_loss=eval_loss,
                eval_accuracy=eval_acc,
                projection_error_rate=proj_rate,
                stable_rank_g=sr_g,
                stable_rank_r=sr_r,
                k_effective=k_eff,
                clip_fraction_s1=clip1,
                clip_fraction_s2=clip2,
                epsilon_spent=eps_schedule[t],
            )
        )

    final_theta = theta_sum / cfg.steps if cfg.iterate_averaging else theta
    return cfg.model.with_theta(final_theta), metrics


def gd_train(
    cfg: TrainConfig, private: Dataset, eval_data: Dataset
) -> tuple[ModelSpec, list[StepMetrics]]:
    """Non-private full-batch gradient descent with the same optimizer.

    The batch gradient is the mean of the per-sample rows, computed as
    their sum divided by the batch size, which is exactly what the
    noiseless private path reduces to.
    """
    theta = cfg.model.theta.copy()
    velocity = np.zeros_like(theta)
    theta_sum = np.zeros_like(theta)
    metrics: list[StepMetrics] = []
    for t in range(cfg.steps):
        model_t = cfg.model.with_theta(theta)
        grads = per_sample_gradients(model_t, private)
        update = grads.sum(axis=0) / private.n
        theta, velocity = optimizer_step(
            theta, velocity, update, _lr_at(cfg, t), cfg.momentum, cfg.weight_decay
        )
        theta_sum += theta
        model_now = cfg.model.with_theta(theta)
        train_loss, _ = evaluate(model_now, private)
        eval_loss, eval_acc = evaluate(model_now, eval_data)
        metrics.append(
            StepMetrics(
                step=t,
                train_loss=train_loss,
                eval_loss=eval_loss,
                eval_accuracy=eval_acc,
                projection_error_rate=math.nan,
                stable_rank_g=math.nan,
                stable_rank_r=math.nan,
                k_effective=0,
                clip_fraction_s1=math.nan,
                clip_fraction_s2=math.nan,
                epsilon_spent=math.nan,
            )
        )
    final_theta = theta_sum / cfg.steps if cfg.iterate_averaging and cfg.steps else theta
    return cfg.model.with_theta(final_theta), metrics


def nonprivate_optimum(model: ModelSpec, data: Dataset) -> tuple[np.ndarray, float]:
    """High-precision minimizer of the empirical loss (L-BFGS oracle)."""
    from scipy.optimize import minimize

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        m = model.with_theta(theta)
        loss, _ = evaluate(m, data)
        grad = per_sample_gradients(m, data).mean(axis=0)
        return loss, grad

    result = minimize(
        objective,
        model.theta.copy(),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 5000, "ftol": 1e-14, "gtol": 1e-10},
    )
    return result.x, float(result.fun)


@dataclass(frozen=True)
class UtilityPoint:
    """Aggregated outcome of one (method, epsilon) cell."""

    method: str
    epsilon: float
    mean_excess_loss: float
    std_excess_loss: float
    mean_accuracy: float
    std_accuracy: float
    mean_projection_error: float


def convex_utility_experiment(
    base_cfg: TrainConfig,
    private: Dataset,
    eval_data: Dataset,
    methods: tuple[str, ...] = ("gep", "bgep", "gp"),
    epsilons: tuple[float, ...] = (8.0,),
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4),
) -> list[UtilityPoint]:
    """Compare release methods on a convex task at matched budgets.

    For every (method, epsilon) cell the averaged iterate's excess
    empirical loss over a high-precision non-private optimum is reported
    together with final-model accuracy, aggregated over seeds.  Weight
    decay is disabled so the trained objective matches the oracle's.
    """
    if base_cfg.model.kind != "logistic":
        raise ValueError("the utility experiment expects a convex (logistic) model")
    _, loss_star = nonprivate_optimum(base_cfg.model, private)

    points = []
    for method in methods:
        for eps in epsilons:
            excesses = []
            accuracies = []
            proj_errors = []
            for seed in seeds:
                cfg = replace(
                    base_cfg,
                    method=method,
                    budget=DpBudget(eps, base_cfg.budget.delta),
                    seed=seed,
                    weight_decay=0.0,
                    iterate_averaging=True,
                )
                averaged, metrics = dp_train(cfg, private, eval_data)
                loss_avg, _ = evaluate(averaged, private)
                excesses.append(loss_avg - loss_star)
                accuracies.append(metrics[-1].eval_accuracy)
                rates = [
                    m.projection_error_rate
                    for m in metrics
                    if not math.isnan(m.projection_error_rate)
                ]
                proj_errors.append(float(np.mean(rates)) if rates else math.nan)
            points.append(
                UtilityPoint(
                    method=method,
                    epsilon=eps,
                    mean_excess_loss=float(np.mean(excesses)),
                    std_excess_loss=float(np.std(excesses)),
                    mean_accuracy=float(np.mean(accuracies)),
                    std_accuracy=float(np.std(accuracies)),
                    mean_projection_error=float(np.mean(proj_errors)),
                )
            )
    return points
