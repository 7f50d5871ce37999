"""Experiment orchestration: runs, metrics files, summaries, cost checks.

Metrics are newline-delimited JSON with a schema header line, one record
per training step per run, keys in a fixed order so identical runs emit
byte-identical files.
"""

from __future__ import annotations

import json
import math
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .accounting import (
    CalibrationError,
    DpBudget,
    calibrate_sigma_closed_form,
    calibrate_sigma_search,
    default_orders,
    epsilon_for_sigma,
    gaussian_curve,
    rdp_scale,
    rdp_to_dp,
)
from .config import ConfigError, RunConfig, load_config
from .data import Dataset, ingest_csv, standardize_stats, synth_dataset
from .linalg import RandomStream, count_flops
from .models import (
    GroupLayout,
    ParamGroup,
    allocate_basis_counts,
    init_model,
    make_group_layout,
    per_sample_gradients,
)
from .release import GepConfig, build_anchor_basis, projection_error_rate
from .tasks import TaskBundle, logistic_mixture_task, lowrank_regression_task
from .training import StepMetrics, TrainConfig, dp_train

__all__ = [
    "METRICS_SCHEMA",
    "RunSpec",
    "write_metrics",
    "read_metrics",
    "expand_runs",
    "build_task",
    "train_command",
    "accountant_command",
    "bench_command",
    "project_error_command",
    "report_command",
]

METRICS_SCHEMA = {"schema": "gep-metrics", "version": 1}

_RECORD_FIELDS = ("run_id", "method", "seed") + StepMetrics.FIELDS


@dataclass(frozen=True)
class RunSpec:
    """One point of the sweep grid."""

    method: str
    seed: int
    k: int
    m: int
    epsilon: float

    @property
    def run_id(self) -> str:
        return (
            f"{self.method}-eps{self.epsilon:g}-k{self.k}-m{self.m}-seed{self.seed}"
        )


def _record(run: RunSpec, step: StepMetrics) -> dict:
    row = {"run_id": run.run_id, "method": run.method, "seed": run.seed}
    for name in StepMetrics.FIELDS:
        row[name] = getattr(step, name)
    return row


def write_metrics(path: str, rows: list[dict]) -> None:
    """Write a schema header plus one JSON record per line."""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(json.dumps(METRICS_SCHEMA) + "\n")
        for row in rows:
            ordered = {name: row[name] for name in _RECORD_FIELDS}
            handle.write(json.dumps(ordered) + "\n")


def read_metrics(path: str) -> list[dict]:
    """Read a metrics file, validating the schema header."""
    with open(path, encoding="utf-8") as handle:
        header_line = handle.readline()
        if not header_line:
            raise ValueError(f"{path}: empty metrics file")
        header = json.loads(header_line)
        if header.get("schema") != METRICS_SCHEMA["schema"]:
            raise ValueError(f"{path}: unexpected schema header {header!r}")
        return [json.loads(line) for line in handle if line.strip()]


def expand_runs(cfg: RunConfig) -> list[RunSpec]:
    """Cartesian product of methods, seeds, and sweep lists."""
    methods = list(cfg["method"])
    seeds = list(cfg["seeds"])
    ks = list(cfg["sweep.k"]) or [cfg["gep.k"]]
    ms = list(cfg["sweep.m"]) or [cfg["aux.m"]]
    epsilons = list(cfg["sweep.epsilon"]) or [cfg["privacy.epsilon"]]
    runs = []
    for method in methods:
        for eps in epsilons:
            for k in ks:
                for m in ms:
                    for seed in seeds:
                        runs.append(
                            RunSpec(
                                method=method,
                                seed=int(seed),
                                k=int(k),
                                m=int(m),
                                epsilon=float(eps),
                            )
                        )
    return runs


# Substream purposes for dataset construction.
_DATA = 0
_SPLIT = 1
_INIT = 2
_AUX = 3


def _synth_params(cfg: RunConfig, n: int) -> dict:
    return {
        "n": n,
        "input_dim": cfg["data.input_dim"],
        "classes": cfg["data.classes"],
        "sep": cfg["data.sep"],
        "noise": cfg["data.noise"],
        "subspace_dim": cfg["data.subspace_dim"],
        "rank": cfg["data.rank"],
        "tail": cfg["data.tail"],
        "margin": cfg["data.margin"],
        "cluster_weight": cfg["data.cluster_weight"],
        "dense_weight": cfg["data.dense_weight"],
        "feature_scale": cfg["data.feature_scale"],
        "label_mode": cfg["data.label_mode"],
    }


def build_task(cfg: RunConfig, m_aux: int) -> TaskBundle:
    """Materialize datasets and the initial model for a configuration.

    Data generation is keyed by ``data.seed`` only, so every training seed
    sees the same datasets.  The auxiliary pool is disjoint from both the
    private and evaluation splits.
    """
    stream = RandomStream(int(cfg["data.seed"]))
    n = int(cfg["data.n"])
    n_eval = max(1, int(math.floor(n * float(cfg["data.eval_fraction"]))))
    aux_source = str(cfg["aux.source"])
    n_holdout = m_aux if aux_source.startswith("heldout") else 0

    if cfg["data.kind"] == "csv":
        full = ingest_csv(
            str(cfg["data.path"]),
            str(cfg["data.label_column"]),
            normalize="none",
        )
        if full.n < n_eval + n_holdout + 1:
            raise ConfigError(
                f"csv dataset has {full.n} rows; needs more than "
                f"{n_eval + n_holdout} for the requested splits"
            )
        perm = stream.generator(_SPLIT).permutation(full.n)
        full = full.subset(perm)
        if str(cfg["data.normalize"]) == "per-feature-standardize":
            train_part = full.features[n_eval + n_holdout :]
            stats = standardize_stats(train_part)
            features = full.features.copy()
            mean, std = stats
            features -= mean
            nonzero = std > 0
            features[:, nonzero] /= std[nonzero]
            features[:, ~nonzero] = 0.0
            full = Dataset(features, full.labels, full.name)
    else:
        total = n + n_eval + n_holdout
        full = synth_dataset(
            str(cfg["data.kind"]), _synth_params(cfg, total), stream.generator(_DATA)
        )

    eval_set = full.subset(np.arange(n_eval))
    if n_holdout:
        aux = full.subset(np.arange(n_eval, n_eval + n_holdout))
    else:
        aux_rng = stream.generator(_AUX)
        aux_features = aux_rng.standard_normal((m_aux, full.d))
        aux_labels = np.zeros(m_aux, dtype=np.int64)
        aux = Dataset(aux_features, aux_labels, name="synthetic-aux")
    private = full.subset(np.arange(n_eval + n_holdout, full.n))

    kind = str(cfg["model.kind"])
    if kind == "linear":
        output_dim = 1
    elif np.issubdtype(full.labels.dtype, np.integer):
        output_dim = int(full.labels.max()) + 1
        if cfg["data.kind"] != "csv":
            output_dim = max(output_dim, int(cfg["data.classes"]))
    else:
        raise ConfigError("classification model requires integer labels")
    model = init_model(
        kind,
        private.d,
        output_dim,
        int(cfg["model.hidden_dim"]),
        rng=stream.generator(_INIT),
        scale=float(cfg["model.init_scale"]),
    )
    return TaskBundle(model=model, private=private, eval=eval_set, aux=aux)


def _train_config(cfg: RunConfig, run: RunSpec, task: TaskBundle) -> TrainConfig:
    sigma_override = float(cfg["privacy.sigma_override"])
    gep_cfg = GepConfig(
        k=run.k,
        m=run.m,
        t=int(cfg["gep.t"]),
        s1=float(cfg["gep.s1"]),
        s2=float(cfg["gep.s2"]),
        release_mode=str(cfg["gep.release_mode"]),
        basis_mode=str(cfg["gep.basis_mode"]),
    )
    return TrainConfig(
        model=task.model,
        gep=gep_cfg,
        budget=DpBudget(run.epsilon, float(cfg["privacy.delta"])),
        steps=int(cfg["train.steps"]),
        aux_data=task.aux,
        method=run.method,
        batch=str(cfg["train.batch"]),
        q=float(cfg["train.q"]),
        lr=float(cfg["train.lr"]),
        momentum=float(cfg["train.momentum"]),
        weight_decay=float(cfg["train.weight_decay"]),
        lr_decay=bool(cfg["train.lr_decay"]),
        seed=run.seed,
        aux_label_mode=(
            "fixed" if cfg["aux.source"] == "heldout-correct" else "random-each-step"
        ),
        sigma_override=None if sigma_override < 0 else sigma_override,
        track_spectra=bool(cfg["train.track_spectra"]),
    )


def _summary_table(results: list[dict]) -> str:
    """Rows: method x k; columns: epsilon; cells: mean +/- std accuracy."""
    cells: dict[tuple[str, int], dict[float, list[float]]] = {}
    for res in results:
        key = (res["method"], res["k"])
        cells.setdefault(key, {}).setdefault(res["epsilon"], []).append(
            res["final_accuracy"]
        )
    epsilons = sorted({res["epsilon"] for res in results})
    multiple_k = len({k for _, k in cells}) > 1
    lines = []
    header = ["method".ljust(18)] + [f"eps={eps:g}".ljust(18) for eps in epsilons]
    lines.append("".join(header))
    for method, k in sorted(cells):
        label = f"{method} (k={k})" if multiple_k else method
        row = [label.ljust(18)]
        for eps in epsilons:
            accs = cells[(method, k)].get(eps)
            if accs is None:
                row.append("-".ljust(18))
            elif any(math.isnan(a) for a in accs):
                row.append("n/a".ljust(18))
            else:
                row.append(
                    f"{np.mean(accs):.3f} +/- {np.std(accs):.3f}".ljust(18)
                )
        lines.append("".join(row))
    return "\n".join(lines)


def train_command(
    config_path: str,
    seed: int | None = None,
    out: str | None = None,
    method: str | None = None,
) -> int:
    """Run every sweep point of a configuration and write metrics + summary."""
    try:
        cfg = load_config(config_path)
        overrides: dict[str, object] = {}
        if seed is not None:
            overrides["seeds"] = (int(seed),)
        if out is not None:
            overrides["out"] = out
        if method is not None:
            overrides["method"] = (method,)
        if overrides:
            cfg = cfg.updated(overrides)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    out_dir = str(cfg["out"])
    os.makedirs(out_dir, exist_ok=True)
    runs = expand_runs(cfg)
    results = []
    try:
        for run in runs:
            task = build_task(cfg.updated({"aux.m": run.m}), run.m)
            train_cfg = _train_config(cfg, run, task)
            model, steps = dp_train(train_cfg, task.private, task.eval)
            rows = [_record(run, step) for step in steps]
            path = os.path.join(out_dir, f"{run.run_id}.metrics.jsonl")
            write_metrics(path, rows)
            final = steps[-1] if steps else None
            results.append(
                {
                    "method": run.method,
                    "seed": run.seed,
                    "k": run.k,
                    "m": run.m,
                    "epsilon": run.epsilon,
                    "final_accuracy": final.eval_accuracy if final else math.nan,
                    "final_eval_loss": final.eval_loss if final else math.nan,
                    "epsilon_spent": final.epsilon_spent if final else 0.0,
                    "metrics_path": path,
                }
            )
            print(f"run {run.run_id}: wrote {len(rows)} steps to {path}")
    except CalibrationError as err:
        print(f"calibration failure: {err}", file=sys.stderr)
        return 1
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    summary = _summary_table(results)
    summary_path = os.path.join(out_dir, "summary.txt")
    with open(summary_path, "w", encoding="utf-8") as handle:
        handle.write(summary + "\n")
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as handle:
        json.dump(results, handle, indent=2)
        handle.write("\n")
    print(summary)
    return 0


def accountant_command(
    eps: float, delta: float, steps: int, q: float = 1.0, mode: str = "closed"
) -> int:
    """Print a calibrated noise multiplier and its certificate."""
    try:
        budget = DpBudget(eps, delta)
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    if mode == "closed":
        if q != 1.0:
            print("config error: closed mode assumes full batches (q = 1)", file=sys.stderr)
            return 2
        try:
            sigma = calibrate_sigma_closed_form(budget, steps)
        except ValueError as err:
            print(f"{err}", file=sys.stderr)
            return 2
        # The closed form covers two releases per step; verify by composing.
        orders = default_orders(budget, include_analytic=True)
        curve = rdp_scale(gaussian_curve(orders, 1.0, sigma), 2 * steps)
        spent, order = rdp_to_dp(curve, delta)
        print(f"closed-form sigma = {sigma:.6f} (per-release multiplier)")
        print(
            f"verification: composing {2 * steps} releases at sigma={sigma:.6f} "
            f"spends epsilon = {spent:.6f} <= {eps:g} at order {order:.4f}"
        )
        return 0

    if mode != "search":
        print(f"config error: unknown mode {mode!r}", file=sys.stderr)
        return 2
    try:
        sigma = calibrate_sigma_search(budget, q, steps)
    except CalibrationError as err:
        print(f"calibration failure: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    spent, order = epsilon_for_sigma(sigma, delta, q, steps)
    print(f"searched sigma = {sigma:.6f} (per-step multiplier, q={q:g})")
    print(
        f"verification: {steps} subsampled releases at sigma={sigma:.6f} "
        f"spend epsilon = {spent:.6f} <= {eps:g} at order {order:.4f}"
    )
    return 0


def _bench_case(m: int, k: int, p: int, groups: int, rng: np.random.Generator) -> dict:
    lengths = [p // groups] * groups
    lengths[-1] += p - sum(lengths)
    counts = allocate_basis_counts(lengths, k)
    anchor = rng.standard_normal((m, p))
    offset = 0
    group_list = []
    for i, (length, k_g) in enumerate(zip(lengths, counts)):
        group_list.append(ParamGroup(f"g{i}", offset, length, k_g))
        offset += length
    layout = GroupLayout(tuple(group_list))
    cfg = GepConfig(k=k, m=m, t=1, s1=1.0, s2=1.0)
    with count_flops() as counter:
        build_anchor_basis(anchor, layout, cfg, rng)
    model_cost = 2 * m * k * p / groups + p * k * k / (groups * groups)
    return {
        "groups": groups,
        "measured": counter.macs,
        "model": model_cost,
        "ratio": counter.macs / model_cost,
    }


def bench_command(
    m: int = 100, k: int = 20, p: int = 1000, groups: tuple[int, ...] = (1, 2, 5)
) -> int:
    """Compare measured multiply-adds of one power iteration to the cost model.

    The model is ``2mkp/g + p k^2 / g^2`` for ``g`` evenly split groups;
    measured counts include orthonormalization, so ratios up to 1.5 pass.
    """
    rng = np.random.default_rng(0)
    print(f"power iteration cost check: m={m} k={k} p={p}")
    print("groups  measured      model         ratio")
    ok = True
    for g in groups:
        case = _bench_case(m, k, p, g, rng)
        in_band = 0.9 <= case["ratio"] <= 1.5
        ok = ok and in_band
        flag = "" if in_band else "  <-- outside [0.9, 1.5]"
        print(
            f"{case['groups']:<7d} {case['measured']:<13d} "
            f"{case['model']:<13.0f} {case['ratio']:.3f}{flag}"
        )
    return 0 if ok else 1


def project_error_command(
    seed: int = 0,
    ks: tuple[int, ...] = (2, 5, 10, 20, 40),
    n: int = 400,
    input_dim: int = 199,
    m_aux: int = 100,
    task_kind: str = "mixture",
) -> int:
    """Projection-error sweeps over basis modes, auxiliary sources, and m.

    ``task_kind="mixture"`` uses the partially low-rank classification
    task; ``"lowrank"`` uses the exactly low-rank regression task, where a
    power basis of sufficient size drives the error to numerical zero.
    """
    stream = RandomStream(seed)
    if task_kind == "lowrank":
        bundle = lowrank_regression_task(
            seed, n=n, input_dim=input_dim, rank=5, tail=0.0, m_aux=2 * m_aux
        )
        model = bundle.model
    elif task_kind == "mixture":
        bundle = logistic_mixture_task(
            seed, n=n, input_dim=input_dim, m_aux=2 * m_aux, subspace_dim=8
        )
        model = init_model(
            bundle.model.kind,
            bundle.model.input_dim,
            bundle.model.output_dim,
            rng=stream.generator(9),
            scale=0.1,
        )
    else:
        print(f"config error: unknown task {task_kind!r}", file=sys.stderr)
        return 2
    grads = per_sample_gradients(model, bundle.private)

    rng_labels = stream.generator(10)
    aux_pool = bundle.aux  # 2 * m_aux rows; the base table uses the first m_aux
    if model.kind == "linear":
        random_labels: np.ndarray = rng_labels.standard_normal(aux_pool.n)
        synthetic_labels: np.ndarray = rng_labels.standard_normal(m_aux)
    else:
        random_labels = rng_labels.integers(0, model.output_dim, size=aux_pool.n)
        synthetic_labels = rng_labels.integers(0, model.output_dim, size=m_aux)
    relabeled_pool = aux_pool.with_labels(random_labels)
    base = np.arange(m_aux)
    sources = {
        "heldout-random": relabeled_pool.subset(base),
        "heldout-correct": aux_pool.subset(base),
        "synthetic": Dataset(
            stream.generator(11).standard_normal((m_aux, bundle.private.d)),
            synthetic_labels,
            name="synthetic-aux",
        ),
    }

    print(f"projection error rate ({task_kind}: n={n}, p={model.p}, m={m_aux})")
    print("basis   source            " + "".join(f"k={k}".ljust(12) for k in ks))
    for basis_mode in ("power", "random"):
        for source_name, aux in sources.items():
            anchor_grads = per_sample_gradients(model, aux)
            row = [basis_mode.ljust(8) + source_name.ljust(18)]
            for k in ks:
                layout = make_group_layout(model, k)
                cfg = GepConfig(k=k, m=m_aux, t=5, s1=1.0, s2=1.0, basis_mode=basis_mode)
                basis = build_anchor_basis(
                    anchor_grads, layout, cfg, stream.generator(12, k)
                )
                rate = projection_error_rate(grads, basis)
                row.append(f"{rate:.4g}".ljust(12))
            print("".join(row))

    # anchor-count sweep at the middle k: error should not grow with m
    k_mid = ks[len(ks) // 2]
    print(f"\nanchor-count sweep at k={k_mid} (power basis, heldout-random)")
    print("m        error")
    for m_frac in (0.5, 1.0, 2.0):
        m_used = min(relabeled_pool.n, max(k_mid, int(round(m_aux * m_frac))))
        aux_m = relabeled_pool.subset(np.arange(m_used))
        anchor_grads = per_sample_gradients(model, aux_m)
        layout = make_group_layout(model, k_mid)
        cfg = GepConfig(k=k_mid, m=m_used, t=5, s1=1.0, s2=1.0)
        basis = build_anchor_basis(anchor_grads, layout, cfg, stream.generator(15, m_used))
        rate = projection_error_rate(grads, basis)
        print(f"{m_used:<8d} {rate:.4g}")
    return 0


def report_command(out_dir: str) -> int:
    """Summarize every metrics file in a directory."""
    if not os.path.isdir(out_dir):
        print(f"no such directory: {out_dir}", file=sys.stderr)
        return 1
    paths = sorted(
        os.path.join(out_dir, name)
        for name in os.listdir(out_dir)
        if name.endswith(".metrics.jsonl")
    )
    if not paths:
        print(f"no metrics files found in {out_dir}", file=sys.stderr)
        return 1
    results = []
    for path in paths:
        rows = read_metrics(path)
        if not rows:
            continue
        final = rows[-1]
        run_id = final["run_id"]
        k = _parse_run_field(run_id, "k")
        eps = _parse_run_field(run_id, "eps")
        results.append(
            {
                "method": final["method"],
                "seed": final["seed"],
                "k": int(k) if k is not None else 0,
                "epsilon": float(eps) if eps is not None else math.nan,
                "final_accuracy": final["eval_accuracy"],
            }
        )
    print(_summary_table(results))
    return 0


def _parse_run_field(run_id: str, field: str) -> str | None:
    for part in run_id.split("-"):
        if part.startswith(field):
            value = part[len(field):]
            try:
                float(value)
            except ValueError:
                continue
            return value
    return None
