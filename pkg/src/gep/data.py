"""Dataset container, CSV ingestion, and synthetic task generators."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .linalg import orthonormalize_rows

__all__ = [
    "Dataset",
    "CsvParseError",
    "ingest_csv",
    "synth_dataset",
    "standardize_stats",
    "train_eval_split",
]

SYNTH_KINDS = (
    "lowrank-gradient-task",
    "gaussian-mixture",
    "separable",
    "split-signal",
)


class CsvParseError(ValueError):
    """CSV ingestion failure, with row/column context in the message."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """An in-memory feature matrix with labels.

    Labels are int64 for classification and float64 for regression; the row
    order is part of the dataset identity (ingestion preserves file order).
    """

    features: np.ndarray
    labels: np.ndarray
    name: str = ""

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-d array")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain non-finite entries")
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ValueError(
                f"got {labels.shape[0] if labels.ndim == 1 else 'non-vector'} labels "
                f"for {features.shape[0]} rows"
            )
        if not np.issubdtype(labels.dtype, np.integer):
            labels = np.asarray(labels, dtype=np.float64)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.name)

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        return Dataset(self.features, labels, self.name)


def standardize_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and standard deviation for standardization."""
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    return mean, std


def _apply_standardize(
    features: np.ndarray, stats: tuple[np.ndarray, np.ndarray]
) -> np.ndarray:
    mean, std = stats
    out = features - mean
    nonzero = std > 0
    out[:, nonzero] /= std[nonzero]
    out[:, ~nonzero] = 0.0  # constant columns carry no information
    return out


def ingest_csv(
    path: str,
    label_column: str,
    normalize: str = "none",
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> Dataset:
    """Load a headered CSV file into a Dataset.

    All non-label columns are parsed as float features.  With
    ``normalize="per-feature-standardize"`` features are centered and
    scaled, by default with this file's own statistics; pass ``stats``
    (from :func:`standardize_stats` on the training split) to reuse
    training statistics for a held-out file.  Integer-valued label columns
    become classification labels.
    """
    if normalize not in ("none", "per-feature-standardize"):
        raise ValueError(f"unknown normalize mode {normalize!r}")
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise CsvParseError(
                f"{path}: label column {label_column!r} not found in header {header}"
            )
        label_idx = header.index(label_column)

        rows: list[list[float]] = []
        labels: list[float] = []
        for row_num, row in enumerate(reader, start=2):
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if len(row) != len(header):
                raise CsvParseError(
                    f"{path}: row {row_num} has {len(row)} cells, expected {len(header)}"
                )
            parsed = []
            for col_idx, cell in enumerate(row):
                try:
                    value = float(cell)
                except ValueError:
                    raise CsvParseError(
                        f"{path}: row {row_num}, column {header[col_idx]!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
                parsed.append(value)
            labels.append(parsed.pop(label_idx))
            rows.append(parsed)

    if not rows:
        raise CsvParseError(f"{path}: no data rows")
    features = np.asarray(rows, dtype=np.float64)
    label_arr = np.asarray(labels, dtype=np.float64)
    if np.allclose(label_arr, np.rint(label_arr)):
        label_arr = np.rint(label_arr).astype(np.int64)

    if normalize == "per-feature-standardize":
        features = _apply_standardize(
            features, stats if stats is not None else standardize_stats(features)
        )
    return Dataset(features, label_arr, name=path)


def synth_dataset(kind: str, params: dict, rng: np.random.Generator) -> Dataset:
    """Generate a synthetic dataset; fully deterministic given the generator.

    Kinds:

    * ``lowrank-gradient-task``: regression features spanning a
      ``rank - 1`` dimensional subspace with continuous nonzero labels, so
      the per-sample gradients of a zero-initialized linear model occupy an
      exact ``rank``-dimensional subspace (features plus the bias
      direction).  ``tail > 0`` adds isotropic feature noise, turning the
      gradients approximately low-rank instead.
    * ``gaussian-mixture``: ``classes`` spherical clusters for
      classification; ``subspace_dim > 0`` places the centers in a random
      low-dimensional subspace.
    * ``separable``: binary labels from a random hyperplane with a margin
      enforced by resampling.
    * ``split-signal``: binary labels driven by two logits: a strong one
      along a low-dimensional feature spike (visible to covariance-based
      subspace estimates) and a weak one along a dense direction with no
      feature spike (invisible to them).  Estimators that discard what
      falls outside the estimated subspace hit an accuracy floor here.
    """
    if kind == "lowrank-gradient-task":
        return _lowrank_gradient_task(params, rng)
    if kind == "gaussian-mixture":
        return _gaussian_mixture(params, rng)
    if kind == "separable":
        return _separable(params, rng)
    if kind == "split-signal":
        return _split_signal(params, rng)
    raise ValueError(f"unknown synthetic dataset kind {kind!r}")


def _lowrank_gradient_task(params: dict, rng: np.random.Generator) -> Dataset:
    n = int(params.get("n", 200))
    d = int(params.get("input_dim", 99))
    rank = int(params.get("rank", 5))
    tail = float(params.get("tail", 0.0))
    label_mode = str(params.get("label_mode", "planted"))
    if rank < 2 or rank - 1 > d:
        raise ValueError(f"rank must lie in [2, input_dim + 1], got {rank}")
    if n < 1:
        raise ValueError("n must be >= 1")
    directions, got = orthonormalize_rows(rng.standard_normal((rank - 1, d)))
    if got != rank - 1:
        raise RuntimeError("random directions collapsed; should not happen")
    latent = rng.standard_normal((n, rank - 1))
    features = latent @ directions
    if tail > 0:
        features = features + tail * rng.standard_normal((n, d))
    if label_mode == "planted":
        # labels carry a linear signal, so the mean gradient at the zero
        # model is systematic rather than an average of random signs
        weights = rng.standard_normal(rank - 1)
        labels = latent @ weights + 0.1 * rng.standard_normal(n)
    elif label_mode == "random":
        # continuous labels bounded away from zero keep every gradient active
        raw = rng.standard_normal(n)
        labels = np.sign(raw) * (0.5 + np.abs(raw))
    else:
        raise ValueError(f"unknown label mode {label_mode!r}")
    return Dataset(features, labels, name="lowrank-gradient-task")


def _gaussian_mixture(params: dict, rng: np.random.Generator) -> Dataset:
    n = int(params.get("n", 1000))
    d = int(params.get("input_dim", 20))
    classes = int(params.get("classes", 10))
    sep = float(params.get("sep", 3.0))
    noise = float(params.get("noise", 1.0))
    subspace_dim = int(params.get("subspace_dim", 0))
    if classes < 2:
        raise ValueError("gaussian-mixture needs at least 2 classes")
    if subspace_dim:
        if subspace_dim > d:
            raise ValueError("subspace_dim cannot exceed input_dim")
        axes, _ = orthonormalize_rows(rng.standard_normal((subspace_dim, d)))
        centers = rng.standard_normal((classes, subspace_dim)) @ axes * sep
    else:
        centers = rng.standard_normal((classes, d)) * sep
    labels = rng.integers(0, classes, size=n)
    features = centers[labels] + noise * rng.standard_normal((n, d))
    return Dataset(features, labels.astype(np.int64), name="gaussian-mixture")


def _split_signal(params: dict, rng: np.random.Generator) -> Dataset:
    n = int(params.get("n", 2000))
    d = int(params.get("input_dim", 199))
    subdim = int(params.get("subspace_dim", 6))
    sep = float(params.get("sep", 3.0))
    cluster_weight = float(params.get("cluster_weight", 2.0))
    dense_weight = float(params.get("dense_weight", 2.0))
    feature_scale = float(params.get("feature_scale", 1.0))
    if subdim < 1 or subdim > d:
        raise ValueError("subspace_dim must lie in [1, input_dim]")
    if feature_scale <= 0:
        raise ValueError("feature_scale must be positive")
    axes, _ = orthonormalize_rows(rng.standard_normal((subdim, d)))
    latent = rng.standard_normal((n, subdim))
    features = sep * latent @ axes + rng.standard_normal((n, d))
    # label signal: one direction in the spiked subspace, one dense
    w_sub = rng.standard_normal(subdim)
    w_sub /= np.linalg.norm(w_sub)
    dense = rng.standard_normal(d)
    dense /= np.linalg.norm(dense)
    logits = cluster_weight * (latent @ w_sub) + dense_weight * (features @ dense)
    labels = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(np.int64)
    # scaling after label assignment leaves the classification problem
    # unchanged while setting the gradient magnitude against fixed
    # clipping thresholds
    return Dataset(feature_scale * features, labels, name="split-signal")


def _separable(params: dict, rng: np.random.Generator) -> Dataset:
    n = int(params.get("n", 1000))
    d = int(params.get("input_dim", 20))
    margin = float(params.get("margin", 1.0))
    if margin <= 0:
        raise ValueError("margin must be positive")
    normal = rng.standard_normal(d)
    normal /= np.linalg.norm(normal)
    features = np.empty((n, d))
    labels = np.empty(n, dtype=np.int64)
    filled = 0
    while filled < n:
        draw = rng.standard_normal((2 * (n - filled), d))
        proj = draw @ normal
        keep = np.abs(proj) >= margin
        take = min(int(keep.sum()), n - filled)
        rows = draw[keep][:take]
        features[filled : filled + take] = rows
        labels[filled : filled + take] = (rows @ normal > 0).astype(np.int64)
        filled += take
    return Dataset(features, labels, name="separable")


def train_eval_split(
    data: Dataset, eval_fraction: float, rng: np.random.Generator
) -> tuple[Dataset, Dataset]:
    """Shuffle and split into train/eval parts."""
    if not 0 < eval_fraction < 1:
        raise ValueError("eval_fraction must lie in (0, 1)")
    perm = rng.permutation(data.n)
    n_eval = max(1, int(math.floor(data.n * eval_fraction)))
    if n_eval >= data.n:
        raise ValueError("eval split would consume the whole dataset")
    return data.subset(perm[n_eval:]), data.subset(perm[:n_eval])
