"""Per-sample gradients, parameter layouts, and evaluation for small models.

Three model families are supported, all over a flat parameter vector:

* ``linear``   -- least-squares regression with an augmented bias feature,
  per-sample loss ``0.5 * (x.w - y)^2``;
* ``logistic`` -- softmax regression (>= 2 classes) with augmented bias,
  per-sample cross-entropy;
* ``mlp``      -- one tanh hidden layer followed by softmax, explicit bias
  vectors.

The tanh activation keeps every loss smooth, so gradients can be checked
against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset

__all__ = [
    "ModelSpec",
    "ParamGroup",
    "GroupLayout",
    "param_count",
    "init_model",
    "per_sample_gradients",
    "evaluate",
    "allocate_basis_counts",
    "make_group_layout",
]

MODEL_KINDS = ("linear", "logistic", "mlp")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A model family plus its flat parameter vector."""

    kind: str
    input_dim: int
    output_dim: int
    hidden_dim: int = 0
    theta: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        expected = param_count(
            self.kind, self.input_dim, self.output_dim, self.hidden_dim
        )
        theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        if theta.size != expected:
            raise ValueError(
                f"theta has {theta.size} entries, {self.kind} model needs {expected}"
            )
        if not np.all(np.isfinite(theta)):
            raise ValueError("theta contains non-finite entries")
        object.__setattr__(self, "theta", theta)

    @property
    def p(self) -> int:
        return self.theta.size

    def with_theta(self, theta: np.ndarray) -> "ModelSpec":
        return replace(self, theta=theta)


def param_count(kind: str, input_dim: int, output_dim: int, hidden_dim: int = 0) -> int:
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    if kind == "linear":
        if output_dim != 1:
            raise ValueError("linear regression is scalar (output_dim must be 1)")
        return input_dim + 1
    if kind == "logistic":
        if output_dim < 2:
            raise ValueError("logistic model needs at least 2 classes")
        return output_dim * (input_dim + 1)
    if kind == "mlp":
        if output_dim < 2:
            raise ValueError("mlp model needs at least 2 classes")
        if hidden_dim < 1:
            raise ValueError("mlp model needs hidden_dim >= 1")
        return hidden_dim * input_dim + hidden_dim + output_dim * hidden_dim + output_dim
    raise ValueError(f"unknown model kind {kind!r}")


def init_model(
    kind: str,
    input_dim: int,
    output_dim: int,
    hidden_dim: int = 0,
    rng: np.random.Generator | None = None,
    scale: float = 0.0,
) -> ModelSpec:
    """Build a model with zero or scaled-Gaussian initial parameters.

    For the MLP a positive ``scale`` draws fan-in-scaled Gaussian weights
    (biases start at zero); zero parameters would freeze its first layer.
    """
    p = param_count(kind, input_dim, output_dim, hidden_dim)
    if scale == 0.0:
        theta = np.zeros(p)
    else:
        if rng is None:
            raise ValueError("random initialization needs a generator")
        if kind == "mlp":
            w1 = rng.standard_normal((hidden_dim, input_dim)) * (
                scale / math.sqrt(input_dim)
            )
            w2 = rng.standard_normal((output_dim, hidden_dim)) * (
                scale / math.sqrt(hidden_dim)
            )
            theta = np.concatenate(
                [w1.ravel(), np.zeros(hidden_dim), w2.ravel(), np.zeros(output_dim)]
            )
        else:
            theta = rng.standard_normal(p) * scale
    return ModelSpec(kind, input_dim, output_dim, hidden_dim, theta)


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_batch(model: ModelSpec, data: Dataset) -> None:
    if data.n == 0:
        raise ValueError("batch is empty")
    if data.d != model.input_dim:
        raise ValueError(
            f"batch has {data.d} features, model expects {model.input_dim}"
        )


def _class_labels(model: ModelSpec, data: Dataset) -> np.ndarray:
    y = np.asarray(data.labels)
    if not np.issubdtype(y.dtype, np.integer):
        rounded = np.rint(y)
        if not np.allclose(y, rounded):
            raise ValueError("classification labels must be integers")
        y = rounded.astype(np.int64)
    if y.min() < 0 or y.max() >= model.output_dim:
        raise ValueError(
            f"labels must lie in [0, {model.output_dim}), got range "
            f"[{y.min()}, {y.max()}]"
        )
    return y


def _mlp_unpack(model: ModelSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    d, h, c = model.input_dim, model.hidden_dim, model.output_dim
    theta = model.theta
    i = 0
    w1 = theta[i : i + h * d].reshape(h, d)
    i += h * d
    b1 = theta[i : i + h]
    i += h
    w2 = theta[i : i + c * h].reshape(c, h)
    i += c * h
    b2 = theta[i : i + c]
    return w1, b1, w2, b2


def per_sample_gradients(model: ModelSpec, batch: Dataset) -> np.ndarray:
    """Gradient of each sample's loss w.r.t. the flat parameters.

    Returns an ``n x p`` matrix whose row mean equals the gradient of the
    mean batch loss.
    """
    _check_batch(model, batch)
    x = batch.features
    n = batch.n

    if model.kind == "linear":
        x1 = _augment(x)
        y = np.asarray(batch.labels, dtype=np.float64)
        resid = x1 @ model.theta - y
        return resid[:, None] * x1

    if model.kind == "logistic":
        x1 = _augment(x)
        y = _class_labels(model, batch)
        c = model.output_dim
        w = model.theta.reshape(c, model.input_dim + 1)
        probs = _softmax(x1 @ w.T)
        delta = probs.copy()
        delta[np.arange(n), y] -= 1.0
        grads = np.einsum("nc,nd->ncd", delta, x1)
        return grads.reshape(n, -1)

    # mlp
    y = _class_labels(model, batch)
    w1, b1, w2, b2 = _mlp_unpack(model)
    hidden = np.tanh(x @ w1.T + b1)
    probs = _softmax(hidden @ w2.T + b2)
    delta2 = probs.copy()
    delta2[np.arange(n), y] -= 1.0
    grad_w2 = np.einsum("nc,nh->nch", delta2, hidden)
    delta1 = (delta2 @ w2) * (1.0 - hidden * hidden)
    grad_w1 = np.einsum("nh,nd->nhd", delta1, x)
    return np.concatenate(
        [grad_w1.reshape(n, -1), delta1, grad_w2.reshape(n, -1), delta2], axis=1
    )


def evaluate(model: ModelSpec, data: Dataset) -> tuple[float, float]:
    """Mean loss and accuracy; accuracy is NaN for regression."""
    _check_batch(model, data)
    x = data.features

    if model.kind == "linear":
        y = np.asarray(data.labels, dtype=np.float64)
        resid = _augment(x) @ model.theta - y
        return float(0.5 * np.mean(resid * resid)), math.nan

    y = _class_labels(model, data)
    if model.kind == "logistic":
        w = model.theta.reshape(model.output_dim, model.input_dim + 1)
        logits = _augment(x) @ w.T
    else:
        w1, b1, w2, b2 = _mlp_unpack(model)
        logits = np.tanh(x @ w1.T + b1) @ w2.T + b2
    log_probs = _log_softmax(logits)
    loss = float(-np.mean(log_probs[np.arange(data.n), y]))
    accuracy = float(np.mean(np.argmax(logits, axis=1) == y))
    return loss, accuracy


@dataclass(frozen=True)
class ParamGroup:
    """A contiguous block of the flat parameter vector with a basis quota."""

    name: str
    offset: int
    length: int
    k_alloc: int


@dataclass(frozen=True)
class GroupLayout:
    """An ordered partition of the parameters into basis groups."""

    groups: tuple[ParamGroup, ...]

    def __post_init__(self) -> None:
        offset = 0
        for g in self.groups:
            if g.offset != offset:
                raise ValueError("groups must tile the parameter vector in order")
            if g.length < 1 or g.k_alloc < 1:
                raise ValueError("groups need positive length and basis quota")
            if g.k_alloc > g.length:
                raise ValueError(
                    f"group {g.name!r} allocates {g.k_alloc} basis vectors "
                    f"but spans only {g.length} parameters"
                )
            offset += g.length

    @property
    def dim(self) -> int:
        return sum(g.length for g in self.groups)

    @property
    def total_k(self) -> int:
        return sum(g.k_alloc for g in self.groups)


def allocate_basis_counts(lengths: list[int], k: int) -> list[int]:
    """Split a basis quota across groups proportionally to sqrt(size).

    Largest-remainder rounding keeps the total exactly ``k``; every group
    receives at least one vector and never more than its dimension.
    """
    n_groups = len(lengths)
    if n_groups == 0:
        raise ValueError("need at least one group")
    if any(length < 1 for length in lengths):
        raise ValueError("group lengths must be positive")
    if k < n_groups:
        raise ValueError(f"k={k} is below the number of groups ({n_groups})")
    total = sum(lengths)
    if k > total:
        raise ValueError(f"k={k} exceeds the total parameter count ({total})")

    weights = np.sqrt(np.asarray(lengths, dtype=np.float64))
    quota = k * weights / weights.sum()
    alloc = np.floor(quota).astype(np.int64)
    remainder = quota - alloc
    # hand out the leftover units by largest fractional part (stable ties)
    for i in np.argsort(-remainder, kind="stable")[: k - int(alloc.sum())]:
        alloc[i] += 1
    # enforce the [1, length] bounds, shifting units between groups
    caps = np.asarray(lengths, dtype=np.int64)
    alloc = np.minimum(alloc, caps)
    while alloc.sum() < k:
        room = (caps - alloc).astype(np.float64)
        room[room <= 0] = -np.inf
        alloc[int(np.argmax(room + remainder * 1e-9))] += 1
    while np.any(alloc < 1):
        need = int(np.argmin(alloc))
        donors = alloc.copy()
        donors[need] = -1
        donor = int(np.argmax(donors))
        if alloc[donor] <= 1:
            raise ValueError("cannot give every group a basis vector")
        alloc[donor] -= 1
        alloc[need] += 1
    return [int(a) for a in alloc]


def _natural_blocks(model: ModelSpec) -> list[tuple[str, int, int]]:
    d, h, c = model.input_dim, model.hidden_dim, model.output_dim
    if model.kind == "linear":
        return [("coef", 0, d + 1)]
    if model.kind == "logistic":
        return [("coef", 0, c * (d + 1))]
    first = h * d + h
    return [("layer1", 0, first), ("layer2", first, c * h + c)]


def make_group_layout(model: ModelSpec, k: int) -> GroupLayout:
    """Partition the model's parameters into per-layer basis groups.

    Weight matrices and their bias vectors share a group; the quota ``k``
    is split across groups by the square-root rule.
    """
    blocks = _natural_blocks(model)
    counts = allocate_basis_counts([length for _, _, length in blocks], k)
    groups = tuple(
        ParamGroup(name, offset, length, k_g)
        for (name, offset, length), k_g in zip(blocks, counts)
    )
    return GroupLayout(groups)
