"""Private gradient releases built on anchor-subspace embeddings.

One release turns a matrix of per-sample gradients into a single private
estimate of the batch gradient:

1. project each gradient onto an orthonormal basis estimated from
   non-sensitive anchor gradients, giving a low-dimensional embedding and
   a (typically small-norm) residual;
2. clip embedding rows at one threshold and residual rows at another,
   which fixes the sensitivity of their sums;
3. perturb the two sums with Gaussian noise and recombine.

Releasing both parts keeps the estimate unbiased (up to clipping); the
``bgep`` variant drops the residual and trades a systematic error for less
noise, and ``gp`` is the classic full-dimensional baseline.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .linalg import (
    clip_rows,
    gaussian_noise,
    orthonormalize_rows,
    power_iteration_basis,
    project_split,
    row_norms,
)
from .models import GroupLayout, ParamGroup

__all__ = [
    "GepConfig",
    "AnchorBasis",
    "PrivateRelease",
    "single_group_layout",
    "build_anchor_basis",
    "gep_release",
    "bgep_release",
    "gp_release",
    "projection_error_rate",
]

RELEASE_MODES = ("joint", "separate")
BASIS_MODES = ("power", "random")


@dataclass(frozen=True)
class GepConfig:
    """Anchor-subspace release configuration.

    ``sigma`` is the noise multiplier on a unit-sensitivity release.  In
    ``separate`` mode each of the two sums is perturbed at ``sigma`` times
    its own threshold; in ``joint`` mode the two sums are treated as one
    normalized, concatenated release of sensitivity sqrt(2), which works
    out to per-block noise ``sigma * sqrt(2)`` times the threshold.  The
    two modes describe the same mechanism under matched calibration: a
    joint multiplier ``s`` equals a separate multiplier ``s * sqrt(2)``.
    """

    k: int
    m: int
    t: int = 1
    s1: float = 10.0
    s2: float = 2.0
    release_mode: str = "joint"
    basis_mode: str = "power"
    sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.s1 <= 0 or self.s2 <= 0:
            raise ValueError("clipping thresholds must be positive")
        if self.release_mode not in RELEASE_MODES:
            raise ValueError(f"unknown release mode {self.release_mode!r}")
        if self.basis_mode not in BASIS_MODES:
            raise ValueError(f"unknown basis mode {self.basis_mode!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be calibrated to a value >= 0")


@dataclass(frozen=True, eq=False)
class PrivateRelease:
    """A perturbed gradient estimate plus the diagnostics that produced it.

    ``projection_error_rate`` and the clip fractions are computed from the
    raw gradients before noise; they are experiment diagnostics and are
    NOT covered by the privacy guarantee of ``v_tilde``.
    """

    v_tilde: np.ndarray
    w_tilde: np.ndarray | None
    r_tilde: np.ndarray | None
    k_effective: int
    clip_fraction_s1: float
    clip_fraction_s2: float
    projection_error_rate: float


class AnchorBasis:
    """Per-group orthonormal bases over a partitioned parameter vector.

    Each parameter group carries its own basis block, so projection and
    reconstruction are block-diagonal: coordinates of one group never mix
    into another group's embedding.
    """

    def __init__(self, layout: GroupLayout, blocks: list[np.ndarray]):
        if len(blocks) != len(layout.groups):
            raise ValueError("need exactly one basis block per group")
        for group, block in zip(layout.groups, blocks):
            if block.ndim != 2 or block.shape[1] != group.length:
                raise ValueError(
                    f"basis block for group {group.name!r} has shape "
                    f"{block.shape}, expected (*, {group.length})"
                )
        self.layout = layout
        self.blocks = [np.asarray(b, dtype=np.float64) for b in blocks]

    @property
    def dim(self) -> int:
        return self.layout.dim

    @property
    def k_effective(self) -> int:
        return sum(b.shape[0] for b in self.blocks)

    def _spans(self) -> list[tuple[ParamGroup, np.ndarray, int]]:
        spans = []
        w_offset = 0
        for group, block in zip(self.layout.groups, self.blocks):
            spans.append((group, block, w_offset))
            w_offset += block.shape[0]
        return spans

    def project(self, g: np.ndarray) -> np.ndarray:
        """Embed rows of ``g`` (n x p) into the basis (n x k_effective)."""
        g = np.asarray(g, dtype=np.float64)
        squeeze = g.ndim == 1
        if squeeze:
            g = g[None, :]
        if g.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} columns, got {g.shape[1]}")
        parts = []
        for group, block, _ in self._spans():
            if block.shape[0] == 0:
                continue
            cols = slice(group.offset, group.offset + group.length)
            w_part, _ = project_split(g[:, cols], block)
            parts.append(w_part)
        if parts:
            w = np.hstack(parts)
        else:
            w = np.zeros((g.shape[0], 0))
        return w[0] if squeeze else w

    def reconstruct(self, w: np.ndarray) -> np.ndarray:
        """Map embeddings back into the full parameter space."""
        w = np.asarray(w, dtype=np.float64)
        squeeze = w.ndim == 1
        if squeeze:
            w = w[None, :]
        if w.shape[1] != self.k_effective:
            raise ValueError(
                f"expected {self.k_effective} embedding columns, got {w.shape[1]}"
            )
        out = np.zeros((w.shape[0], self.dim))
        for group, block, w_offset in self._spans():
            k_g = block.shape[0]
            if k_g == 0:
                continue
            cols = slice(group.offset, group.offset + group.length)
            out[:, cols] = w[:, w_offset : w_offset + k_g] @ block
        return out[0] if squeeze else out

    def split(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Embeddings and residuals of ``g``; residual uses unclipped embeddings."""
        w = self.project(g)
        r = g - self.reconstruct(w) if w.size else np.asarray(g, dtype=np.float64).copy()
        return w, r


def single_group_layout(p: int, k: int, name: str = "all") -> GroupLayout:
    """Layout treating the whole parameter vector as one group."""
    return GroupLayout((ParamGroup(name, 0, p, k),))


def build_anchor_basis(
    anchor_grads: np.ndarray,
    layout: GroupLayout,
    cfg: GepConfig,
    rng: np.random.Generator,
) -> AnchorBasis:
    """Estimate one orthonormal basis per parameter group.

    With ``basis_mode="power"`` each group runs ``cfg.t`` rounds of power
    iteration on its column slice of the anchor gradients; with
    ``"random"`` the blocks are orthonormalized Gaussian draws (the
    random-projection baseline).  The anchor gradients are not needed
    after this call and may be discarded by the caller.
    """
    anchor_grads = np.asarray(anchor_grads, dtype=np.float64)
    if anchor_grads.ndim != 2 or anchor_grads.shape[1] != layout.dim:
        raise ValueError(
            f"anchor gradients have shape {anchor_grads.shape}, expected "
            f"(m, {layout.dim})"
        )
    m = anchor_grads.shape[0]
    max_quota = max(g.k_alloc for g in layout.groups)
    if cfg.basis_mode == "power" and m < max_quota:
        warnings.warn(
            f"only {m} anchor gradients for a basis quota of {max_quota}; "
            "the estimated subspace will be rank deficient",
            RuntimeWarning,
            stacklevel=2,
        )
    blocks = []
    for group in layout.groups:
        cols = slice(group.offset, group.offset + group.length)
        if cfg.basis_mode == "power":
            block = power_iteration_basis(
                anchor_grads[:, cols], group.k_alloc, cfg.t, rng
            )
        else:
            k_g = min(group.k_alloc, group.length)
            block, _ = orthonormalize_rows(rng.standard_normal((k_g, group.length)))
        blocks.append(block)
    return AnchorBasis(layout, blocks)


def _clip_stats(rows: np.ndarray, threshold: float) -> float:
    if rows.shape[0] == 0:
        return math.nan
    return float(np.mean(row_norms(rows) > threshold))


def _raw_error_rate(g: np.ndarray, r: np.ndarray) -> float:
    n = g.shape[0]
    g_bar = g.sum(axis=0) / n
    g_norm = float(np.linalg.norm(g_bar))
    if g_norm == 0.0:
        return math.nan
    return float(np.linalg.norm(r.sum(axis=0) / n)) / g_norm


def gep_release(
    g: np.ndarray,
    basis: AnchorBasis,
    cfg: GepConfig,
    rng: np.random.Generator,
) -> PrivateRelease:
    """Release a private batch-gradient estimate from per-sample gradients.

    Follows the three-stage recipe: split against the anchor basis (the
    residual is taken against the unclipped embedding), clip the embedding
    rows at ``s1`` and residual rows at ``s2``, then perturb the two sums
    and recombine into ``v_tilde = (reconstruct(w_tilde) + r_tilde) / n``.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("per-sample gradients must form a matrix")
    if g.shape[1] != basis.dim:
        raise ValueError(f"gradients have {g.shape[1]} columns, basis spans {basis.dim}")
    n = g.shape[0]
    if n == 0:
        raise ValueError("cannot release an empty batch")

    w, r = basis.split(g)
    w_hat = clip_rows(w, cfg.s1)
    r_hat = clip_rows(r, cfg.s2)
    w_sum = w_hat.sum(axis=0)
    r_sum = r_hat.sum(axis=0)

    block_mult = cfg.sigma * (math.sqrt(2.0) if cfg.release_mode == "joint" else 1.0)
    w_tilde = w_sum + gaussian_noise(w_sum.shape, block_mult * cfg.s1, rng)
    r_tilde = r_sum + gaussian_noise(r_sum.shape, block_mult * cfg.s2, rng)

    if basis.k_effective == 0:
        v_tilde = r_tilde / n
    else:
        v_tilde = (basis.reconstruct(w_tilde) + r_tilde) / n

    return PrivateRelease(
        v_tilde=v_tilde,
        w_tilde=w_tilde,
        r_tilde=r_tilde,
        k_effective=basis.k_effective,
        clip_fraction_s1=_clip_stats(w, cfg.s1),
        clip_fraction_s2=_clip_stats(r, cfg.s2),
        projection_error_rate=_raw_error_rate(g, r),
    )


def bgep_release(
    g: np.ndarray,
    basis: AnchorBasis,
    cfg: GepConfig,
    rng: np.random.Generator,
) -> PrivateRelease:
    """Embedding-only release: cheaper noise, systematically biased.

    Only the clipped embedding sum is perturbed (a single release at
    multiplier ``sigma * s1``, regardless of release mode) and mapped back;
    the residual is dropped, so the estimate converges to the batch
    gradient minus the mean residual rather than the batch gradient.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("per-sample gradients must form a matrix")
    if g.shape[1] != basis.dim:
        raise ValueError(f"gradients have {g.shape[1]} columns, basis spans {basis.dim}")
    n = g.shape[0]
    if n == 0:
        raise ValueError("cannot release an empty batch")

    w, r = basis.split(g)
    w_hat = clip_rows(w, cfg.s1)
    w_sum = w_hat.sum(axis=0)
    w_tilde = w_sum + gaussian_noise(w_sum.shape, cfg.sigma * cfg.s1, rng)
    if basis.k_effective == 0:
        u_tilde = np.zeros(basis.dim)
    else:
        u_tilde = basis.reconstruct(w_tilde) / n

    return PrivateRelease(
        v_tilde=u_tilde,
        w_tilde=w_tilde,
        r_tilde=None,
        k_effective=basis.k_effective,
        clip_fraction_s1=_clip_stats(w, cfg.s1),
        clip_fraction_s2=math.nan,
        projection_error_rate=_raw_error_rate(g, r),
    )


def gp_release(
    g: np.ndarray,
    s: float,
    sigma: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Classic gradient perturbation: clip rows, sum, add isotropic noise."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("per-sample gradients must form a matrix")
    n = g.shape[0]
    if n == 0:
        raise ValueError("cannot release an empty batch")
    if sigma < 0:
        raise ValueError("sigma must be calibrated to a value >= 0")
    clipped = clip_rows(g, s)
    total = clipped.sum(axis=0)
    return (total + gaussian_noise(total.shape, sigma * s, rng)) / n


def projection_error_rate(g: np.ndarray, basis: AnchorBasis) -> float:
    """Norm of the mean residual relative to the mean gradient.

    Uses unclipped embeddings and residuals; raises when the mean gradient
    vanishes.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("per-sample gradients must form a matrix")
    _, r = basis.split(g)
    rate = _raw_error_rate(g, r)
    if math.isnan(rate):
        raise ValueError("projection error rate is undefined for a zero mean gradient")
    return rate
