"""Renyi-DP accounting: per-mechanism costs, composition, conversion, calibration.

All costs are expressed in the noise-multiplier convention: a release with
L2 sensitivity ``s`` perturbed by ``N(0, (sigma * s)^2 I)`` has multiplier
``sigma``, and its order-``lam`` Renyi cost is ``lam / (2 sigma^2)``
regardless of ``s``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

__all__ = [
    "RdpCurve",
    "DpBudget",
    "MechanismSpec",
    "CalibrationError",
    "default_orders",
    "rdp_gaussian",
    "gaussian_curve",
    "subsampled_gaussian_curve",
    "rdp_compose",
    "rdp_scale",
    "rdp_to_dp",
    "rdp_subsampled_gaussian",
    "calibrate_sigma_closed_form",
    "calibrate_sigma_search",
    "SIGMA_BRACKET",
]

# Search bracket for noise-multiplier calibration; covers desk-scale regimes.
SIGMA_BRACKET = (1e-2, 1e4)


class CalibrationError(RuntimeError):
    """No noise multiplier in the search bracket satisfies the budget."""


@dataclass(frozen=True)
class DpBudget:
    """An (epsilon, delta) differential privacy target."""

    epsilon: float
    delta: float

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class MechanismSpec:
    """A repeated noisy release: sensitivity, multiplier, sampling, count."""

    sensitivity: float
    sigma: float
    q: float = 1.0
    invocations: int = 1

    def __post_init__(self) -> None:
        if self.sensitivity < 0:
            raise ValueError("sensitivity must be non-negative")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if not 0 <= self.q <= 1:
            raise ValueError(f"sampling rate must lie in [0, 1], got {self.q}")
        if self.invocations < 1:
            raise ValueError("invocations must be >= 1")


class RdpCurve:
    """Accumulated Renyi divergence cost over a grid of orders."""

    def __init__(self, orders: Sequence[float], costs: Sequence[float]):
        orders_arr = np.asarray(orders, dtype=np.float64)
        costs_arr = np.asarray(costs, dtype=np.float64)
        if orders_arr.ndim != 1 or orders_arr.shape != costs_arr.shape:
            raise ValueError("orders and costs must be 1-d arrays of equal length")
        if orders_arr.size == 0:
            raise ValueError("curve must contain at least one order")
        if np.any(orders_arr <= 1):
            raise ValueError("all orders must exceed 1")
        if np.any(np.diff(orders_arr) <= 0):
            raise ValueError("orders must be strictly ascending")
        if not np.all(np.isfinite(costs_arr)) or np.any(costs_arr < 0):
            raise ValueError("costs must be non-negative and finite")
        self.orders = orders_arr
        self.costs = costs_arr

    def __len__(self) -> int:
        return self.orders.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RdpCurve):
            return NotImplemented
        return np.array_equal(self.orders, other.orders) and np.array_equal(
            self.costs, other.costs
        )

    def __repr__(self) -> str:
        return f"RdpCurve(orders={self.orders!r}, costs={self.costs!r})"


def default_orders(
    budget: DpBudget | None = None, include_analytic: bool = False
) -> np.ndarray:
    """Integer orders 2..256, optionally with the analytic order appended.

    The analytic order ``1 + 2 log(1/delta) / epsilon`` is the one used by
    the closed-form calibration; it is only valid for unsampled mechanisms
    (the subsampling bound needs integer orders).
    """
    orders = np.arange(2, 257, dtype=np.float64)
    if include_analytic:
        if budget is None:
            raise ValueError("analytic order requires a budget")
        analytic = 1.0 + 2.0 * math.log(1.0 / budget.delta) / budget.epsilon
        if analytic > 1 and not np.any(np.isclose(orders, analytic)):
            orders = np.sort(np.append(orders, analytic))
    return orders


def rdp_gaussian(order: float, s: float, sigma: float) -> float:
    """Renyi cost of one Gaussian release with sensitivity ``s``.

    Returns ``order * s^2 / (2 sigma^2)``; infinite when ``sigma == 0``
    with positive sensitivity.
    """
    if order <= 1:
        raise ValueError(f"order must exceed 1, got {order}")
    if s < 0:
        raise ValueError("sensitivity must be non-negative")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if s == 0:
        return 0.0
    if sigma == 0:
        return math.inf
    return order * s * s / (2.0 * sigma * sigma)


def gaussian_curve(orders: Sequence[float], s: float, sigma: float) -> RdpCurve:
    """Gaussian-mechanism cost evaluated across a grid of orders."""
    return RdpCurve(orders, [rdp_gaussian(o, s, sigma) for o in orders])


def rdp_subsampled_gaussian(order: int, q: float, sigma: float) -> float:
    """Upper bound on the Renyi cost of a Poisson-subsampled Gaussian.

    Uses the binomial expansion at integer orders:

        (1/(a-1)) * log sum_{j=0..a} C(a,j) (1-q)^(a-j) q^j exp(j(j-1)/(2 sigma^2))

    evaluated in log space.  ``q`` is the probability that any given sample
    joins the batch; the base mechanism has unit sensitivity and multiplier
    ``sigma``.
    """
    if not float(order).is_integer() or order < 2:
        raise ValueError(f"subsampled bound needs an integer order >= 2, got {order}")
    if not 0 <= q <= 1:
        raise ValueError(f"sampling rate must lie in [0, 1], got {q}")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if q == 0:
        return 0.0
    if sigma == 0:
        return math.inf
    a = int(order)
    if q == 1:
        return a / (2.0 * sigma * sigma)
    j = np.arange(a + 1)
    log_binom = gammaln(a + 1) - gammaln(j + 1) - gammaln(a - j + 1)
    log_terms = (
        log_binom
        + (a - j) * math.log1p(-q)
        + j * math.log(q)
        + j * (j - 1) / (2.0 * sigma * sigma)
    )
    return float(logsumexp(log_terms)) / (a - 1)


def subsampled_gaussian_curve(
    orders: Sequence[float], q: float, sigma: float
) -> RdpCurve:
    """Subsampled-Gaussian cost across a grid (plain Gaussian when q == 1)."""
    if q == 1.0:
        return gaussian_curve(orders, 1.0, sigma)
    return RdpCurve(orders, [rdp_subsampled_gaussian(o, q, sigma) for o in orders])


def rdp_compose(curves: Iterable[RdpCurve]) -> RdpCurve:
    """Adaptive composition: pointwise sum of costs over a shared grid."""
    curves = list(curves)
    if not curves:
        raise ValueError("need at least one curve to compose")
    orders = curves[0].orders
    total = np.zeros_like(curves[0].costs)
    for curve in curves:
        if not np.array_equal(curve.orders, orders):
            raise ValueError("curves must share the same order grid")
        total = total + curve.costs
    return RdpCurve(orders, total)


def rdp_scale(curve: RdpCurve, times: int) -> RdpCurve:
    """Compose ``times`` identical invocations of one mechanism."""
    if times < 0:
        raise ValueError("times must be non-negative")
    return RdpCurve(curve.orders, curve.costs * times)


def rdp_to_dp(curve: RdpCurve, delta: float) -> tuple[float, float]:
    """Convert an RDP curve to (epsilon, delta)-DP.

    Evaluates ``cost(lam) + log(1/delta) / (lam - 1)`` on the grid and
    returns the minimum with the minimizing order.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    log_inv_delta = math.log(1.0 / delta)
    eps = curve.costs + log_inv_delta / (curve.orders - 1.0)
    best = int(np.argmin(eps))
    return float(eps[best]), float(curve.orders[best])


def calibrate_sigma_closed_form(budget: DpBudget, steps: int) -> float:
    """Closed-form multiplier for a training run of paired Gaussian releases.

    Returns ``2 sqrt(2 T log(1/delta)) / epsilon``: the per-release noise
    multiplier that keeps ``T`` steps, each releasing an embedding and a
    residual, within the budget.  Only valid when
    ``epsilon <= 2 log(1/delta)``; outside that regime use
    :func:`calibrate_sigma_search`.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    log_inv_delta = math.log(1.0 / budget.delta)
    if budget.epsilon > 2.0 * log_inv_delta:
        raise ValueError(
            f"epsilon={budget.epsilon} exceeds 2 log(1/delta)={2 * log_inv_delta:.6g}; "
            "the closed form does not apply, use calibrate_sigma_search"
        )
    return 2.0 * math.sqrt(2.0 * steps * log_inv_delta) / budget.epsilon


def epsilon_for_sigma(
    sigma: float,
    budget_delta: float,
    q: float,
    invocations: int,
    orders: Sequence[float] | None = None,
) -> tuple[float, float]:
    """Spent epsilon (and best order) for repeated subsampled releases.

    A zero multiplier provides no protection and reports infinite epsilon.
    """
    if sigma == 0:
        return math.inf, math.nan
    if orders is None:
        orders = default_orders()
    per_step = subsampled_gaussian_curve(orders, q, sigma)
    return rdp_to_dp(rdp_scale(per_step, invocations), budget_delta)


def calibrate_sigma_search(
    budget: DpBudget,
    q: float,
    invocations: int,
    orders: Sequence[float] | None = None,
    rel_tol: float = 1e-4,
) -> float:
    """Smallest multiplier meeting the budget for repeated subsampled releases.

    Bisects on sigma using the monotonicity of the spent epsilon;
    ``invocations`` counts unit-sensitivity releases (one per step for a
    joint release, two per step for separate embedding/residual releases).
    """
    if not 0 < q <= 1:
        raise ValueError(f"sampling rate must lie in (0, 1], got {q}")
    if invocations < 1:
        raise ValueError("invocations must be >= 1")
    if orders is None:
        orders = default_orders(budget, include_analytic=(q == 1.0))
    orders = np.asarray(orders, dtype=np.float64)
    if orders.size == 0:
        raise ValueError("order grid must be non-empty")
    if q < 1.0 and not np.all(np.equal(np.mod(orders, 1), 0)):
        raise ValueError("subsampled calibration requires integer orders")

    def spent(sigma: float) -> float:
        return epsilon_for_sigma(sigma, budget.delta, q, invocations, orders)[0]

    lo, hi = SIGMA_BRACKET
    if spent(lo) <= budget.epsilon:
        return lo
    if spent(hi) > budget.epsilon:
        raise CalibrationError(
            f"even sigma={hi} spends more than epsilon={budget.epsilon} "
            f"over {invocations} invocations at q={q}"
        )
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if spent(mid) <= budget.epsilon:
            hi = mid
        else:
            lo = mid
    return hi
