"""Differential-privacy primitives: clipping, Gaussian calibration and RDP accounting.

All RDP costs are expressed per Renyi order on a fixed grid. A
:class:`PrivacyLedger` is an immutable value; composing returns a new ledger.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import integrate

DEFAULT_ORDERS: tuple[float, ...] = (
    1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 4.0, 5.0, 6.0, 8.0,
    16.0, 32.0, 64.0, 128.0, 256.0, 512.0,
)

# Largest noise multiplier the calibration search will consider.
DEFAULT_MULTIPLIER_CAP = 100.0


class CalibrationError(ValueError):
    """Raised when no noise multiplier below the cap reaches the target epsilon."""


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float
    alpha: float | None = None

    def __post_init__(self):
        # epsilon == 0 is allowed so that zero per-step loss composes to zero
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if self.alpha is not None and not self.alpha > 1:
            raise ValueError(f"alpha must be > 1, got {self.alpha}")


@dataclass(frozen=True)
class GaussianMechanismSpec:
    sensitivity: float
    sigma: float
    dimension: int = 1

    def __post_init__(self):
        if self.sensitivity < 0:
            raise ValueError("sensitivity must be non-negative")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")

    def rdp(self, orders: Sequence[float] = DEFAULT_ORDERS) -> np.ndarray:
        return np.array([rdp_gaussian_cost(self.sigma, self.sensitivity, a) for a in orders])


@dataclass(frozen=True)
class PrivacyLedger:
    """Accumulated RDP cost per order.

    ``costs[j]`` is the total tau at ``orders[j]``; ``steps`` counts the
    number of composed mechanisms.
    """

    orders: tuple[float, ...] = DEFAULT_ORDERS
    costs: np.ndarray = field(default=None)  # type: ignore[assignment]
    steps: int = 0

    def __post_init__(self):
        orders = tuple(float(a) for a in self.orders)
        if any(a <= 1 for a in orders):
            raise ValueError("Renyi orders must all be > 1")
        object.__setattr__(self, "orders", orders)
        costs = np.zeros(len(orders)) if self.costs is None else np.asarray(self.costs, dtype=float)
        if costs.shape != (len(orders),):
            raise ValueError("costs must have one entry per order")
        if np.any(costs < 0):
            raise ValueError("RDP costs must be non-negative")
        costs = costs.copy()
        costs.flags.writeable = False
        object.__setattr__(self, "costs", costs)

    def epsilon(self, delta: float) -> float:
        return rdp_to_dp(self, delta).epsilon

    def to_dict(self, delta: float | None = None) -> dict:
        out = {
            "steps": self.steps,
            "orders": list(self.orders),
            "rdp": [float(c) for c in self.costs],
        }
        if delta is not None:
            conv = rdp_to_dp(self, delta)
            out.update(delta=delta, epsilon=conv.epsilon, best_alpha=conv.alpha)
        return out


class DpConversion(NamedTuple):
    epsilon: float
    alpha: float
    clamped: bool


def clip_vector(v, clip_bound: float) -> tuple[np.ndarray, float]:
    """Project ``v`` onto the l2 ball of radius ``clip_bound``.

    Returns the clipped vector and the norm of what was cut off.
    """
    if not clip_bound > 0:
        raise ValueError(f"clip bound must be positive, got {clip_bound}")
    v = np.asarray(v, dtype=float)
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size:
        raise ValueError(f"non-finite component at index {int(bad[0])}: {v.flat[bad[0]]}")
    norm = float(np.linalg.norm(v))
    if norm <= clip_bound:
        return v.copy(), 0.0
    scale = clip_bound / norm
    clipped = v * scale
    # rounding can leave the norm a few ulps above the bound; then clipping
    # again would not be a no-op
    while np.linalg.norm(clipped) > clip_bound:
        scale = math.nextafter(scale, 0.0)
        clipped = v * scale
    return clipped, float(np.linalg.norm(v - clipped))


def gaussian_sigma_for(epsilon: float, delta: float, sensitivity: float) -> float:
    """Noise scale of the classical Gaussian mechanism, valid for epsilon in (0, 1)."""
    if not 0 < epsilon < 1:
        raise ValueError(
            f"epsilon={epsilon} is outside (0, 1) where the classical Gaussian bound "
            "holds; use RDP accounting instead"
        )
    if delta == 0:
        raise ValueError("delta = 0 is unsupported: the Gaussian mechanism gives approximate DP only")
    if not 0 < delta < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if sensitivity < 0:
        raise ValueError("sensitivity must be non-negative")
    if sensitivity == 0:
        return 0.0
    threshold = 2.0 * math.log(1.25 / delta)
    c = math.sqrt(threshold)
    while not c * c > threshold:
        c = math.nextafter(c, math.inf)
    return c * sensitivity / epsilon


def rdp_gaussian_cost(sigma: float, sensitivity: float, alpha: float) -> float:
    """Order-``alpha`` Renyi divergence between N(0, sigma^2) and N(sensitivity, sigma^2)."""
    if not alpha > 1:
        raise ValueError(f"Renyi order must be > 1, got {alpha}")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return alpha * sensitivity**2 / (2.0 * sigma**2)


def _log_mixture_integrand(x, q, z, alpha):
    # log N(x; 0, z^2) + alpha * log((1-q) + q * exp((2x - 1) / (2 z^2)))
    log_ratio = np.logaddexp(math.log1p(-q), math.log(q) + (2.0 * x - 1.0) / (2.0 * z * z))
    return -0.5 * (x / z) ** 2 - math.log(z * math.sqrt(2.0 * math.pi)) + alpha * log_ratio


def subsampled_gaussian_rdp(q: float, noise_multiplier: float, alpha: float) -> float:
    """RDP at order ``alpha`` of a Poisson-subsampled Gaussian release with unit sensitivity.

    Evaluates D_alpha((1-q) N(0, z^2) + q N(1, z^2) || N(0, z^2)) by adaptive
    quadrature in a max-shifted log domain. Works for non-integer orders.
    """
    if not alpha > 1:
        raise ValueError(f"Renyi order must be > 1, got {alpha}")
    if not 0 <= q <= 1:
        raise ValueError(f"sampling rate must be in [0, 1], got {q}")
    if q == 0:
        return 0.0
    if noise_multiplier == 0:
        return math.inf
    if q == 1:
        return rdp_gaussian_cost(noise_multiplier, 1.0, alpha)

    z = float(noise_multiplier)
    # mass lives between the two component means, 0 and ~alpha
    lo = -40.0 * z - 1.0
    hi = alpha + 40.0 * z + 1.0
    grid = np.linspace(lo, hi, 20001)
    logf = _log_mixture_integrand(grid, q, z, alpha)
    peak = float(np.max(logf))
    mode = float(grid[np.argmax(logf)])
    breakpoints = sorted({0.0, 0.5, mode, min(float(alpha), hi - 1.0)})
    val, _ = integrate.quad(
        lambda x: math.exp(_log_mixture_integrand(x, q, z, alpha) - peak),
        lo, hi, points=breakpoints, limit=500, epsabs=0.0, epsrel=1e-11,
    )
    log_a = peak + math.log(val)
    return max(log_a, 0.0) / (alpha - 1.0)


def subsampled_gaussian_costs(q: float, noise_multiplier: float,
                              orders: Sequence[float] = DEFAULT_ORDERS) -> np.ndarray:
    return np.array([subsampled_gaussian_rdp(q, noise_multiplier, a) for a in orders])


def compose(ledger: PrivacyLedger, mechanism_cost, count: int = 1) -> PrivacyLedger:
    """Add ``count`` copies of a mechanism's per-order cost to the ledger.

    ``mechanism_cost`` is either a sequence aligned with ``ledger.orders`` or a
    mapping from order to cost covering exactly the ledger's grid.
    """
    if count < 1 or int(count) != count:
        raise ValueError(f"count must be a positive integer, got {count}")
    if isinstance(mechanism_cost, Mapping):
        keys = sorted(float(a) for a in mechanism_cost)
        if keys != sorted(ledger.orders):
            raise ValueError("mechanism cost is not defined on the ledger's order grid")
        cost = np.array([mechanism_cost[a] for a in ledger.orders], dtype=float)
    else:
        cost = np.asarray(mechanism_cost, dtype=float)
        if cost.shape != (len(ledger.orders),):
            raise ValueError(
                f"mechanism cost has {cost.size} entries, ledger grid has {len(ledger.orders)}"
            )
    if np.any(cost < 0) or np.any(np.isnan(cost)):
        raise ValueError("mechanism costs must be non-negative")
    return PrivacyLedger(ledger.orders, ledger.costs + count * cost, ledger.steps + int(count))


def rdp_to_dp(ledger: PrivacyLedger, delta_target: float) -> DpConversion:
    """Best (epsilon, alpha) over the ledger grid at the given delta.

    Negative values (possible only for near-zero cost and large delta) are
    clamped to zero and flagged.
    """
    if not ledger.orders:
        raise ValueError("ledger has an empty order grid")
    if not 0 < delta_target < 1:
        raise ValueError(f"delta must be in (0, 1), got {delta_target}")
    orders = np.asarray(ledger.orders)
    slack = (math.log(1.0 / delta_target) + (orders - 1.0) * np.log1p(-1.0 / orders)
             - np.log(orders)) / (orders - 1.0)
    with np.errstate(invalid="ignore"):
        eps = ledger.costs + slack
    eps = np.where(np.isnan(eps), np.inf, eps)
    j = int(np.argmin(eps))  # first minimum -> smallest order on ties
    best = float(eps[j])
    if best < 0:
        warnings.warn(f"converted epsilon {best:.4g} is negative; clamping to 0", stacklevel=2)
        return DpConversion(0.0, float(orders[j]), True)
    return DpConversion(best, float(orders[j]), False)


def strong_composition(epsilon_step: float, delta_step: float, T: int) -> PrivacyParams:
    if epsilon_step < 0:
        raise ValueError("per-step epsilon must be non-negative")
    if not 0 < delta_step < 1:
        raise ValueError("per-step delta must be in (0, 1)")
    if T < 1:
        raise ValueError("T must be a positive integer")
    e = math.exp(epsilon_step)
    eps = epsilon_step * math.sqrt(2.0 * T * math.log(1.0 / delta_step)) + T * (e - 1.0) / (e + 1.0)
    return PrivacyParams(eps, (T + 1) * delta_step)


def epsilon_for_multiplier(noise_multiplier: float, delta: float, rounds: int, rate: float,
                           orders: Sequence[float] = DEFAULT_ORDERS) -> float:
    """Epsilon after ``rounds`` subsampled-Gaussian releases at the given multiplier."""
    if noise_multiplier == 0:
        return math.inf
    cost = subsampled_gaussian_costs(rate, noise_multiplier, orders)
    ledger = compose(PrivacyLedger(tuple(orders)), cost, rounds)
    return rdp_to_dp(ledger, delta).epsilon


def calibrate_noise_multiplier(target_epsilon: float, delta_target: float, rounds: int,
                               pre_sample_rate: float, *,
                               orders: Sequence[float] = DEFAULT_ORDERS,
                               cap: float = DEFAULT_MULTIPLIER_CAP,
                               tol: float = 1e-4) -> float:
    """Smallest noise multiplier whose composed cost stays within ``target_epsilon``."""
    if not target_epsilon > 0:
        raise ValueError("target epsilon must be positive")
    if not 0 < delta_target < 1:
        raise ValueError("delta must be in (0, 1)")
    if rounds < 1:
        raise ValueError("rounds must be a positive integer")
    if not 0 < pre_sample_rate <= 1:
        raise ValueError("sampling rate must be in (0, 1]")
    if math.isinf(target_epsilon):
        return 0.0

    def eps(z):
        return epsilon_for_multiplier(z, delta_target, rounds, pre_sample_rate, orders)

    if eps(cap) > target_epsilon:
        raise CalibrationError(
            f"epsilon={target_epsilon} is unreachable with a noise multiplier below the cap {cap}"
        )
    lo, hi = 0.0, cap
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if eps(mid) <= target_epsilon:
            hi = mid
        else:
            lo = mid
    return hi
