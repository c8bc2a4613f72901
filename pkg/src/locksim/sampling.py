"""Two-stage client sampling and the aggregation estimators.

Stage 1 includes each of the ``n`` clients independently with probability
``m/n``. Stage 2 turns the pre-sampled clients' noisy gradient norms into
probabilities ``p`` and keeps each pre-sampled client independently with
probability ``p/k``, so a client's overall inclusion probability is
``(m/n) * (p/k)`` and the expected final batch is at most ``b = m/k``.

Everything here consumes only :class:`NormRelease` and
:class:`GradientRelease` messages.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .client import NORM_FLOOR, GradientRelease, NormRelease

PROBABILITY_MODES = ("locks", "uniform", "fixed")
ESTIMATOR_MODES = ("scaled", "unscaled", "literal")


@dataclass(frozen=True)
class SamplingConfig:
    n: int
    m: int
    k: int = 1
    clip: float = 1.0

    def __post_init__(self):
        for name in ("n", "m", "k"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if self.m > self.n:
            raise ValueError(f"m={self.m} cannot exceed n={self.n}")
        if self.m % self.k:
            raise ValueError(f"k={self.k} must divide m={self.m}")
        if not self.clip > 0:
            raise ValueError("clip bound must be positive")

    @property
    def b(self) -> float:
        return self.m / self.k

    @property
    def rate(self) -> float:
        return self.m / self.n


@dataclass(frozen=True)
class RoundPlan:
    round: int
    pre_sample: tuple[int, ...]
    probs: dict = field(default_factory=dict)
    final_batch: tuple[int, ...] = ()
    z_sum: float = 0.0
    z_sum_clamped: float = 0.0
    n_tilde: int = 0

    @property
    def skipped(self) -> bool:
        return not self.final_batch

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "pre_sample": list(self.pre_sample),
            "probs": {str(i): p for i, p in sorted(self.probs.items())},
            "final_batch": list(self.final_batch),
            "z_sum": self.z_sum,
            "z_sum_clamped": self.z_sum_clamped,
            "n_tilde": self.n_tilde,
        }


def stage1_sample(config: SamplingConfig, rng) -> np.ndarray:
    """Sorted ids of clients kept by independent Bernoulli(m/n) draws."""
    if config.m == config.n:
        return np.arange(config.n)
    return np.flatnonzero(rng.random(config.n) < config.rate)


def _clamped_sum(config: SamplingConfig, releases):
    z_sum = float(sum(r.z_tilde for r in releases))
    n_tilde = len(releases)
    # Ñ = |pre-sample|; if Ñ < b the ceiling wins, exactly as min(max(.)) reads
    z_clamped = min(max(z_sum, config.b * config.clip), n_tilde * config.clip)
    return z_sum, z_clamped


def _validate_releases(releases):
    if not releases:
        raise ValueError("empty pre-sample: no norm releases to turn into probabilities")
    for r in releases:
        if not r.z_tilde >= NORM_FLOOR:
            raise ValueError(f"client {r.client_id} released norm {r.z_tilde} below the floor")


def stage2_probs(config: SamplingConfig, releases: list[NormRelease]):
    """Norm-proportional probabilities ``min(1, b z_j / (k z_S'))``.

    Returns ``(probs, z_sum, z_sum_clamped)`` with probs keyed by client id.
    """
    _validate_releases(releases)
    z_sum, z_clamped = _clamped_sum(config, releases)
    scale = config.b / (config.k * z_clamped)
    probs = {r.client_id: min(1.0, scale * r.z_tilde) for r in releases}
    return probs, z_sum, z_clamped


def uniform_stage2_probs(config: SamplingConfig, releases: list[NormRelease]):
    """Same probability budget as :func:`stage2_probs` with every norm replaced by the mean.

    Coincides with :func:`stage2_probs` whenever all released norms are equal.
    """
    _validate_releases(releases)
    z_sum, z_clamped = _clamped_sum(config, releases)
    p = min(1.0, config.b * (z_sum / len(releases)) / (config.k * z_clamped))
    return {r.client_id: p for r in releases}, z_sum, z_clamped


def fixed_probs(config: SamplingConfig, releases: list[NormRelease], v0: float):
    """Constant ``p = 1/v0`` for every pre-sampled client."""
    if not v0 >= 1:
        raise ValueError(f"v0 must be >= 1, got {v0}")
    _validate_releases(releases)
    z_sum, z_clamped = _clamped_sum(config, releases)
    return {r.client_id: 1.0 / v0 for r in releases}, z_sum, z_clamped


def round_probs(config: SamplingConfig, releases, mode: str = "locks", v0: float | None = None):
    if mode == "locks":
        return stage2_probs(config, releases)
    if mode == "uniform":
        return uniform_stage2_probs(config, releases)
    if mode == "fixed":
        if v0 is None:
            raise ValueError("fixed probability mode needs v0")
        return fixed_probs(config, releases, v0)
    raise ValueError(f"unknown probability mode {mode!r}; expected one of {PROBABILITY_MODES}")


def stage2_sample(probs: dict, k: int, rng) -> np.ndarray:
    """Keep each client independently with probability ``p/k``; ids come back sorted."""
    ids = np.array(sorted(probs), dtype=int)
    if ids.size == 0:
        return ids
    p = np.array([probs[i] for i in ids]) / k
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("stage-2 inclusion probabilities must lie in (0, 1]")
    return ids[rng.random(ids.size) < p]


def _stack(releases, dim):
    if not releases:
        return np.zeros((0, dim)), []
    rel = sorted(releases, key=lambda r: r.client_id)
    return np.stack([r.noised_clipped_gradient for r in rel]), [r.client_id for r in rel]


def aggregate_scaled(releases: list[GradientRelease], probs: dict, b: float, dim: int) -> np.ndarray:
    """Inverse-probability estimate ``(1/b) sum_l g_l / p_l``; unbiased for the mean clipped gradient."""
    G, ids = _stack(releases, dim)
    if not ids:
        return np.zeros(dim)
    missing = [i for i in ids if i not in probs]
    if missing:
        raise KeyError(f"no stage-2 probability for clients {missing}")
    inv_p = np.array([1.0 / probs[i] for i in ids])
    return (inv_p @ G) / b


def aggregate_unscaled(releases: list[GradientRelease], n: int, b: float, dim: int) -> np.ndarray:
    """``(n/b) sum_l g_l``; unbiased for the probability-weighted sum of clipped gradients."""
    G, _ = _stack(releases, dim)
    return G.sum(axis=0) * (n / b)


def aggregate_literal(releases: list[GradientRelease], b: float, dim: int) -> np.ndarray:
    """``(1/b) sum_l g_l`` with no probability correction."""
    G, _ = _stack(releases, dim)
    return G.sum(axis=0) / b


def aggregate(mode: str, releases, probs: dict, config: SamplingConfig, dim: int) -> np.ndarray:
    if mode == "scaled":
        return aggregate_scaled(releases, probs, config.b, dim)
    if mode == "unscaled":
        return aggregate_unscaled(releases, config.n, config.b, dim)
    if mode == "literal":
        return aggregate_literal(releases, config.b, dim)
    raise ValueError(f"unknown estimator mode {mode!r}; expected one of {ESTIMATOR_MODES}")


def expected_batch_size(config: SamplingConfig, probs) -> float:
    """``sum_i (m/n)(p_i/k)`` for a probability per client (absent clients count as p=0)."""
    values = probs.values() if isinstance(probs, dict) else probs
    return float(sum(config.rate * p / config.k for p in values))
