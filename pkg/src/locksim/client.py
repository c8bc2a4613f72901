"""Client-side pipeline: local gradient, clipping and the two private releases.

A client hands the server exactly two kinds of message per round, a
:class:`NormRelease` and (if selected) a :class:`GradientRelease`. The
clipped gradient between the two stays inside the client object.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dp import clip_vector
from .models import Dataset, Objective

NORM_FLOOR = 1e-6


@dataclass(frozen=True)
class NormRelease:
    client_id: int
    z_tilde: float
    floored: bool = False

    def to_dict(self) -> dict:
        return {"client_id": self.client_id, "z_tilde": self.z_tilde, "floored": self.floored}


@dataclass(frozen=True)
class GradientRelease:
    client_id: int
    noised_clipped_gradient: np.ndarray


def _check_sigma(sigma: float, nonprivate: bool, name: str):
    if sigma < 0 or (sigma == 0 and not nonprivate):
        raise ValueError(
            f"{name} must be positive (zero is only allowed in explicit nonprivate mode), got {sigma}"
        )


def _check_clipped(g, clip):
    if clip is not None and np.linalg.norm(g) > clip * (1 + 1e-12):
        raise ValueError(f"gradient norm {np.linalg.norm(g):.6g} exceeds clip bound {clip}")


class Client:
    """One federated client with its own data and random stream.

    ``K`` is the number of local samples drawn (with replacement) per
    gradient estimate before the server's [K_min, K_max] clamp; it defaults
    to the size of the local dataset.
    """

    def __init__(self, client_id: int, data: Dataset, objective: Objective,
                 rng: np.random.Generator, K: int | None = None):
        if len(data) == 0:
            raise ValueError(f"client {client_id} has an empty dataset")
        self.client_id = int(client_id)
        self._data = data
        self._objective = objective
        self._rng = rng
        self.K = len(data) if K is None else int(K)
        if self.K < 1:
            raise ValueError("K must be positive")
        self._clipped: np.ndarray | None = None

    def local_gradient(self, w, K_max: int, K_min: int, local_epochs: int = 1) -> np.ndarray:
        """Mean gradient over clamp(K, K_min, K_max) local draws, averaged over epochs."""
        if not 1 <= K_min <= K_max:
            raise ValueError(f"need 1 <= K_min <= K_max, got K_min={K_min}, K_max={K_max}")
        k = min(max(self.K, K_min), K_max)
        n = len(self._data)
        total = np.zeros(self._data.dim)
        for _ in range(local_epochs):
            idx = self._rng.integers(0, n, size=k)
            G = self._objective.gradients(w, self._data.features[idx], self._data.labels[idx])
            total += G.mean(axis=0)
        return total / local_epochs

    def release_norm(self, g_clipped, sigma_s: float, *, clip: float | None = None,
                     nonprivate: bool = False, rng=None) -> NormRelease:
        _check_sigma(sigma_s, nonprivate, "sigma_s")
        _check_clipped(g_clipped, clip)
        rng = self._rng if rng is None else rng
        z = float(np.linalg.norm(g_clipped))
        if sigma_s > 0:
            z += float(rng.normal(0.0, sigma_s))
        if z < NORM_FLOOR:
            return NormRelease(self.client_id, NORM_FLOOR, True)
        return NormRelease(self.client_id, z, False)

    def release_gradient(self, g_clipped, sigma_0: float, *, clip: float | None = None,
                         nonprivate: bool = False, rng=None) -> GradientRelease:
        _check_sigma(sigma_0, nonprivate, "sigma_0")
        _check_clipped(g_clipped, clip)
        rng = self._rng if rng is None else rng
        g = np.array(g_clipped, dtype=float)
        if sigma_0 > 0:
            g = g + rng.normal(0.0, sigma_0, g.shape)
        return GradientRelease(self.client_id, g)

    # -- the two calls the server makes each round --

    def propose(self, w, *, clip: float, sigma_s: float, K_max: int, K_min: int,
                local_epochs: int = 1, nonprivate: bool = False) -> NormRelease:
        g = self.local_gradient(w, K_max, K_min, local_epochs)
        self._clipped, _ = clip_vector(g, clip)
        return self.release_norm(self._clipped, sigma_s, clip=clip, nonprivate=nonprivate)

    def submit(self, *, sigma_0: float, clip: float, nonprivate: bool = False) -> GradientRelease:
        if self._clipped is None:
            raise RuntimeError(f"client {self.client_id} was asked for a gradient before proposing")
        g, self._clipped = self._clipped, None
        return self.release_gradient(g, sigma_0, clip=clip, nonprivate=nonprivate)

    def discard(self):
        self._clipped = None
