"""Objectives, datasets and synthetic federated problems.

Three per-sample losses are supported:

* ``least_squares``: 0.5 * (x.w - y)^2
* ``logistic``: log(1 + exp(x.w)) - y * x.w with y in {0, 1}
* ``nonconvex``: logistic + beta * sum_j sin(w_j)

The global objective is the mean over clients of each client's mean loss,
so clients with more data do not get more weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import expit

KINDS = ("least_squares", "logistic", "nonconvex")
PROVENANCES = ("synthetic-iid", "synthetic-heterogeneous", "idx-file")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    provenance: str = "synthetic-iid"

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        y = np.array(self.labels, dtype=float).reshape(-1)
        if X.ndim != 2:
            raise ValueError(f"features must be a 2-D array, got shape {X.shape}")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            row = int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0])
            raise ValueError(f"non-finite feature in row {row}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class Objective:
    kind: str = "least_squares"
    beta: float = 0.1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}; expected one of {KINDS}")

    @property
    def is_convex(self) -> bool:
        return self.kind != "nonconvex"

    def check_labels(self, data: Dataset):
        if self.kind != "least_squares" and not np.all(np.isin(data.labels, (0.0, 1.0))):
            raise ValueError(f"{self.kind} objective needs labels in {{0, 1}}")

    def losses(self, w, X, y) -> np.ndarray:
        z = X @ w
        if self.kind == "least_squares":
            return 0.5 * (z - y) ** 2
        out = np.logaddexp(0.0, z) - y * z
        if self.kind == "nonconvex":
            out = out + self.beta * np.sum(np.sin(w))
        return out

    def gradients(self, w, X, y) -> np.ndarray:
        """Per-sample gradients, shape (n_samples, d)."""
        z = X @ w
        if self.kind == "least_squares":
            G = (z - y)[:, None] * X
        else:
            G = (expit(z) - y)[:, None] * X
            if self.kind == "nonconvex":
                G = G + self.beta * np.cos(w)
        return G

    def smoothness(self, data: Dataset) -> float:
        """Analytic smoothness constant of the mean loss over ``data``."""
        X = data.features
        top = float(np.linalg.eigvalsh(X.T @ X / X.shape[0])[-1])
        if self.kind == "least_squares":
            return top
        if self.kind == "logistic":
            return 0.25 * top
        return 0.25 * top + self.beta


def _as_params(w, d=None) -> np.ndarray:
    w = np.asarray(w, dtype=float).reshape(-1)
    if d is not None and w.shape[0] != d:
        raise ValueError(f"parameter dimension {w.shape[0]} does not match data dimension {d}")
    if not np.all(np.isfinite(w)):
        raise ValueError("parameters must be finite")
    return w


def per_sample_gradient(obj: Objective, w, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    w = _as_params(w, x.shape[0])
    return obj.gradients(w, x[None, :], np.array([float(y)]))[0]


def loss(obj: Objective, w, data: Dataset) -> float:
    if len(data) == 0:
        raise ValueError("empty dataset")
    w = _as_params(w, data.dim)
    return float(np.mean(obj.losses(w, data.features, data.labels)))


def full_gradient(obj: Objective, w, data: Dataset) -> np.ndarray:
    """Mean per-sample gradient over ``data``."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    w = _as_params(w, data.dim)
    return obj.gradients(w, data.features, data.labels).mean(axis=0)


def estimate_smoothness(obj: Objective, data: Dataset, trials: int = 200, seed: int = 0,
                        scale: float = 1.0) -> float:
    """Largest observed gradient-difference ratio over random parameter pairs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(trials):
        w1 = rng.normal(0.0, scale, data.dim)
        w2 = w1 + rng.normal(0.0, scale, data.dim) * rng.uniform(0.01, 1.0)
        num = np.linalg.norm(full_gradient(obj, w1, data) - full_gradient(obj, w2, data))
        best = max(best, float(num / np.linalg.norm(w1 - w2)))
    return best


@dataclass(frozen=True)
class FederatedProblem:
    """Per-client datasets plus the objective they share.

    ``w_true`` is the planted parameter vector labels were generated from.
    """

    objective: Objective
    clients: tuple[Dataset, ...]
    w_true: np.ndarray
    heterogeneity: float = 0.0
    _stacked: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.clients:
            raise ValueError("a federated problem needs at least one client")
        dims = {c.dim for c in self.clients}
        if len(dims) != 1:
            raise ValueError(f"clients disagree on dimension: {sorted(dims)}")
        for i, c in enumerate(self.clients):
            if len(c) == 0:
                raise ValueError(f"client {i} has an empty dataset")
            self.objective.check_labels(c)
        X = np.vstack([c.features for c in self.clients])
        y = np.concatenate([c.labels for c in self.clients])
        weights = np.concatenate([np.full(len(c), 1.0 / (len(c) * len(self.clients)))
                                  for c in self.clients])
        object.__setattr__(self, "_stacked", (X, y, weights))

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    @property
    def dim(self) -> int:
        return self.clients[0].dim

    def loss(self, w) -> float:
        X, y, wt = self._stacked
        return float(wt @ self.objective.losses(_as_params(w, self.dim), X, y))

    def gradient(self, w) -> np.ndarray:
        X, y, wt = self._stacked
        return wt @ self.objective.gradients(_as_params(w, self.dim), X, y)

    def client_gradients(self, w) -> np.ndarray:
        """Full local gradient of every client, shape (n_clients, d)."""
        return np.stack([full_gradient(self.objective, w, c) for c in self.clients])

    def smoothness(self) -> float:
        return max(self.objective.smoothness(c) for c in self.clients)

    def minimize(self, w0=None) -> tuple[np.ndarray, float]:
        """Numerical minimiser of the global objective (a local one for ``nonconvex``)."""
        w0 = np.zeros(self.dim) if w0 is None else np.asarray(w0, dtype=float)
        res = optimize.minimize(self.loss, w0, jac=self.gradient, method="L-BFGS-B",
                                options={"maxiter": 5000, "gtol": 1e-12, "ftol": 1e-15})
        return res.x, float(res.fun)

    def pooled(self) -> Dataset:
        X, y, _ = self._stacked
        return Dataset(X, y, self.clients[0].provenance)


def _client_data(rng, kind, n_samples, dim, w_client, feature_shift, noise):
    X = rng.normal(0.0, 1.0, (n_samples, dim)) / np.sqrt(dim) + feature_shift
    z = X @ w_client
    if kind == "least_squares":
        y = z + noise * rng.normal(size=n_samples)
    else:
        y = (rng.random(n_samples) < 1.0 / (1.0 + np.exp(-z))).astype(float)
    return X, y


def make_federated_problem(n_clients: int, samples_per_client=(10, 10),
                           heterogeneity: float = 0.0, seed: int = 0, *,
                           dim: int = 10, kind: str = "least_squares", beta: float = 0.1,
                           signal: float = 2.0, noise: float = 0.1,
                           identical_clients: bool = False) -> FederatedProblem:
    """Synthetic federated problem with controllable client dissimilarity.

    Every client draws labels from its own parameter vector
    ``w_true + heterogeneity * u_i`` and features from a Gaussian whose mean is
    shifted by ``heterogeneity * s_i / sqrt(dim)``. With ``heterogeneity = 0``
    all clients share one distribution. ``identical_clients`` gives every
    client the same random stream and hence bit-identical data.
    """
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    k_lo, k_hi = samples_per_client
    if not 1 <= k_lo <= k_hi:
        raise ValueError(f"invalid samples_per_client range {samples_per_client}")
    objective = Objective(kind, beta)
    root = np.random.SeedSequence(seed)
    problem_ss, *client_ss = root.spawn(n_clients + 1)
    prng = np.random.default_rng(problem_ss)
    w_true = prng.normal(size=dim)
    w_true = signal * w_true / max(np.linalg.norm(w_true), 1e-12)
    provenance = "synthetic-heterogeneous" if heterogeneity > 0 else "synthetic-iid"

    clients = []
    for i in range(n_clients):
        rng = np.random.default_rng(client_ss[0] if identical_clients else client_ss[i])
        n_i = int(rng.integers(k_lo, k_hi + 1))
        w_i = w_true + heterogeneity * rng.normal(0.0, signal / np.sqrt(dim), dim)
        shift = heterogeneity * rng.normal(0.0, 1.0, dim) / np.sqrt(dim)
        X, y = _client_data(rng, kind, n_i, dim, w_i, shift, noise)
        clients.append(Dataset(X, y, provenance))
    return FederatedProblem(objective, tuple(clients), w_true, heterogeneity)


def split_dataset(data: Dataset, n_clients: int, seed: int = 0) -> list[Dataset]:
    """Shuffle ``data`` and deal it out to ``n_clients`` nearly equal shards."""
    if not 1 <= n_clients <= len(data):
        raise ValueError(f"cannot split {len(data)} samples across {n_clients} clients")
    order = np.random.default_rng(seed).permutation(len(data))
    return [Dataset(data.features[idx], data.labels[idx], data.provenance)
            for idx in np.array_split(order, n_clients)]


def dissimilarity(problem: FederatedProblem, w) -> float:
    """max_i ||grad f_i(w) - grad F(w)||^2 at a single point."""
    G = problem.client_gradients(w)
    return float(np.max(np.sum((G - G.mean(axis=0)) ** 2, axis=1)))
