"""Convergence-bound evaluation and measurement of the constants it needs.

For uniform stage-2 probabilities ``p = 1/V0`` and learning rates
``eta_t = eta_b / sqrt(t + 1)`` the guarantee reads

    min_t E||grad F(w_t)||^2 <= Delta_F / (sqrt(T) * alpha_kappa) + Phi

with ``log`` the natural logarithm throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .dp import clip_vector
from .models import FederatedProblem, estimate_smoothness


class VacuousBoundError(ValueError):
    """alpha_kappa <= 0: the bound says nothing for these inputs."""


@dataclass(frozen=True)
class BoundInputs:
    L: float
    A: float
    sigma_L: float
    sigma_G: float
    c_nu: float
    sigma_0: float
    eta_b: float
    b: float
    V_0: float
    T: int
    d: int
    K_max: int
    K_min: int
    Delta_F: float

    def __post_init__(self):
        if not self.V_0 > 1:
            raise ValueError(f"V_0 must be > 1, got {self.V_0}")
        for name in ("L", "eta_b", "b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("A", "sigma_L", "sigma_G", "c_nu", "sigma_0"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.T < 1 or self.d < 1 or not 1 <= self.K_min <= self.K_max:
            raise ValueError("T, d must be positive and 1 <= K_min <= K_max")


def alpha_kappa(p: BoundInputs) -> float:
    if p.T < 2:
        raise ValueError("alpha_kappa needs T >= 2")
    rt = math.sqrt(p.T)
    return (p.eta_b * (rt - 1.0) / rt
            - p.V_0 * p.L * p.eta_b**2 * math.log(p.T) * (p.A**2 + 1.0) / (p.b * rt))


def phi_bound(p: BoundInputs) -> float:
    ak = alpha_kappa(p)
    if ak <= 0:
        raise VacuousBoundError(f"alpha_kappa = {ak:.6g} <= 0, the bound is vacuous")
    local = p.sigma_L**2 + p.c_nu**2
    first = 2.0 * p.eta_b * p.K_max * local / (p.K_min * ak)
    bracket = p.K_max * local / p.K_min + (p.sigma_G**2 + p.d * p.sigma_0**2) / 2.0
    second = p.L * p.eta_b**2 / (p.b * ak * math.sqrt(p.T)) * bracket * p.V_0 * math.log(p.T)
    return first + second


def bound_value(p: BoundInputs) -> float:
    return p.Delta_F / (math.sqrt(p.T) * alpha_kappa(p)) + phi_bound(p)


def probability_constraint(p: BoundInputs, n: int) -> tuple[float, float]:
    """Both sides of sum_i 1/p_i <= b n / (L eta_b^2 (A^2 + 1)) at p_i = 1/V_0."""
    return n * p.V_0, p.b * n / (p.L * p.eta_b**2 * (p.A**2 + 1.0))


@dataclass
class BoundReport:
    empirical_min: float
    argmin_t: int
    n_seeds: int
    alpha_kappa: float
    vacuous: bool
    delta_f_term: float
    phi: float
    bound: float
    margin: float
    holds: bool
    constraint_lhs: float
    constraint_rhs: float
    constraint_ok: bool
    inputs: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=float)

    def text(self) -> str:
        if self.vacuous:
            return (f"alpha_kappa = {self.alpha_kappa:.6g} <= 0: bound is vacuous\n"
                    f"empirical min_t mean||grad F||^2 = {self.empirical_min:.6g}")
        return "\n".join([
            f"empirical min_t mean||grad F(w_t)||^2 over {self.n_seeds} seeds: "
            f"{self.empirical_min:.6g} (t = {self.argmin_t})",
            f"alpha_kappa = {self.alpha_kappa:.6g}",
            f"bound = Delta_F term {self.delta_f_term:.6g} + Phi {self.phi:.6g} = {self.bound:.6g}",
            f"margin = {self.margin:.6g} ({'holds' if self.holds else 'VIOLATED'})",
            f"probability constraint: {self.constraint_lhs:.6g} <= {self.constraint_rhs:.6g} "
            f"({'ok' if self.constraint_ok else 'not met'})",
        ])


def check_convergence_bound(traces_by_seed, inputs: BoundInputs, n: int) -> BoundReport:
    """Compare the seed-averaged gradient-norm trajectory against the bound.

    ``traces_by_seed`` is a list (one entry per seed) of round-trace lists.
    Every round must have used the uniform probability ``1/V_0``.
    """
    if not traces_by_seed:
        raise ValueError("need at least one trace")
    target = 1.0 / inputs.V_0
    for traces in traces_by_seed:
        for tr in traces:
            if any(not math.isclose(p, target, rel_tol=1e-12) for p in tr.plan.probs.values()):
                raise ValueError(
                    f"round {tr.t} used non-uniform probabilities; the bound assumes p = 1/V_0"
                )
    lengths = {len(tr) for tr in traces_by_seed}
    if len(lengths) != 1:
        raise ValueError("all seeds must have the same number of rounds")
    G = np.array([[tr.grad_norm_sq for tr in traces] for traces in traces_by_seed])
    mean = G.mean(axis=0)
    t_min = int(np.argmin(mean))
    emp = float(mean[t_min])
    lhs, rhs = probability_constraint(inputs, n)
    ak = alpha_kappa(inputs)
    common = dict(empirical_min=emp, argmin_t=t_min, n_seeds=len(traces_by_seed),
                  alpha_kappa=ak, constraint_lhs=lhs, constraint_rhs=rhs,
                  constraint_ok=lhs <= rhs, inputs=asdict(inputs))
    if ak <= 0:
        return BoundReport(vacuous=True, delta_f_term=math.inf, phi=math.inf, bound=math.inf,
                             margin=math.inf, holds=True, **common)
    df_term = inputs.Delta_F / (math.sqrt(inputs.T) * ak)
    phi = phi_bound(inputs)
    bound = df_term + phi
    return BoundReport(vacuous=False, delta_f_term=df_term, phi=phi, bound=bound,
                         margin=bound - emp, holds=emp <= bound, **common)


@dataclass
class MeasuredConstants:
    L: float
    A: float
    sigma_L: float
    sigma_G: float
    c_nu: float

    def bound_inputs(self, **rest) -> BoundInputs:
        return BoundInputs(L=self.L, A=self.A, sigma_L=self.sigma_L, sigma_G=self.sigma_G,
                           c_nu=self.c_nu, **rest)


def default_w_grid(problem: FederatedProblem, w_star, n_random: int = 20, seed: int = 0,
                   w0=None):
    """Points on the segment from ``w0`` to ``w_star`` plus Gaussian perturbations of them."""
    w0 = np.zeros(problem.dim) if w0 is None else np.asarray(w0, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    line = [w0 + s * (w_star - w0) for s in np.linspace(0.0, 1.0, 11)]
    rng = np.random.default_rng(seed)
    radius = max(float(np.linalg.norm(w_star - w0)), 1.0)
    extra = [line[rng.integers(len(line))] + rng.normal(0.0, 0.25 * radius / math.sqrt(problem.dim),
                                                        problem.dim)
             for _ in range(n_random)]
    return line + extra


def estimate_constants(problem: FederatedProblem, w_grid, *, clip: float, K_max: int = 1,
                       K_min: int = 1, local_epochs: int = 1, mc_draws: int = 200,
                       smoothness_trials: int = 200, seed: int = 0) -> MeasuredConstants:
    """Measure the assumption constants on ``w_grid``.

    * sigma_L^2: largest per-sample gradient variance of any client, computed
      exactly over the client's local data.
    * A, sigma_G: least-squares slope (floored at 1) of mean_i||grad f_i||^2
      against ||grad F||^2, with sigma_G^2 the largest excess above that line.
    * c_nu^2: largest Monte-Carlo mean of the squared clipping residual of a
      local gradient estimate.
    * L: largest estimated local smoothness constant.
    """
    obj = problem.objective
    rng = np.random.default_rng(seed)
    var_L = 0.0
    clip_sq = 0.0
    xs, ys = [], []
    for w in w_grid:
        w = np.asarray(w, dtype=float)
        local = []
        for data in problem.clients:
            G = obj.gradients(w, data.features, data.labels)
            g = G.mean(axis=0)
            local.append(g)
            var_L = max(var_L, float(np.mean(np.sum((G - g) ** 2, axis=1))))
            kk = min(max(len(data), K_min), K_max)
            resid = 0.0
            for _ in range(mc_draws):
                est = np.zeros(problem.dim)
                for _ in range(local_epochs):
                    idx = rng.integers(0, len(data), size=kk)
                    est += G[idx].mean(axis=0)
                _, r = clip_vector(est / local_epochs, clip)
                resid += r * r
            clip_sq = max(clip_sq, resid / mc_draws)
        local = np.array(local)
        gF = local.mean(axis=0)
        xs.append(float(gF @ gF))
        ys.append(float(np.mean(np.sum(local**2, axis=1))))
    xs, ys = np.array(xs), np.array(ys)
    if np.ptp(xs) > 0:
        slope = float(np.polyfit(xs, ys, 1)[0])
    else:
        slope = 1.0
    slope = max(slope, 1.0)
    sigma_G_sq = max(0.0, float(np.max(ys - slope * xs)))
    L = max(estimate_smoothness(obj, data, smoothness_trials, seed=seed + i)
            for i, data in enumerate(problem.clients))
    return MeasuredConstants(L=L, A=math.sqrt(slope - 1.0), sigma_L=math.sqrt(var_L),
                             sigma_G=math.sqrt(sigma_G_sq), c_nu=math.sqrt(clip_sq))
