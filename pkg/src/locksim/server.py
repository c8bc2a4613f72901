"""Server loop: sampling, aggregation, model update, accounting and traces."""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np
from scipy import stats

from . import dp
from .client import Client
from .idx import load_idx
from .models import FederatedProblem, Objective, make_federated_problem, split_dataset
from .sampling import (ESTIMATOR_MODES, PROBABILITY_MODES, RoundPlan, SamplingConfig,
                       aggregate, round_probs, stage1_sample, stage2_sample)


class DivergenceError(RuntimeError):
    def __init__(self, round_, traces):
        super().__init__(f"training diverged (non-finite values) in round {round_}")
        self.round = round_
        self.traces = traces


@dataclass(frozen=True)
class RunConfig:
    # sampling
    n_clients: int = 100
    m: int = 20
    k: int = 1
    clip: float = 1.0
    probability_mode: str = "locks"
    v0: float = 2.0
    estimator_mode: str = "scaled"
    # optimisation
    eta_b: float = 0.5
    T: int = 100
    K_max: int = 10
    K_min: int = 1
    local_epochs: int = 1
    # privacy
    sigma_s: float = 1.0
    sigma_0: float = 1.0
    nonprivate: bool = False
    delta: float = 1e-5
    amplification: bool = True
    # problem
    kind: str = "least_squares"
    beta: float = 0.1
    dim: int = 10
    samples_min: int = 10
    samples_max: int = 10
    heterogeneity: float = 0.0
    identical_clients: bool = False
    signal: float = 2.0
    label_noise: float = 0.1
    problem_seed: int = 0
    data_source: str = "synthetic"
    idx_images: str = ""
    idx_labels: str = ""
    idx_max_samples: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.K_min <= self.K_max:
            raise ValueError(f"need 1 <= K_min <= K_max, got {self.K_min}, {self.K_max}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if not self.eta_b > 0:
            raise ValueError("eta_b must be positive")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.sigma_s < 0 or self.sigma_0 < 0:
            raise ValueError("noise scales must be non-negative")
        if (self.sigma_s == 0 or self.sigma_0 == 0) and not self.nonprivate:
            raise ValueError("a zero noise scale requires nonprivate = true")
        if self.estimator_mode not in ESTIMATOR_MODES:
            raise ValueError(f"estimator_mode must be one of {ESTIMATOR_MODES}")
        if self.probability_mode not in PROBABILITY_MODES:
            raise ValueError(f"probability_mode must be one of {PROBABILITY_MODES}")
        if not 0 < self.delta < 1:
            raise ValueError("delta must be in (0, 1)")
        if self.data_source not in ("synthetic", "idx"):
            raise ValueError("data_source must be 'synthetic' or 'idx'")
        self.sampling  # validates n, m, k, clip

    @property
    def sampling(self) -> SamplingConfig:
        return SamplingConfig(self.n_clients, self.m, self.k, self.clip)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: type(f.default) for f in fields(cls)}


@dataclass
class RoundTrace:
    t: int
    eta_t: float
    grad_norm_sq: float
    loss: float
    estimator_norm: float
    batch_size: int
    epsilon: float
    plan: RoundPlan
    nonprivate: bool = False
    wall_time: float = 0.0

    @property
    def skipped(self) -> bool:
        return self.plan.skipped

    def metrics_row(self) -> dict:
        return {"t": self.t, "eta_t": self.eta_t, "grad_norm_sq": self.grad_norm_sq,
                "loss": self.loss, "batch_size": self.batch_size, "epsilon": self.epsilon}

    def to_dict(self) -> dict:
        out = self.metrics_row()
        out.update(estimator_norm=self.estimator_norm, skipped=self.skipped,
                   nonprivate=self.nonprivate, wall_time=self.wall_time, plan=self.plan.to_dict())
        return out


@dataclass
class RunResult:
    w: np.ndarray
    traces: list[RoundTrace]
    ledger: dp.PrivacyLedger
    config: RunConfig
    final_loss: float = math.nan
    final_grad_norm_sq: float = math.nan
    w0: np.ndarray = field(default=None, repr=False)

    @property
    def epsilon(self) -> float:
        return self.ledger.epsilon(self.config.delta) if self.ledger.steps else 0.0


def learning_rate(eta_b: float, t: int) -> float:
    return eta_b / math.sqrt(t + 1)


def build_problem(config: RunConfig) -> FederatedProblem:
    if config.data_source == "idx":
        if not (config.idx_images and config.idx_labels):
            raise ValueError("data_source = idx needs both idx_images and idx_labels")
        data = load_idx(config.idx_images, config.idx_labels, config.idx_max_samples,
                        seed=config.problem_seed)
        shards = split_dataset(data, config.n_clients, seed=config.problem_seed)
        return FederatedProblem(Objective(config.kind, config.beta), tuple(shards),
                                np.zeros(data.dim), 0.0)
    return make_federated_problem(
        config.n_clients, (config.samples_min, config.samples_max), config.heterogeneity,
        config.problem_seed, dim=config.dim, kind=config.kind, beta=config.beta,
        signal=config.signal, noise=config.label_noise,
        identical_clients=config.identical_clients,
    )


def mechanism_costs(config: RunConfig, orders=dp.DEFAULT_ORDERS):
    """Per-round RDP cost of the norm release and of the gradient release.

    With amplification each release is charged as a Poisson-subsampled
    Gaussian at the client's worst-case inclusion rate: m/n for norms and
    b/n for gradients (stage-2 probabilities never exceed 1).
    """
    cfg = config.sampling

    def cost(sigma, rate):
        if sigma == 0:
            return np.full(len(orders), np.inf)
        z = sigma / cfg.clip
        if config.amplification:
            return dp.subsampled_gaussian_costs(rate, z, orders)
        return np.array([dp.rdp_gaussian_cost(z, 1.0, a) for a in orders])

    return cost(config.sigma_s, cfg.rate), cost(config.sigma_0, cfg.b / cfg.n)


def run(config: RunConfig, problem: FederatedProblem | None = None, w0=None) -> RunResult:
    """Execute ``config.T`` rounds and return the final model, traces and ledger."""
    problem = build_problem(config) if problem is None else problem
    if problem.n_clients != config.n_clients:
        raise ValueError(f"problem has {problem.n_clients} clients, config expects {config.n_clients}")
    cfg = config.sampling
    server_ss, clients_ss = np.random.SeedSequence(config.seed).spawn(2)
    server_rng = np.random.default_rng(server_ss)
    clients = [Client(i, data, problem.objective, np.random.default_rng(ss))
               for i, (data, ss) in enumerate(zip(problem.clients, clients_ss.spawn(cfg.n)))]
    norm_cost, grad_cost = mechanism_costs(config)
    ledger = dp.PrivacyLedger()
    w = np.zeros(problem.dim) if w0 is None else np.array(w0, dtype=float)
    w_start = w.copy()
    dim = problem.dim
    protocol = dict(clip=cfg.clip, nonprivate=config.nonprivate)
    traces: list[RoundTrace] = []

    for t in range(config.T):
        tic = time.perf_counter()
        eta = learning_rate(config.eta_b, t)
        # simulation-only diagnostics; not part of the private protocol
        with np.errstate(over="ignore", invalid="ignore"):
            g_true = problem.gradient(w)
            f_true = problem.loss(w)
            gsq = float(g_true @ g_true)
        if not (math.isfinite(f_true) and np.all(np.isfinite(g_true))):
            traces.append(RoundTrace(t, eta, gsq, f_true, math.nan, 0,
                                     ledger.epsilon(config.delta), RoundPlan(t, ()),
                                     config.nonprivate, time.perf_counter() - tic))
            raise DivergenceError(t, traces)

        pre = stage1_sample(cfg, server_rng)
        norms = [clients[i].propose(w, sigma_s=config.sigma_s, K_max=config.K_max,
                                    K_min=config.K_min, local_epochs=config.local_epochs,
                                    **protocol)
                 for i in pre]
        ledger = dp.compose(ledger, norm_cost)
        if norms:
            probs, z_sum, z_clamped = round_probs(cfg, norms, config.probability_mode, config.v0)
            batch = stage2_sample(probs, cfg.k, server_rng)
        else:
            probs, z_sum, z_clamped, batch = {}, 0.0, 0.0, np.array([], dtype=int)
        plan = RoundPlan(t, tuple(int(i) for i in pre), probs, tuple(int(i) for i in batch),
                         z_sum, z_clamped, len(pre))

        releases = [clients[i].submit(sigma_0=config.sigma_0, **protocol) for i in batch]
        for i in pre:
            clients[i].discard()
        if releases:
            delta_t = aggregate(config.estimator_mode, releases, probs, cfg, dim)
            w = w - eta * delta_t
            ledger = dp.compose(ledger, grad_cost)
        else:
            delta_t = np.zeros(dim)

        eps = ledger.epsilon(config.delta)
        traces.append(RoundTrace(t, eta, gsq, f_true,
                                 float(np.linalg.norm(delta_t)), len(batch), eps, plan,
                                 config.nonprivate, time.perf_counter() - tic))
        if not np.all(np.isfinite(w)):
            raise DivergenceError(t, traces)

    g_final = problem.gradient(w)
    return RunResult(w, traces, ledger, config, problem.loss(w), float(g_final @ g_final), w_start)


def centralized_sgd(problem: FederatedProblem, eta_b: float, T: int, batch_size: int,
                    seed: int = 0, w0=None) -> tuple[np.ndarray, list[float]]:
    """Plain minibatch SGD on the pooled data with the same step-size schedule.

    Samples are drawn with the weights that make the pooled minibatch gradient
    unbiased for the client-averaged objective. Returns the final parameters
    and the loss before each step.
    """
    X, y, wt = problem._stacked
    rng = np.random.default_rng(seed)
    w = np.zeros(problem.dim) if w0 is None else np.array(w0, dtype=float)
    losses = []
    for t in range(T):
        losses.append(problem.loss(w))
        idx = rng.choice(len(y), size=batch_size, p=wt)
        g = problem.objective.gradients(w, X[idx], y[idx]).mean(axis=0)
        w = w - learning_rate(eta_b, t) * g
    return w, losses


def schedule_T_for_dimension(d: int) -> int:
    """Smallest T >= 2 from which T >= d^2 (ln T)^2 holds for good.

    Fixed-point iteration T <- d^2 (ln T)^2 from above converges to the
    largest root; the integer answer is then settled by a local scan.
    """
    if d < 1:
        raise ValueError("d must be >= 1")

    def ok(T):
        return T >= d * d * math.log(T) ** 2

    T = max(16.0, 100.0 * d * d * math.log(10.0 * d + 10.0) ** 2)
    for _ in range(10_000):
        nxt = d * d * math.log(T) ** 2
        if abs(nxt - T) < 1e-9:
            break
        T = nxt
    T = max(2, math.ceil(T))
    while T > 2 and ok(T - 1):
        T -= 1
    while not ok(T):
        T += 1
    return T


@dataclass
class Comparison:
    seeds: list[int]
    T: int
    final_loss: dict  # arm -> list over seeds
    per_round: list[dict]  # one row per (arm, seed, t)
    summary_rows: list[dict]  # one row per (arm, t): mean and SE
    n_locks_better: int = 0
    n_uniform_better: int = 0
    p_two_sided: float = 1.0
    p_locks_better: float = 1.0

    @property
    def medians(self) -> dict:
        return {arm: float(np.median(v)) for arm, v in self.final_loss.items()}

    @property
    def indistinguishable(self) -> bool:
        return self.p_two_sided > 0.05

    def report(self) -> str:
        med = self.medians
        lines = [
            f"seeds: {len(self.seeds)}, rounds: {self.T}",
            f"median final loss: locks {med['locks']:.6g}, uniform {med['uniform']:.6g}",
            f"paired sign test: locks better in {self.n_locks_better}, uniform better in "
            f"{self.n_uniform_better}, two-sided p = {self.p_two_sided:.4g}, "
            f"one-sided p (locks better) = {self.p_locks_better:.4g}",
        ]
        if self.indistinguishable:
            lines.append("verdict: indistinguishable")
        else:
            better = "locks" if self.n_locks_better > self.n_uniform_better else "uniform"
            lines.append(f"verdict: {better} better")
        return "\n".join(lines)


def sign_test(a, b) -> tuple[int, int, float, float]:
    """Paired sign test on ``a - b``; returns (#a smaller, #b smaller, two-sided p, one-sided p)."""
    d = np.asarray(a) - np.asarray(b)
    neg, pos = int(np.sum(d < 0)), int(np.sum(d > 0))
    if neg + pos == 0:
        return 0, 0, 1.0, 1.0
    two = stats.binomtest(neg, neg + pos, 0.5).pvalue
    one = stats.binomtest(neg, neg + pos, 0.5, alternative="greater").pvalue
    return neg, pos, float(two), float(one)


def compare_uniform_vs_locks(config: RunConfig, seeds, problem: FederatedProblem | None = None
                             ) -> Comparison:
    """Paired runs of constant ``p = 1/v0`` and norm-proportional stage-2 probabilities.

    Both arms share the problem and the seeds; only the probability rule differs.
    """
    seeds = [int(s) for s in seeds]
    if len(seeds) < 3:
        raise ValueError("comparison needs at least 3 seeds")
    problem = build_problem(config) if problem is None else problem
    arms = {"uniform": config.replace(probability_mode="fixed"),
            "locks": config.replace(probability_mode="locks")}
    final = {arm: [] for arm in arms}
    curves = {arm: [] for arm in arms}
    per_round = []
    for arm, cfg in arms.items():
        for s in seeds:
            res = run(cfg.replace(seed=s), problem)
            final[arm].append(res.final_loss)
            curves[arm].append([(tr.loss, tr.grad_norm_sq) for tr in res.traces])
            per_round.extend({"arm": arm, "seed": s, "t": tr.t, "loss": tr.loss,
                              "grad_norm_sq": tr.grad_norm_sq, "batch_size": tr.batch_size,
                              "epsilon": tr.epsilon} for tr in res.traces)
    summary = []
    for arm, c in curves.items():
        a = np.array(c)  # seeds x T x 2
        mean = a.mean(axis=0)
        se = a.std(axis=0, ddof=1) / math.sqrt(a.shape[0])
        summary.extend({"arm": arm, "t": t, "loss_mean": mean[t, 0], "loss_se": se[t, 0],
                        "grad_norm_sq_mean": mean[t, 1], "grad_norm_sq_se": se[t, 1]}
                       for t in range(a.shape[1]))
    neg, pos, p2, p1 = sign_test(final["locks"], final["uniform"])
    return Comparison(seeds, config.T, final, per_round, summary, neg, pos, p2, p1)
