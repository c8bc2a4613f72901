from __future__ import annotations

import math

import numpy as np
import pytest

from locksim import dp, server
from locksim.config import load_config
from locksim.models import make_federated_problem
from locksim.server import RunConfig

QUIET = dict(sigma_s=0.0, sigma_0=0.0, nonprivate=True)


def small(**kw):
    base = dict(n_clients=10, m=5, k=1, T=5, dim=3, samples_min=4, samples_max=6)
    base.update(kw)
    return RunConfig(**base)


def scan_schedule(d, limit=100_000):
    """Smallest T >= 2 with T >= d^2 ln^2 T for every T' >= T up to ``limit``."""
    ok = [False] + [T >= d * d * math.log(T) ** 2 for T in range(1, limit + 1)]
    T = limit
    while T - 1 >= 2 and ok[T - 1]:
        T -= 1
    return T


def test_learning_rate_schedule():
    res = server.run(small(T=4, eta_b=0.8))
    assert [tr.eta_t for tr in res.traces] == [0.8, 0.8 / math.sqrt(2), 0.8 / math.sqrt(3), 0.4]


def test_one_noiseless_full_batch_step():
    cfg = small(T=1, m=10, probability_mode="fixed", v0=1.0, K_min=50, K_max=50, clip=100.0,
                samples_min=1, samples_max=1, **QUIET)
    problem = server.build_problem(cfg)
    res = server.run(cfg, problem)
    expected = -cfg.eta_b * problem.gradient(np.zeros(3))
    np.testing.assert_allclose(res.w, expected, rtol=1e-13, atol=1e-15)


def test_update_rule_has_no_hidden_terms(monkeypatch):
    captured = []
    real = server.aggregate

    def spy(*args):
        out = real(*args)
        captured.append(out.copy())
        return out

    monkeypatch.setattr(server, "aggregate", spy)
    cfg = small(T=1, m=10)
    res = server.run(cfg)
    assert res.traces[0].batch_size > 0
    np.testing.assert_allclose(res.w - res.w0, -cfg.eta_b * captured[0], rtol=1e-15)


def test_traces_and_ledger_counts():
    cfg = small(T=30, m=2, k=2, n_clients=20)
    res = server.run(cfg)
    assert [tr.t for tr in res.traces] == list(range(30))
    skipped = sum(tr.skipped for tr in res.traces)
    assert skipped > 0
    assert res.ledger.steps == 2 * 30 - skipped
    eps = [tr.epsilon for tr in res.traces]
    assert all(b >= a for a, b in zip(eps, eps[1:]))


def test_ledger_matches_mechanism_costs():
    cfg = small(T=3, m=10, probability_mode="fixed", v0=1.0)
    res = server.run(cfg)
    norm, grad = server.mechanism_costs(cfg)
    np.testing.assert_allclose(res.ledger.costs, 3 * (norm + grad), rtol=1e-12)
    plain = cfg.replace(amplification=False)
    n2, g2 = server.mechanism_costs(plain)
    np.testing.assert_allclose(n2, [a / 2 for a in dp.DEFAULT_ORDERS])


def test_nonprivate_run_reports_infinite_epsilon():
    res = server.run(small(**QUIET))
    assert math.isinf(res.epsilon)
    assert all(tr.nonprivate for tr in res.traces)


def test_zero_noise_requires_nonprivate():
    with pytest.raises(ValueError):
        small(sigma_s=0.0)
    with pytest.raises(ValueError):
        small(K_min=5, K_max=2)
    with pytest.raises(ValueError):
        small(eta_b=0.0)


def test_run_is_deterministic():
    a = server.run(small(T=8, seed=4))
    b = server.run(small(T=8, seed=4))
    assert np.array_equal(a.w, b.w)
    assert [tr.plan.to_dict() for tr in a.traces] == [tr.plan.to_dict() for tr in b.traces]
    c = server.run(small(T=8, seed=5))
    assert not np.array_equal(a.w, c.w)


def test_divergence_is_reported():
    cfg = small(T=300, eta_b=1e6, m=10, clip=1e300, probability_mode="fixed", v0=1.0, **QUIET)
    with pytest.raises(server.DivergenceError) as info:
        server.run(cfg)
    assert len(info.value.traces) == info.value.round + 1


def test_problem_size_mismatch():
    problem = make_federated_problem(4, dim=3)
    with pytest.raises(ValueError):
        server.run(small(), problem)


def test_schedule_small_dimensions():
    assert server.schedule_T_for_dimension(1) == 2
    assert server.schedule_T_for_dimension(2) == scan_schedule(2)


def test_schedule_golden_d10():
    assert scan_schedule(10) == 8100
    assert server.schedule_T_for_dimension(10) == 8100


def test_schedule_monotone():
    values = [server.schedule_T_for_dimension(d) for d in range(1, 30)]
    assert values == sorted(values)
    for d in (3, 7, 15):
        assert values[d - 1] == scan_schedule(d, limit=200_000)


def test_partial_uniform_noiseless_convergence():
    cfg = load_config("convex-small", ["probability_mode=fixed", "v0=2.0", "nonprivate=true",
                                       "sigma_s=0", "sigma_0=0"])
    problem = server.build_problem(cfg)
    res = server.run(cfg, problem)
    assert math.sqrt(res.final_grad_norm_sq) < 0.1 * math.sqrt(res.traces[0].grad_norm_sq)
    oracle = [problem.loss(server.centralized_sgd(problem, cfg.eta_b, cfg.T, 20, seed=s)[0])
              for s in range(5)]
    assert abs(res.final_loss / np.median(oracle) - 1) < 0.2


def test_centralized_sgd_descends():
    problem = make_federated_problem(10, (5, 5), dim=3, seed=1)
    w, losses = server.centralized_sgd(problem, 0.5, 100, 10)
    assert problem.loss(w) < 0.2 * losses[0]


def test_comparison_needs_three_seeds():
    with pytest.raises(ValueError):
        server.compare_uniform_vs_locks(small(), [0, 1])


def test_comparison_outputs():
    cmp = server.compare_uniform_vs_locks(small(T=4), [0, 1, 2])
    assert len(cmp.per_round) == 2 * 3 * 4
    assert len(cmp.summary_rows) == 2 * 4
    assert "verdict:" in cmp.report()


def test_identical_arms_give_identical_traces():
    cfg = small(T=6, probability_mode="uniform")
    a, b = server.run(cfg), server.run(cfg)
    assert [tr.loss for tr in a.traces] == [tr.loss for tr in b.traces]


def test_sign_test():
    neg, pos, two, one = server.sign_test([1, 2, 3, 4], [2, 3, 4, 5])
    assert (neg, pos) == (4, 0)
    assert two == pytest.approx(0.125) and one == pytest.approx(0.0625)
    assert server.sign_test([1, 1], [1, 1]) == (0, 0, 1.0, 1.0)
