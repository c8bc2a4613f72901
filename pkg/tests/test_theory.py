from __future__ import annotations

import dataclasses
import json
import math

import mpmath
import numpy as np
import pytest

from locksim import server, theory
from locksim.models import make_federated_problem

GOLDEN = theory.BoundInputs(L=2.5, A=0.5, sigma_L=0.3, sigma_G=0.2, c_nu=0.05, sigma_0=0.1,
                            eta_b=0.01, b=10, V_0=2, T=1000, d=5, K_max=10, K_min=5, Delta_F=3)
# evaluated once at 50 significant digits and frozen
GOLDEN_ALPHA_KAPPA = 0.0096701195838577649401
GOLDEN_PHI = 0.38288172710952198673
GOLDEN_BOUND = 10.193342599115091122


def with_(**kw):
    return dataclasses.replace(GOLDEN, **kw)


def mp_alpha_kappa(p):
    mpmath.mp.dps = 50
    rt = mpmath.sqrt(p.T)
    return (p.eta_b * (rt - 1) / rt
            - mpmath.mpf(p.V_0) * p.L * p.eta_b**2 * mpmath.log(p.T) * (p.A**2 + 1) / (p.b * rt))


def test_golden_values():
    assert theory.alpha_kappa(GOLDEN) == pytest.approx(GOLDEN_ALPHA_KAPPA, rel=1e-12)
    assert theory.phi_bound(GOLDEN) == pytest.approx(GOLDEN_PHI, rel=1e-12)
    assert theory.bound_value(GOLDEN) == pytest.approx(GOLDEN_BOUND, rel=1e-12)


@pytest.mark.parametrize("T,V0,A", [(2, 1.5, 0.0), (50, 4.0, 1.0), (10**6, 2.0, 0.3)])
def test_alpha_kappa_against_high_precision(T, V0, A):
    p = with_(T=T, V_0=V0, A=A)
    assert theory.alpha_kappa(p) == pytest.approx(float(mp_alpha_kappa(p)), rel=1e-12)


def test_alpha_kappa_properties():
    rt = math.sqrt(GOLDEN.T)
    # L must be positive, so check the L -> 0 limit instead of L = 0 itself
    assert theory.alpha_kappa(with_(L=1e-300)) == pytest.approx(GOLDEN.eta_b * (rt - 1) / rt)
    assert theory.alpha_kappa(with_(T=10**6)) == pytest.approx(GOLDEN.eta_b, rel=0.01)
    assert theory.alpha_kappa(with_(V_0=3)) < theory.alpha_kappa(GOLDEN)
    with pytest.raises(ValueError):
        theory.alpha_kappa(with_(T=1))


def test_phi_zero_without_variance():
    assert theory.phi_bound(with_(sigma_L=0, c_nu=0, sigma_G=0, sigma_0=0)) == 0.0


def test_phi_noise_term_is_quadratic():
    base = with_(sigma_L=0, c_nu=0, sigma_G=0, sigma_0=0.1)
    doubled = with_(sigma_L=0, c_nu=0, sigma_G=0, sigma_0=0.2)
    assert theory.phi_bound(doubled) == pytest.approx(4 * theory.phi_bound(base), rel=1e-13)


def test_vacuous_bound():
    bad = with_(eta_b=50.0)
    assert theory.alpha_kappa(bad) <= 0
    with pytest.raises(theory.VacuousBoundError):
        theory.phi_bound(bad)


def test_input_validation():
    with pytest.raises(ValueError):
        with_(V_0=1.0)
    with pytest.raises(ValueError):
        with_(sigma_L=-0.1)
    with pytest.raises(ValueError):
        with_(K_min=11)


def test_probability_constraint():
    lhs, rhs = theory.probability_constraint(GOLDEN, 100)
    assert lhs == 200
    assert rhs == pytest.approx(10 * 100 / (2.5 * 1e-4 * 1.25))


def golden_run(seeds=range(3), T=20):
    cfg = server.RunConfig(n_clients=10, m=10, k=1, probability_mode="fixed", v0=2.0, T=T,
                           eta_b=0.5, dim=2, sigma_s=0, sigma_0=0, nonprivate=True,
                           samples_min=5, samples_max=10, K_min=5)
    problem = server.build_problem(cfg)
    return cfg, problem, [server.run(cfg.replace(seed=s), problem).traces for s in seeds]


def test_check_reports_and_serialises():
    cfg, problem, traces = golden_run()
    rep = theory.check_convergence_bound(traces, with_(T=cfg.T, d=2), 10)
    assert rep.n_seeds == 3 and not rep.vacuous
    assert rep.margin == pytest.approx(rep.bound - rep.empirical_min)
    assert json.loads(rep.to_json())["holds"] == rep.holds
    assert "margin" in rep.text()
    vac = theory.check_convergence_bound(traces, with_(T=cfg.T, d=2, eta_b=50.0), 10)
    assert vac.vacuous and "vacuous" in vac.text()


def test_check_refuses_nonuniform():
    cfg = server.RunConfig(n_clients=10, m=10, T=3, dim=2, probability_mode="locks")
    traces = [server.run(cfg).traces]
    with pytest.raises(ValueError, match="non-uniform"):
        theory.check_convergence_bound(traces, with_(T=3, d=2), 10)


def test_constants_vanish_for_identical_clients():
    p = make_federated_problem(5, (6, 6), 0.0, seed=0, dim=3, identical_clients=True)
    w_star, _ = p.minimize()
    c = theory.estimate_constants(p, theory.default_w_grid(p, w_star), clip=1e6, mc_draws=20,
                                  smoothness_trials=20)
    assert c.A == 0.0
    assert c.sigma_G < 1e-7
    assert c.c_nu == 0.0


def test_heterogeneity_raises_constants():
    kw = dict(dim=3, kind="logistic")
    iid = make_federated_problem(20, (20, 20), 0.0, seed=1, **kw)
    het = make_federated_problem(20, (20, 20), 1.0, seed=1, **kw)
    consts = []
    for p in (iid, het):
        grid = theory.default_w_grid(p, p.minimize()[0])
        consts.append(theory.estimate_constants(p, grid, clip=10.0, mc_draws=5,
                                                smoothness_trials=20))
    assert consts[1].sigma_G > consts[0].sigma_G


def test_smoothness_constant_below_analytic():
    p = make_federated_problem(5, (5, 8), 0.5, seed=2, dim=3)
    c = theory.estimate_constants(p, [np.zeros(3)], clip=1.0, mc_draws=5)
    assert 0 < c.L <= p.smoothness() + 1e-9


def test_clipping_constant_positive_when_clipping():
    p = make_federated_problem(5, (5, 8), 0.0, seed=3, dim=3, signal=20.0)
    c = theory.estimate_constants(p, [np.zeros(3)], clip=0.01, mc_draws=20)
    assert c.c_nu > 0
