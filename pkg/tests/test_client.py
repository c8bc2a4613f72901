from __future__ import annotations

import numpy as np
import pytest

from locksim.client import NORM_FLOOR, Client
from locksim.dp import clip_vector
from locksim.models import Dataset, Objective, full_gradient


class CountingRng:
    """Wraps a generator and records how many integers it handed out."""

    def __init__(self, seed=0):
        self._rng = np.random.default_rng(seed)
        self.drawn = 0

    def integers(self, low, high, size):
        self.drawn += int(np.prod(size))
        return self._rng.integers(low, high, size=size)

    def normal(self, *args, **kwargs):
        return self._rng.normal(*args, **kwargs)


class FixedNoise:
    def __init__(self, value):
        self.value = value

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.value


def make_client(n=12, d=3, seed=0, kind="least_squares", rng=None, K=None):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, d))
    y = r.normal(size=n) if kind == "least_squares" else r.integers(0, 2, n).astype(float)
    return Client(0, Dataset(X, y), Objective(kind), rng or np.random.default_rng(seed + 1), K=K)


def test_single_sample_client():
    data = Dataset(np.array([[1.0, -2.0]]), np.array([0.5]))
    c = Client(3, data, Objective(), np.random.default_rng(0))
    w = np.array([0.2, 0.1])
    for K_max in (1, 4, 9):
        np.testing.assert_allclose(c.local_gradient(w, K_max, 1), full_gradient(Objective(), w, data))


def test_local_gradient_unbiased():
    c = make_client(kind="logistic")
    w = np.array([0.3, -0.2, 0.5])
    draws = np.array([c.local_gradient(w, K_max=3, K_min=1) for _ in range(10_000)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    truth = full_gradient(c._objective, w, c._data)
    assert np.all(np.abs(draws.mean(axis=0) - truth) <= 3 * se)


@pytest.mark.parametrize("K,K_min,K_max,expected", [(12, 1, 5, 5), (2, 4, 8, 4), (6, 1, 10, 6)])
def test_local_sample_count_is_clamped(K, K_min, K_max, expected):
    rng = CountingRng()
    c = make_client(rng=rng, K=K)
    c.local_gradient(np.zeros(3), K_max, K_min)
    assert rng.drawn == expected
    c.local_gradient(np.zeros(3), K_max, K_min, local_epochs=3)
    assert rng.drawn == 4 * expected


def test_bad_sample_bounds():
    with pytest.raises(ValueError):
        make_client().local_gradient(np.zeros(3), K_max=2, K_min=3)
    with pytest.raises(ValueError):
        Client(0, Dataset(np.zeros((0, 2)), np.zeros(0)), Objective(), np.random.default_rng())


def test_norm_release_noiseless():
    c = make_client()
    rel = c.release_norm(np.array([0.7, 0.0, 0.0]), 0.0, nonprivate=True)
    assert rel.z_tilde == 0.7 and not rel.floored


def test_norm_release_floor():
    c = make_client()
    rel = c.release_norm(np.zeros(3), 1.0, rng=FixedNoise(-2.3))
    assert rel.z_tilde == NORM_FLOOR == 1e-6 and rel.floored


def test_zero_noise_needs_nonprivate_flag():
    c = make_client()
    with pytest.raises(ValueError):
        c.release_norm(np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        c.release_gradient(np.zeros(3), 0.0)
    with pytest.raises(ValueError):
        c.release_gradient(np.zeros(3), -1.0, nonprivate=True)


def test_release_rejects_unclipped():
    c = make_client()
    with pytest.raises(ValueError):
        c.release_gradient(np.array([2.0, 0.0, 0.0]), 1.0, clip=1.0)


def test_norm_release_mean():
    c = make_client(seed=4)
    g = np.array([0.6, 0.8, 0.0])
    z = np.array([c.release_norm(g, 0.1).z_tilde for _ in range(100_000)])
    assert abs(z.mean() - 1.0) <= 3 * z.std(ddof=1) / np.sqrt(z.size)


def test_gradient_release_noise_statistics():
    c = make_client(seed=5)
    g = np.array([0.1, -0.2, 0.3])
    sigma = 0.7
    noise = np.array([c.release_gradient(g, sigma).noised_clipped_gradient - g
                      for _ in range(100_000)])
    var = noise.var(axis=0, ddof=1)
    assert np.all(np.abs(var / sigma**2 - 1) < 0.05)
    prod = noise[:, 0] * noise[:, 1]
    assert abs(prod.mean()) <= 3 * prod.std(ddof=1) / np.sqrt(prod.size)
    exact = c.release_gradient(g, 0.0, nonprivate=True).noised_clipped_gradient
    assert np.array_equal(exact, g)


def test_protocol_clips_before_release():
    clip = 0.5
    w = np.array([3.0, -3.0, 2.0])
    pre = []
    for seed in range(6):
        c = make_client(seed=seed)
        c.propose(w, clip=clip, sigma_s=0.0, K_max=4, K_min=1, nonprivate=True)
        rel = c.submit(sigma_0=0.0, clip=clip, nonprivate=True)
        pre.append(rel.noised_clipped_gradient)
        assert np.linalg.norm(rel.noised_clipped_gradient) <= clip * (1 + 1e-12)
    for a in pre:
        for b in pre:
            assert np.linalg.norm(a - b) <= 2 * clip * (1 + 1e-12)


def test_submit_requires_propose_and_is_single_use():
    c = make_client()
    with pytest.raises(RuntimeError):
        c.submit(sigma_0=1.0, clip=1.0)
    c.propose(np.zeros(3), clip=1.0, sigma_s=1.0, K_max=2, K_min=1)
    c.submit(sigma_0=1.0, clip=1.0)
    with pytest.raises(RuntimeError):
        c.submit(sigma_0=1.0, clip=1.0)
    c.propose(np.zeros(3), clip=1.0, sigma_s=1.0, K_max=2, K_min=1)
    c.discard()
    with pytest.raises(RuntimeError):
        c.submit(sigma_0=1.0, clip=1.0)


def test_propose_norm_matches_clipped_local_gradient():
    a = make_client(seed=2)
    b = make_client(seed=2)
    w = np.array([1.0, 2.0, -1.0])
    rel = a.propose(w, clip=0.3, sigma_s=0.0, K_max=5, K_min=1, nonprivate=True)
    g, _ = clip_vector(b.local_gradient(w, 5, 1), 0.3)
    assert rel.z_tilde == pytest.approx(np.linalg.norm(g), rel=1e-14)


def test_client_streams_are_independent():
    root = np.random.SeedSequence(0).spawn(2)
    X, y = np.ones((1, 1)), np.zeros(1)
    a = Client(0, Dataset(X, y), Objective(), np.random.default_rng(root[0]))
    b = Client(1, Dataset(X, y), Objective(), np.random.default_rng(root[1]))
    g = np.zeros(1)
    na = np.array([a.release_norm(g, 1.0).z_tilde for _ in range(5000)])
    nb = np.array([b.release_norm(g, 1.0).z_tilde for _ in range(5000)])
    # flooring makes the draws non-Gaussian but keeps them independent
    assert abs(np.corrcoef(na, nb)[0, 1]) < 3 / np.sqrt(5000)


def test_release_serialises():
    rel = make_client().release_norm(np.zeros(3), 1.0, rng=FixedNoise(0.25))
    assert rel.to_dict() == {"client_id": 0, "z_tilde": 0.25, "floored": False}
