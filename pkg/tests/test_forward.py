import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from probuq.distributions import Normal, Uniform
from probuq.errors import NoFailureFound, ZeroDensityAtSample
from probuq.samplers.forward import (
    ImportanceDensity,
    adaptive_importance_sampling,
    importance_estimate,
    latin_hypercube,
    monte_carlo,
    std_normal_logpdf,
    to_physical,
    to_standard_normal,
)


def test_monte_carlo_moments():
    X = monte_carlo(200_000, [Normal(1.0, 2.0), Uniform(0.0, 1.0)], np.random.default_rng(0))
    assert X[:, 0].mean() == pytest.approx(1.0, abs=4 * 2.0 / math.sqrt(2e5))
    assert X[:, 0].std() == pytest.approx(2.0, rel=0.01)
    assert stats.skew(X[:, 0]) == pytest.approx(0.0, abs=0.02)
    assert X[:, 1].mean() == pytest.approx(0.5, abs=0.005)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 60), st.integers(0, 2**31))
def test_latin_hypercube_stratifies_every_column(n, seed):
    dists = [Uniform(0.0, 1.0), Uniform(-2.0, 2.0)]
    X = latin_hypercube(n, dists, np.random.default_rng(seed))
    for j, d in enumerate(dists):
        strata = np.floor(np.asarray(d.cdf(X[:, j])) * n).astype(int)
        np.testing.assert_array_equal(np.sort(strata), np.arange(n))


def test_latin_hypercube_pairing_is_random():
    X = latin_hypercube(500, [Uniform(0.0, 1.0)] * 2, np.random.default_rng(1))
    assert abs(stats.spearmanr(X[:, 0], X[:, 1]).statistic) < 0.15


def test_standard_normal_round_trip(rng):
    dists = [Normal(1.0, 3.0), Uniform(-1.0, 2.0)]
    U = rng.standard_normal((50, 2))
    np.testing.assert_allclose(to_standard_normal(to_physical(U, dists), dists), U, atol=1e-8)


def test_importance_with_identical_densities_is_plain_mean(rng):
    X = rng.standard_normal((1000, 1))
    r = importance_estimate(X, std_normal_logpdf, std_normal_logpdf, lambda Z: Z[:, 0] ** 2)
    assert r.estimate == pytest.approx(np.mean(X[:, 0] ** 2), rel=1e-12)
    np.testing.assert_allclose(r.weights, 1.0)
    assert r.effective_sample_size == pytest.approx(1000)
    ones = importance_estimate(X, std_normal_logpdf, std_normal_logpdf, lambda Z: np.ones(len(Z)))
    assert ones.estimate == pytest.approx(1.0) and ones.variance == pytest.approx(0.0, abs=1e-15)


def test_importance_tail_probability():
    f = ImportanceDensity([[2.5]], [[1.0]])
    X = f.sample(10_000, np.random.default_rng(3))
    r = importance_estimate(X, std_normal_logpdf, f.logpdf, lambda Z: (Z[:, 0] > 2).astype(float))
    truth = stats.norm.sf(2.0)
    assert abs(r.estimate - truth) < 3 * r.std_error
    assert r.std_error / truth < 0.05


def test_importance_rejects_zero_sampling_density():
    X = np.array([[0.0], [5.0]])
    with pytest.raises(ZeroDensityAtSample):
        importance_estimate(X, std_normal_logpdf, lambda Z: np.where(Z[:, 0] > 1, -np.inf, 0.0),
                            lambda Z: np.ones(len(Z)))


def test_mixture_density_normalized():
    q = ImportanceDensity([[0.0], [3.0]], [[[1.0]], [[0.25]]], [1.0, 3.0])
    grid = np.linspace(-8, 8, 4001)[:, None]
    assert np.trapezoid(np.exp(q.logpdf(grid)), grid[:, 0]) == pytest.approx(1.0, abs=1e-6)


def test_ais_rare_event():
    res = adaptive_importance_sampling(lambda X: X[:, 0], [Normal(0.0, 1.0)], 200, 4000,
                                       np.random.default_rng(7), threshold=3.0)
    truth = stats.norm.sf(3.0)
    assert abs(res.failure_probability - truth) < 3 * res.estimate.std_error
    # Chain proposals rejected on the prior ratio skip the model.
    assert 4000 + 50 <= res.model_calls <= 4200


def test_ais_everywhere_failing():
    res = adaptive_importance_sampling(lambda X: np.ones(len(X)), [Normal(0.0, 1.0)] * 2, 50, 20_000,
                                       np.random.default_rng(0), threshold=0.0)
    assert res.failure_probability == pytest.approx(1.0, abs=0.05)


def test_ais_reproducible_and_no_failure():
    def g(X):
        return X[:, 0] + X[:, 1]
    dists = [Normal(0.0, 1.0)] * 2
    a = adaptive_importance_sampling(g, dists, 100, 500, np.random.default_rng(2), threshold=3.0)
    b = adaptive_importance_sampling(g, dists, 100, 500, np.random.default_rng(2), threshold=3.0)
    assert a.failure_probability == b.failure_probability
    with pytest.raises(NoFailureFound):
        adaptive_importance_sampling(lambda X: np.zeros(len(X)), dists, 20, 10, np.random.default_rng(0))
