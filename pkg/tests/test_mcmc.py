import math

import numpy as np
import pytest

from probuq.errors import DegenerateEnsembleWarning, InsufficientChains
from probuq.samplers.mcmc import (
    EnsembleState,
    autocorrelation,
    differential_evolution_step,
    gelman_rubin,
    integrated_autocorr_time,
    mcse,
    mh_chain,
    parallel_mh_step,
    run_ensemble,
    stretch_move_step,
)


def _std_normal(X):
    X = np.atleast_2d(X)
    return -0.5 * np.sum(X * X, axis=1)


def _rosenbrock(X):
    X = np.atleast_2d(X)
    return -(100.0 * (X[:, 1] - X[:, 0] ** 2) ** 2 + (1.0 - X[:, 0]) ** 2)


def test_flat_target_accepts_everything(rng):
    res = run_ensemble("mh", lambda X: np.zeros(len(np.atleast_2d(X))), rng.standard_normal((4, 2)), 200, rng)
    assert res.acceptance_rate == 1.0


def test_serial_chain_recovers_standard_normal():
    res = mh_chain(lambda x: -0.5 * float(x @ x), [0.0], 2.4, 50_000, np.random.default_rng(0))
    s = res.samples[:, 0, 0]
    se = mcse(s)[0]
    assert abs(s.mean()) < 3 * se
    assert s.var() == pytest.approx(1.0, rel=0.05)


def test_parallel_mh_accepts_uphill():
    def steep(X):
        return 1e6 * np.atleast_2d(X)[:, 0]

    state = EnsembleState.initialize(np.zeros((10, 1)), steep)
    new = parallel_mh_step(state, steep, 0.5, rng=np.random.default_rng(1))
    # Replay the proposal draws: every rightward move is uphill.
    prop = 0.5 * np.random.default_rng(1).standard_normal((10, 1))
    np.testing.assert_array_equal(new.acceptance_counts == 1, prop[:, 0] > 0)


def test_parallel_mh_many_chains_match_normal():
    res = run_ensemble("mh", _std_normal, np.zeros((10, 1)), 5000, np.random.default_rng(2), proposal_scales=2.4)
    s = res.flat(burn_in=500)
    assert abs(s.mean()) < 3 * mcse(res.samples[500:])[0]
    assert s.var() == pytest.approx(1.0, rel=0.05)


def test_stretch_with_unit_a_is_stationary(rng):
    X = rng.standard_normal((8, 2))
    state = EnsembleState.initialize(X, _std_normal)
    new = stretch_move_step(state, _std_normal, stretch_a=1.0, rng=rng)
    # z = 1 proposes x_j + (x_k - x_j), which is x_k up to one rounding.
    np.testing.assert_allclose(new.positions, X, rtol=0, atol=1e-15)


def test_de_with_zero_gamma_and_jitter_is_stationary(rng):
    X = rng.standard_normal((8, 2))
    state = EnsembleState.initialize(X, _std_normal)
    new = differential_evolution_step(state, _std_normal, gamma=0.0, jitter_b=0.0, rng=rng)
    np.testing.assert_array_equal(new.positions, X)


def test_de_on_rosenbrock_matches_closed_form():
    # x ~ N(1, 1/2) and y | x ~ N(x^2, 1/200), so E[y] = 1.5 and Var[y] = 2.5 + 0.005.
    rng = np.random.default_rng(4)
    init = np.array([1.0, 1.0]) + 0.1 * rng.standard_normal((40, 2))
    de = run_ensemble("de", _rosenbrock, init, 6000, rng)
    s = de.flat(burn_in=1000)
    se = mcse(de.samples[1000:])
    assert abs(s[:, 0].mean() - 1.0) < 4 * se[0]
    assert abs(s[:, 1].mean() - 1.5) < 4 * se[1]
    np.testing.assert_allclose(s.std(axis=0), [math.sqrt(0.5), math.sqrt(2.505)], rtol=0.1)


@pytest.mark.slow
@pytest.mark.xfail(strict=False, reason="tau near 1000 steps: 10k-step MCSE is itself unreliable on this banana")
def test_de_on_scaled_banana_within_three_mcse():
    # Density scaled by 1/20: x ~ N(1, 10), y | x ~ N(x^2, 0.1), so E[y] = 11.
    def banana(X):
        return _rosenbrock(X) / 20.0

    rng = np.random.default_rng(2)
    init = np.array([1.0, 1.0]) + 0.1 * rng.standard_normal((50, 2))
    de = run_ensemble("de", banana, init, 10_000, rng)
    s = de.samples[2000:]
    err = np.abs(s.reshape(-1, 2).mean(axis=0) - [1.0, 11.0]) / mcse(s)
    assert np.all(err < 3)


def test_reproducible(rng):
    init = rng.standard_normal((6, 2))
    a = run_ensemble("stretch", _std_normal, init, 50, np.random.default_rng(9))
    b = run_ensemble("stretch", _std_normal, init, 50, np.random.default_rng(9))
    np.testing.assert_array_equal(a.samples, b.samples)
    assert a.target_evaluations == 6 + 50 * 6


def test_gelman_rubin_examples(rng):
    same = np.tile(rng.standard_normal(100), (4, 1))
    assert gelman_rubin(same)[0] == pytest.approx(math.sqrt(99 / 100))
    apart = rng.standard_normal((4, 200)) + np.arange(4)[:, None] * 10
    assert gelman_rubin(apart)[0] > 2
    mixed = rng.standard_normal((4, 2000, 2))
    np.testing.assert_allclose(gelman_rubin(mixed), 1.0, atol=0.01)
    with pytest.raises(InsufficientChains):
        gelman_rubin(rng.standard_normal((1, 100)))
    with pytest.raises(InsufficientChains):
        gelman_rubin(rng.standard_normal((3, 3)))


def test_autocorrelation_and_tau(rng):
    x = rng.standard_normal(20_000)
    assert autocorrelation(x)[0] == 1.0
    assert integrated_autocorr_time(x) == pytest.approx(1.0, abs=0.2)
    ar = np.empty(20_000)
    ar[0] = 0.0
    e = rng.standard_normal(20_000)
    for t in range(1, ar.size):
        ar[t] = 0.9 * ar[t - 1] + e[t]
    # AR(1) with coefficient 0.9 has tau = (1 + 0.9) / (1 - 0.9) = 19.
    assert integrated_autocorr_time(ar) == pytest.approx(19.0, rel=0.25)
    assert mcse(x)[0] == pytest.approx(1 / math.sqrt(20_000), rel=0.2)


def test_degenerate_ensemble_warns():
    state = EnsembleState.initialize(np.ones((6, 2)), _std_normal)
    with pytest.warns(DegenerateEnsembleWarning):
        new = stretch_move_step(state, _std_normal, rng=np.random.default_rng(0))
    assert np.all(np.isfinite(new.log_posteriors))


def test_insufficient_chains():
    with pytest.raises(InsufficientChains):
        stretch_move_step(EnsembleState.initialize(np.zeros((1, 2)), _std_normal), _std_normal)
    with pytest.raises(InsufficientChains):
        differential_evolution_step(EnsembleState.initialize(np.zeros((2, 2)), _std_normal), _std_normal)
    with pytest.raises(ValueError):
        run_ensemble("hmc", _std_normal, np.zeros((4, 1)), 1)


def test_three_walker_de_runs(rng):
    res = run_ensemble("de", _std_normal, rng.standard_normal((3, 1)), 100, rng)
    assert res.samples.shape == (100, 3, 1)
