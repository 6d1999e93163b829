import math

import numpy as np
import pytest
from scipy import stats

from probuq import dgp
from probuq.dgp import (
    DgpMcmcConfig,
    DgpPosterior,
    DgpState,
    dgp_compound_log_likelihood,
    dgp_gibbs_step,
    ess_update_latent_column,
    hidden_covariance,
    initial_state,
    outer_log_likelihood,
    retained_indices,
)
from probuq.errors import DimensionMismatch, EmptyPosterior
from probuq.gp import AffineTransform, GpModel, log_marginal_likelihood
from probuq.kernels import ArdKernelParams


def _data(rng, n=10):
    X = rng.uniform(-1, 1, (n, 1))
    return X, np.sin(3 * X[:, 0])


def test_compound_likelihood_outer_term_is_gp_likelihood(rng):
    X, y = _data(rng)
    Z = AffineTransform.standardize(X).forward(X)
    p = ArdKernelParams([0.8], 1.2, 0.05)
    state = DgpState(Z, p, np.ones((1, 1)))
    gp_ll = log_marginal_likelihood(GpModel(p, Z, y, AffineTransform.identity(1), AffineTransform.identity(1)))
    assert outer_log_likelihood(Z, y, p) == pytest.approx(gp_ll, abs=1e-10)
    total = dgp_compound_log_likelihood(state, Z, y)
    assert math.isfinite(total)
    assert total == pytest.approx(gp_ll + dgp.hidden_log_prior(Z[:, 0], Z, [1.0]), abs=1e-10)
    with pytest.raises(DimensionMismatch):
        dgp_compound_log_likelihood(state, Z, y[:-1])


def test_zero_outputs_drop_quadratic(rng):
    X, _ = _data(rng, 6)
    p = ArdKernelParams([0.5], 1.0, 0.1)
    K = np.exp(-0.5 * (X - X.T) ** 2 / 0.25) + 0.1 * np.eye(6)
    expected = -0.5 * np.linalg.slogdet(K)[1] - 3 * math.log(2 * math.pi)
    assert outer_log_likelihood(X, np.zeros(6), p) == pytest.approx(expected, rel=1e-10)


def test_doubling_noise_lowers_likelihood_for_interpolating_data(rng):
    X = np.linspace(-1, 1, 12)[:, None]
    y = np.sin(2 * X[:, 0])
    p = ArdKernelParams([0.7], 1.0, 1e-3)
    q = ArdKernelParams([0.7], 1.0, 2e-3)
    assert outer_log_likelihood(X, y, q) < outer_log_likelihood(X, y, p)


def test_ess_constant_likelihood_accepts_first_proposal(rng):
    w, nu = rng.standard_normal(5), rng.standard_normal(5)
    trace = []
    out = ess_update_latent_column(w, nu, lambda v: 0.0, rng, trace)
    assert len(trace) == 1
    coef, *_ = np.linalg.lstsq(np.c_[w, nu], out, rcond=None)
    assert coef @ coef == pytest.approx(1.0, abs=1e-10)
    np.testing.assert_allclose(np.c_[w, nu] @ coef, out, atol=1e-12)


def test_ess_bracket_shrinks_for_peaked_likelihood(rng):
    w, nu = rng.standard_normal(5), rng.standard_normal(5)
    trace = []
    out = ess_update_latent_column(w, nu, lambda v: -1e4 * float((v - w) @ (v - w)), rng, trace)
    # The first rejection sits at the bracket endpoint, so only later ones shrink it.
    assert len(trace) > 2
    assert trace[0] == trace[1] == pytest.approx(2 * math.pi)
    assert np.all(np.diff(trace[1:]) < 0)
    assert np.linalg.norm(out - w) < 0.1


def test_ess_gives_up_at_current_state(rng):
    w, nu = rng.standard_normal(3), rng.standard_normal(3)
    out = ess_update_latent_column(w, nu, lambda v: 0.0 if np.array_equal(v, w) else -math.inf, rng,
                                   max_shrinks=5)
    np.testing.assert_array_equal(out, w)


def test_gibbs_with_zero_scales_only_moves_latents(rng):
    X, y = _data(rng)
    Z = AffineTransform.standardize(X).forward(X)
    state = initial_state(Z)
    cfg = DgpMcmcConfig(scale_amplitude_noise=0.0, scale_length_scale=0.0, scale_hidden_length_scale=0.0)
    new, _ = dgp_gibbs_step(state, Z, y, np.random.default_rng(0), cfg)
    assert new.outer_params == state.outer_params
    np.testing.assert_array_equal(new.hidden_length_scales, state.hidden_length_scales)
    assert not np.array_equal(new.latents, state.latents)


def test_gibbs_step_reproducible(rng):
    X, y = _data(rng)
    Z = AffineTransform.standardize(X).forward(X)
    a, _ = dgp_gibbs_step(initial_state(Z), Z, y, np.random.default_rng(5))
    b, _ = dgp_gibbs_step(initial_state(Z), Z, y, np.random.default_rng(5))
    np.testing.assert_array_equal(a.latents, b.latents)
    assert a.outer_params == b.outer_params


@pytest.mark.slow
def test_gibbs_leaves_latent_prior_invariant():
    rng = np.random.default_rng(11)
    Z = np.linspace(-1.5, 1.5, 4)[:, None]
    w0 = np.linalg.cholesky(hidden_covariance(Z, [1.0])) @ rng.standard_normal(4)
    state = DgpState(w0[:, None], ArdKernelParams([1.0], 1.0, 0.01), np.ones((1, 1)))
    draws = []
    for t in range(5000):
        state, _ = dgp_gibbs_step(state, Z, np.zeros(4), rng, outer_loglik=lambda W, p: 0.0)
        if t % 10 == 9:
            draws.append(state.latents[0, 0])
    # Each latent has unit prior variance whatever the hidden length scale.
    assert stats.kstest(draws, "norm").pvalue > 0.01


def test_single_draw_interpolates(rng):
    X, y = _data(rng, 8)
    tin, tout = AffineTransform.standardize(X), AffineTransform.standardize(y[:, None])
    state = DgpState(tin.forward(X), ArdKernelParams([0.5], 1.0, 0.0), np.ones((1, 1)))
    post = DgpPosterior([state], 0, 1, 1, X, y, tin, tout)
    np.testing.assert_allclose(post.predict(X, hidden="identity").mean, y, atol=1e-6)
    # Propagated latent means carry the fixed hidden-kernel jitter.
    np.testing.assert_allclose(post.predict(X, hidden="mean").mean, y, atol=1e-4)


def test_identical_draws_have_no_between_variance(rng):
    X, y = _data(rng, 8)
    tin, tout = AffineTransform.standardize(X), AffineTransform.standardize(y[:, None])
    state = DgpState(tin.forward(X), ArdKernelParams([0.5], 1.0, 0.01), np.ones((1, 1)))
    one = DgpPosterior([state], 0, 1, 1, X, y, tin, tout).predict(X[:3] + 0.05)
    two = DgpPosterior([state, state], 0, 1, 2, X, y, tin, tout).predict(X[:3] + 0.05)
    np.testing.assert_allclose(two.variance, one.variance, rtol=1e-12)
    with pytest.raises(EmptyPosterior):
        DgpPosterior([], 0, 1, 0, X, y, tin, tout).predict(X)
    with pytest.raises(ValueError):
        DgpPosterior([state], 0, 1, 1, X, y, tin, tout).predict(X, hidden="bogus")


def test_retained_indices_and_config():
    np.testing.assert_array_equal(retained_indices(100, 50, 10), [59, 69, 79, 89, 99])
    assert DgpMcmcConfig(samples=100).burn_in == 50
    with pytest.raises(ValueError):
        DgpMcmcConfig(samples=10, burn_in=10)


def test_train_reproducible_and_save_load(tmp_path, rng):
    X, y = _data(rng, 8)
    cfg = DgpMcmcConfig(samples=40, thinning=5, seed=2)
    a = dgp.train_dgp(X, y, cfg)
    b = dgp.train_dgp(X, y, cfg)
    assert len(a.draws) == 4
    Xs = rng.uniform(-1, 1, (5, 1))
    np.testing.assert_array_equal(a.predict(Xs).mean, b.predict(Xs).mean)
    loaded = dgp.load(a.save(tmp_path / "d.bin"))
    np.testing.assert_array_equal(loaded.predict(Xs).mean, a.predict(Xs).mean)
    np.testing.assert_array_equal(loaded.predict(Xs).variance, a.predict(Xs).variance)
