import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize

from probuq import gp
from probuq.errors import CorruptFile, DimensionMismatch, VersionMismatch
from probuq.gp import AffineTransform, GpModel, log_marginal_likelihood, log_marginal_likelihood_gradient
from probuq.kernels import ArdKernelParams, ard_covariance_matrix
from probuq.trainers import AdamConfig, MhTrainerConfig


def _data(rng, n=6, d=1):
    X = rng.uniform(-2, 2, (n, d))
    return X, np.sin(X).sum(axis=1) + 0.1 * rng.standard_normal(n)


def _dense_lml(K, y):
    return -0.5 * y @ np.linalg.inv(K) @ y - 0.5 * np.linalg.slogdet(K)[1] - 0.5 * y.size * math.log(2 * math.pi)


def test_lml_single_point():
    m = GpModel.fit([[0.0]], [0.0], ArdKernelParams([1.0], 0.9, 0.1), standardize=False)
    assert log_marginal_likelihood(m) == pytest.approx(-0.918939, abs=1e-6)


def test_lml_zero_outputs_drop_quadratic(rng):
    X = rng.standard_normal((5, 2))
    p = ArdKernelParams([1.0, 0.5], 1.2, 0.1)
    m = GpModel.fit(X, np.zeros(5), p, standardize=False)
    K = ard_covariance_matrix(X, None, p)
    expected = -0.5 * np.linalg.slogdet(K)[1] - 2.5 * math.log(2 * math.pi)
    assert log_marginal_likelihood(m) == pytest.approx(expected, rel=1e-10)


def test_lml_matches_dense_inverse(rng):
    X, y = _data(rng, 7, 2)
    p = ArdKernelParams([0.7, 1.1], 1.3, 0.05)
    m = GpModel.fit(X, y, p, standardize=False)
    assert log_marginal_likelihood(m) == pytest.approx(_dense_lml(ard_covariance_matrix(X, None, p), y), abs=1e-8)


def test_gradient_matches_finite_differences(rng):
    X, y = _data(rng, 6, 2)
    p = ArdKernelParams([0.7, 1.1], 1.3, 0.05)
    m = GpModel.fit(X, y, p)
    g = log_marginal_likelihood_gradient(m)
    theta = p.to_log_vector()
    fd = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = 1e-5
        fd[i] = (log_marginal_likelihood(m.with_params(ArdKernelParams.from_log_vector(theta + e, 2)))
                 - log_marginal_likelihood(m.with_params(ArdKernelParams.from_log_vector(theta - e, 2)))) / 2e-5
    np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-8)


def test_gradient_vanishes_at_optimum(rng):
    X, y = _data(rng, 10, 1)
    base = GpModel.fit(X, y, ArdKernelParams([1.0], 1.0, 0.1))

    def f(theta):
        m = base.with_params(ArdKernelParams.from_log_vector(theta, 1))
        return -log_marginal_likelihood(m), -log_marginal_likelihood_gradient(m)

    res = minimize(f, np.zeros(3), jac=True, method="BFGS", options={"gtol": 1e-10})
    m = base.with_params(ArdKernelParams.from_log_vector(res.x, 1))
    assert np.linalg.norm(log_marginal_likelihood_gradient(m)) < 1e-4


def test_noise_gradient_positive_for_pure_noise(rng):
    X = np.linspace(0, 1, 12)[:, None]
    y = rng.standard_normal(12)
    m = GpModel.fit(X, y, ArdKernelParams([1.0], 1.0, 1e-6))
    assert log_marginal_likelihood_gradient(m)[-1] > 0


def test_predict_interpolates_training_points(rng):
    X, y = _data(rng, 6, 2)
    m = GpModel.fit(X, y, ArdKernelParams([0.8, 0.8], 1.0, 0.0))
    pred = m.predict(X)
    np.testing.assert_allclose(pred.mean, y, atol=1e-8)
    assert np.all(pred.variance <= 1e-8)


def test_predict_reverts_to_prior_far_away(rng):
    X, y = _data(rng, 6, 1)
    m = GpModel.fit(X, y, ArdKernelParams([0.5], 1.7, 0.01))
    far = m.input_transform.inverse(np.array([[50.0]]))
    pred = m.predict(far)
    assert pred.mean[0] == pytest.approx(m.output_transform.shift[0], abs=1e-6)
    assert pred.variance[0] == pytest.approx(1.7 * m.output_transform.scale[0] ** 2, abs=1e-6)


def test_predict_two_point_oracle():
    X = np.array([[0.0], [1.0]])
    y = np.array([0.0, 1.0])
    m = GpModel.fit(X, y, ArdKernelParams([1.0], 1.0, 0.0), standardize=False)
    k = math.exp(-0.5)
    K = np.array([[1.0, k], [k, 1.0]])
    ks = np.array([math.exp(-0.125)] * 2)
    pred = m.predict([[0.5]])
    assert pred.mean[0] == pytest.approx(ks @ np.linalg.solve(K, y), abs=1e-12)
    assert pred.variance[0] == pytest.approx(1.0 - ks @ np.linalg.solve(K, ks), abs=1e-12)


def test_full_covariance_diagonal_matches_variance(rng):
    X, y = _data(rng, 8, 1)
    m = GpModel.fit(X, y, ArdKernelParams([0.6], 1.2, 0.02))
    Xs = rng.uniform(-2, 2, (5, 1))
    full, diag = m.predict(Xs, full_cov=True), m.predict(Xs)
    np.testing.assert_allclose(np.diag(full.covariance), diag.variance, atol=1e-10)
    np.testing.assert_allclose(full.mean, diag.mean)
    noisy = gp.predict(m, Xs, include_noise=True)
    np.testing.assert_allclose(noisy.variance - diag.variance, 0.02 * m.output_transform.scale[0] ** 2)


def test_query_dimension_checked(rng):
    X, y = _data(rng, 5, 2)
    m = GpModel.fit(X, y, ArdKernelParams([1.0, 1.0], 1.0, 0.01))
    with pytest.raises(DimensionMismatch):
        m.predict(np.zeros((2, 3)))


def test_affine_transform_round_trip(rng):
    data = rng.standard_normal((10, 3)) * [1.0, 5.0, 0.1] + 3
    t = AffineTransform.standardize(data)
    np.testing.assert_allclose(t.inverse(t.forward(data)), data)
    z = t.forward(data)
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-12)


def test_adam_training_improves_likelihood(rng):
    X, y = _data(rng, 10, 1)
    init = ArdKernelParams([1.0], 1.0, 0.1)
    start = log_marginal_likelihood(GpModel.fit(X, y, init))
    m = gp.train_gp(X, y, AdamConfig(learning_rate=5e-3, iterations=1000), init=init)
    assert log_marginal_likelihood(m) >= start


def test_training_is_deterministic(rng):
    X, y = _data(rng, 10, 2)
    a = gp.train_gp(X, y, AdamConfig(learning_rate=0.05, iterations=100, seed=3))
    b = gp.train_gp(X, y, AdamConfig(learning_rate=0.05, iterations=100, seed=3))
    np.testing.assert_array_equal(a.params.to_log_vector(), b.params.to_log_vector())


def test_fixed_noise_training(rng):
    X, y = _data(rng, 8, 1)
    m = gp.train_gp(X, y, AdamConfig(iterations=50), fix_noise=1e-4)
    assert m.params.noise == 1e-4


def test_mh_training_runs(rng):
    X, y = _data(rng, 8, 1)
    cfg = MhTrainerConfig(samples=300, proposal_scales=0.1, seed=0)
    m = gp.train_gp(X, y, cfg)
    assert math.isfinite(log_marginal_likelihood(m))


def test_save_load_round_trip(tmp_path, rng):
    X, y = _data(rng, 8, 2)
    m = GpModel.fit(X, y, ArdKernelParams([0.4, 1.2], 1.1, 0.03))
    path = m.save(tmp_path / "m.bin")
    loaded = gp.load(path)
    Xs = rng.standard_normal((4, 2))
    np.testing.assert_array_equal(loaded.predict(Xs).mean, m.predict(Xs).mean)
    np.testing.assert_array_equal(loaded.predict(Xs).variance, m.predict(Xs).variance)


def test_load_rejects_bad_files(tmp_path, rng):
    X, y = _data(rng, 5, 1)
    path = GpModel.fit(X, y, ArdKernelParams([1.0], 1.0, 0.1)).save(tmp_path / "m.bin")
    raw = bytearray(path.read_bytes())
    bumped = tmp_path / "bumped.bin"
    struct.pack_into("<I", raw, 8, 99)
    bumped.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatch):
        gp.load(bumped)
    truncated = tmp_path / "short.bin"
    truncated.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(CorruptFile):
        gp.load(truncated)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 9), st.floats(0.2, 2.0), st.floats(1e-4, 0.5))
def test_posterior_variance_bounded_by_prior(seed, n, ls, noise):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, (n, 1))
    y = rng.standard_normal(n)
    m = GpModel.fit(X, y, ArdKernelParams([ls], 1.0, noise))
    pred = m.predict(rng.uniform(-2, 2, (7, 1)))
    s2 = m.output_transform.scale[0] ** 2
    assert np.all(pred.variance >= 0)
    assert np.all(pred.variance <= s2 * (1 + 1e-9))
