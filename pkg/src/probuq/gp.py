"""Single-output Gaussian-process surrogate.

Training works in a transformed space: inputs are standardized per column
and outputs are centered (the zero-mean prior then acts around the
training mean). Hyperparameters are optimized in log space.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import surrogate_io
from .distributions import Normal
from .errors import DimensionMismatch, NegativeVarianceWarning, NotPositiveDefinite
from .kernels import ArdKernelParams, ard_covariance_gradients, ard_covariance_matrix
from .numerics import CholeskyFactor, cholesky_with_jitter, log_det_from_cholesky
from .trainers import AdamConfig, MhTrainerConfig, adam_optimize, mh_optimize

LOG2PI = math.log(2.0 * math.pi)

# box for log hyperparameters during optimization: ln l, ln sigma2, ln tau2
LOG_LENGTH_BOUNDS = (-7.0, 7.0)
LOG_AMPLITUDE_BOUNDS = (-20.0, 20.0)
LOG_NOISE_BOUNDS = (-30.0, 10.0)


@dataclass(frozen=True)
class AffineTransform:
    """``z = (x - shift) / scale`` applied column-wise."""

    shift: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "AffineTransform":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def standardize(cls, data) -> "AffineTransform":
        data = np.atleast_2d(data)
        scale = data.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(data.mean(axis=0), scale)

    @classmethod
    def center(cls, data) -> "AffineTransform":
        data = np.atleast_2d(data)
        return cls(data.mean(axis=0), np.ones(data.shape[1]))

    def forward(self, x):
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def inverse(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.shift


@dataclass
class PosteriorPrediction:
    """Predictive mean and variance (and optionally the full covariance).

    For multi-output models ``mean`` and ``variance`` are ``(n, M)`` and
    ``covariance`` is ordered output-major.
    """

    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray | None = None
    n_clamped: int = 0

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def _clamp_variance(var, covariance=None, prior_scale: float = 1.0):
    """Clamp negative variances to zero and count them.

    A warning is issued only when a clamped value exceeds round-off, i.e.
    is below ``-1e-8 * prior_scale``.
    """
    neg = var < 0
    n = int(np.count_nonzero(neg))
    if n:
        if np.min(var) < -1e-8 * prior_scale:
            warnings.warn(f"{n} negative predictive variances clamped to 0", NegativeVarianceWarning,
                          stacklevel=3)
        var = np.where(neg, 0.0, var)
        if covariance is not None:
            idx = np.flatnonzero(neg.ravel())
            covariance[idx, idx] = 0.0
    return var, n


@dataclass(eq=False)
class GpModel:
    """A fitted GP: training data, hyperparameters and the cached Cholesky solve.

    ``training_inputs``/``training_outputs`` are in the caller's units; the
    transforms map them to the space where the kernel lives.
    """

    params: ArdKernelParams
    training_inputs: np.ndarray
    training_outputs: np.ndarray
    input_transform: AffineTransform
    output_transform: AffineTransform
    base_jitter: float = 0.0
    metadata: dict = field(default_factory=dict)
    chol: CholeskyFactor = field(init=False)
    alpha: np.ndarray = field(init=False)
    z: np.ndarray = field(init=False, repr=False)
    yc: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.training_inputs, dtype=float))
        y = np.asarray(self.training_outputs, dtype=float).reshape(-1)
        if X.shape[0] != y.size or y.size < 1:
            raise DimensionMismatch("need N >= 1 rows with one output each")
        if X.shape[1] != self.params.dim:
            raise DimensionMismatch(f"inputs have {X.shape[1]} columns, kernel has {self.params.dim}")
        self.training_inputs = X
        self.training_outputs = y
        self.z = self.input_transform.forward(X)
        self.yc = (y - self.output_transform.shift[0]) / self.output_transform.scale[0]
        K = ard_covariance_matrix(self.z, p=self.params)
        self.chol = cholesky_with_jitter(K, self.base_jitter)
        self.alpha = self.chol.solve(self.yc)

    @classmethod
    def fit(cls, X, y, params: ArdKernelParams, *, standardize: bool = True, **kw) -> "GpModel":
        """Build a model with default transforms (standardized X, centered y) or none."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1, 1)
        if standardize:
            tin, tout = AffineTransform.standardize(X), AffineTransform.center(y)
        else:
            tin, tout = AffineTransform.identity(X.shape[1]), AffineTransform.identity(1)
        return cls(params, X, y.ravel(), tin, tout, **kw)

    def with_params(self, params: ArdKernelParams) -> "GpModel":
        return GpModel(params, self.training_inputs, self.training_outputs,
                       self.input_transform, self.output_transform, self.base_jitter, dict(self.metadata))

    def with_data(self, X, y) -> "GpModel":
        """Same hyperparameters and transforms, new training set."""
        return GpModel(self.params, X, y, self.input_transform, self.output_transform,
                       self.base_jitter, dict(self.metadata))

    @property
    def n(self) -> int:
        return self.training_outputs.size

    @property
    def dim(self) -> int:
        return self.params.dim

    def log_marginal_likelihood(self) -> float:
        return log_marginal_likelihood(self)

    def predict(self, Xs, full_cov: bool = False) -> PosteriorPrediction:
        return predict(self, Xs, full_cov)

    def save(self, path):
        return save(self, path)


def log_marginal_likelihood(model: GpModel) -> float:
    """``-0.5 ln|K| - 0.5 y^T K^-1 y - (N/2) ln 2pi`` in the transformed space."""
    return float(
        -0.5 * log_det_from_cholesky(model.chol)
        - 0.5 * model.yc @ model.alpha
        - 0.5 * model.n * LOG2PI
    )


def log_marginal_likelihood_gradient(model: GpModel, include_noise: bool = True) -> np.ndarray:
    """Gradient over ``[ln l_1..ln l_D, ln sigma2, ln tau2]``.

    ``0.5 * tr((alpha alpha^T - K^-1) dK/dtheta)`` for each log hyperparameter.
    """
    W = np.outer(model.alpha, model.alpha) - model.chol.inverse()
    dK = ard_covariance_gradients(model.z, model.params, include_noise=include_noise)
    return 0.5 * np.einsum("ij,kij->k", W, dK)


def predict(model: GpModel, Xs, full_cov: bool = False, include_noise: bool = False) -> PosteriorPrediction:
    """Posterior of the latent function at ``Xs`` (in the caller's units).

    Negative variances from round-off are clamped to zero and counted.
    """
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    if Xs.shape[1] != model.dim:
        raise DimensionMismatch(f"query has {Xs.shape[1]} columns, model expects {model.dim}")
    zs = model.input_transform.forward(Xs)
    Ks = ard_covariance_matrix(zs, model.z, model.params)
    mean_c = Ks @ model.alpha
    v = model.chol.solve_lower(Ks.T)
    scale = model.output_transform.scale[0]
    cov = None
    if full_cov:
        prior = ard_covariance_matrix(zs, zs.copy(), model.params)
        cov = prior - v.T @ v
        cov = 0.5 * (cov + cov.T)
        if include_noise:
            cov[np.diag_indices_from(cov)] += model.params.noise
        var = np.diag(cov).copy()
    else:
        var = model.params.amplitude - np.sum(v * v, axis=0)
        if include_noise:
            var = var + model.params.noise
    var, n_clamped = _clamp_variance(var, cov, model.params.amplitude)
    mean = mean_c * scale + model.output_transform.shift[0]
    var = var * scale**2
    if cov is not None:
        cov = cov * scale**2
    return PosteriorPrediction(mean, var, cov, n_clamped)


# ---------------------------------------------------------------- training


def _log_bounds(dim: int, include_noise: bool):
    lo = [LOG_LENGTH_BOUNDS[0]] * dim + [LOG_AMPLITUDE_BOUNDS[0]]
    hi = [LOG_LENGTH_BOUNDS[1]] * dim + [LOG_AMPLITUDE_BOUNDS[1]]
    if include_noise:
        lo.append(LOG_NOISE_BOUNDS[0])
        hi.append(LOG_NOISE_BOUNDS[1])
    return np.array(lo), np.array(hi)


def default_initial_params(model_space_y, dim: int) -> ArdKernelParams:
    var = float(np.var(model_space_y)) if np.size(model_space_y) > 1 else 1.0
    var = var if var > 0 else 1.0
    return ArdKernelParams(np.ones(dim), var, 1e-2 * var)


def negative_lml_and_gradient(base: GpModel, theta, fix_noise: float | None, rows=None):
    """Objective for the optimizers: ``-LML`` and its gradient at log params ``theta``."""
    dim = base.dim
    params = ArdKernelParams.from_log_vector(theta, dim, noise=fix_noise)
    m = base.with_params(params) if rows is None else GpModel(
        params, base.training_inputs[rows], base.training_outputs[rows],
        base.input_transform, base.output_transform, base.base_jitter)
    g = log_marginal_likelihood_gradient(m, include_noise=fix_noise is None)
    return -log_marginal_likelihood(m), -g


def train_gp(
    X,
    y,
    trainer: AdamConfig | MhTrainerConfig | None = None,
    *,
    init: ArdKernelParams | None = None,
    fix_noise: float | None = None,
    standardize: bool = True,
    rng: np.random.Generator | None = None,
    base_jitter: float = 0.0,
) -> GpModel:
    """Fit hyperparameters by maximizing the log marginal likelihood.

    ``trainer`` selects Adam/AdamW (gradient based) or random-walk MH
    (maximum-a-posteriori sample; log-normal priors on the log
    hyperparameters when ``trainer.priors`` is empty).
    """
    trainer = trainer or AdamConfig(learning_rate=0.05, iterations=300)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    dim = X.shape[1]
    probe = GpModel.fit(X, y, ArdKernelParams(np.ones(dim), 1.0, 1e-2), standardize=standardize,
                        base_jitter=base_jitter)
    if init is None:
        init = default_initial_params(probe.yc, dim)
    if fix_noise is not None:
        init = ArdKernelParams(init.length_scales, init.amplitude, fix_noise)
    base = probe.with_params(init)
    include_noise = fix_noise is None
    theta0 = init.to_log_vector(include_noise)
    lo, hi = _log_bounds(dim, include_noise)
    theta0 = np.clip(theta0, lo, hi)

    if isinstance(trainer, AdamConfig):
        rng = rng if rng is not None else np.random.default_rng(trainer.seed)

        def fun(theta, rows=None):
            return negative_lml_and_gradient(base, theta, fix_noise, rows)

        res = adam_optimize(fun, theta0, trainer, rng=rng, n_data=base.n, bounds=(lo, hi))
        theta, objective = res.optimum, -res.best_value
    else:
        priors = list(trainer.priors) or [Normal(float(t), 3.0) for t in theta0]

        def log_target(theta):
            if np.any(theta < lo) or np.any(theta > hi):
                return -math.inf
            try:
                return log_marginal_likelihood(
                    base.with_params(ArdKernelParams.from_log_vector(theta, dim, noise=fix_noise)))
            except NotPositiveDefinite:
                return -math.inf

        cfg = MhTrainerConfig(trainer.samples, trainer.proposal_scales, priors, trainer.seed)
        res = mh_optimize(log_target, cfg, init=theta0)
        theta = res.point_estimate
        objective = log_target(theta)
    model = base.with_params(ArdKernelParams.from_log_vector(theta, dim, noise=fix_noise))
    model.metadata.update({"final_objective": float(objective), "fix_noise": fix_noise})
    return model


# ---------------------------------------------------------------- persistence


def save(model: GpModel, path):
    arrays = {
        "training_inputs": model.training_inputs,
        "training_outputs": model.training_outputs,
        "length_scales": model.params.length_scales,
        "amplitude": [model.params.amplitude],
        "noise": [model.params.noise],
        "input_shift": model.input_transform.shift,
        "input_scale": model.input_transform.scale,
        "output_shift": model.output_transform.shift,
        "output_scale": model.output_transform.scale,
        "base_jitter": [model.base_jitter],
    }
    meta = {k: v for k, v in model.metadata.items() if isinstance(v, (int, float, str, bool, type(None)))}
    return surrogate_io.write_surrogate(path, "GP", arrays, meta)


def load(path) -> GpModel:
    _, a, meta = surrogate_io.read_surrogate(path, expected_kind="GP")
    params = ArdKernelParams(a["length_scales"], float(a["amplitude"][0]), float(a["noise"][0]))
    return GpModel(
        params,
        a["training_inputs"],
        a["training_outputs"],
        AffineTransform(a["input_shift"], a["input_scale"]),
        AffineTransform(a["output_shift"], a["output_scale"]),
        float(a["base_jitter"][0]),
        dict(meta),
    )
