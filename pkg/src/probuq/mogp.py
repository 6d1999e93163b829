"""Multi-output GP with a linear-model-of-coregionalization covariance.

Full covariance over the vectorized outputs::

    Kbar = sum_q kron(B_q, K_q(X, X)) + tau2 * I,    B_q = A_q A_q^T + diag(lambda_q)

with one squared-exponential kernel (own length scales and amplitude)
per basis ``q`` and a single noise variance shared by every output.
Vectorization is output-major: ``yhat = [Y[:, 0], Y[:, 1], ...]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import surrogate_io
from .errors import DimensionMismatch, EmptyBasis, NotPositiveDefinite, SizeMismatch
from .gp import LOG2PI, AffineTransform, PosteriorPrediction, _clamp_variance
from .kernels import (
    ArdKernelParams,
    LmcBasisParams,
    ard_covariance_gradients,
    ard_covariance_matrix,
    lmc_full_covariance,
)
from .numerics import CholeskyFactor, cholesky_with_jitter, log_det_from_cholesky
from .trainers import AdamConfig, MhTrainerConfig, adam_optimize, mh_optimize

_LOG_LAMBDA_FLOOR = -40.0


def vectorize_outputs(Y) -> np.ndarray:
    """``(N, M)`` -> ``(N*M,)`` stacking output columns one after another."""
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        return Y.copy()
    if Y.ndim != 2:
        raise SizeMismatch("expected an N x M matrix")
    return Y.T.reshape(-1).copy()


def devectorize(yhat, n_outputs: int) -> np.ndarray:
    yhat = np.asarray(yhat, dtype=float).reshape(-1)
    if n_outputs < 1 or yhat.size % n_outputs:
        raise SizeMismatch(f"length {yhat.size} is not a multiple of {n_outputs} outputs")
    return yhat.reshape(n_outputs, -1).T.copy()


def hyperparameter_count(Q: int, D: int, M: int, R: int) -> int:
    """Free parameters of this parameterization: per basis ``D + 1 + M*R + M``, plus shared noise."""
    return Q * (D + 1 + M * R + M) + 1


def nominal_paper_count(Q: int, D: int, M: int, R: int) -> int:
    """The ``Q (D+1) (M+1) R`` tally quoted for LMC models (kept for reference)."""
    return Q * (D + 1) * (M + 1) * R


@dataclass(eq=False)
class MogpModel:
    input_params: list
    basis_params: list
    noise: float
    training_inputs: np.ndarray
    training_outputs: np.ndarray
    input_transform: AffineTransform
    output_transform: AffineTransform
    base_jitter: float = 0.0
    metadata: dict = field(default_factory=dict)
    chol: CholeskyFactor = field(init=False)
    alpha: np.ndarray = field(init=False)
    vectorized_outputs: np.ndarray = field(init=False, repr=False)
    z: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.input_params or not self.basis_params:
            raise EmptyBasis("at least one basis is required")
        if len(self.input_params) != len(self.basis_params):
            raise DimensionMismatch("one input kernel per output basis is required")
        X = np.atleast_2d(np.asarray(self.training_inputs, dtype=float))
        Y = np.asarray(self.training_outputs, dtype=float)
        Y = Y.reshape(-1, 1) if Y.ndim == 1 else Y
        if X.shape[0] != Y.shape[0]:
            raise DimensionMismatch("inputs and outputs must have the same number of rows")
        if any(p.dim != X.shape[1] for p in self.input_params):
            raise DimensionMismatch("kernel dimension does not match the inputs")
        if any(b.n_outputs != Y.shape[1] for b in self.basis_params):
            raise DimensionMismatch("B_q size does not match the number of outputs")
        ranks = {b.rank for b in self.basis_params}
        if len(ranks) != 1:
            raise DimensionMismatch("all bases must share the rank R")
        self.training_inputs, self.training_outputs = X, Y
        self.z = self.input_transform.forward(X)
        yc = (Y - self.output_transform.shift) / self.output_transform.scale
        self.vectorized_outputs = vectorize_outputs(yc)
        n_par = len(pack(self))
        if n_par != hyperparameter_count(self.Q, self.D, self.M, self.R):
            raise AssertionError("hyperparameter packing does not match the documented count")
        self.chol = cholesky_with_jitter(self.full_covariance(), self.base_jitter)
        self.alpha = self.chol.solve(self.vectorized_outputs)

    Q = property(lambda self: len(self.basis_params))
    R = property(lambda self: self.basis_params[0].rank)
    M = property(lambda self: self.training_outputs.shape[1])
    N = property(lambda self: self.training_inputs.shape[0])
    D = property(lambda self: self.training_inputs.shape[1])

    @classmethod
    def fit(cls, X, Y, input_params, basis_params, noise, *, standardize: bool = True, **kw) -> "MogpModel":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.asarray(Y, dtype=float)
        Y = Y.reshape(-1, 1) if Y.ndim == 1 else Y
        if standardize:
            tin, tout = AffineTransform.standardize(X), AffineTransform.center(Y)
        else:
            tin, tout = AffineTransform.identity(X.shape[1]), AffineTransform.identity(Y.shape[1])
        return cls(list(input_params), list(basis_params), noise, X, Y, tin, tout, **kw)

    def input_kernels(self, Z1, Z2=None):
        return [ard_covariance_matrix(Z1, Z2, ArdKernelParams(p.length_scales, p.amplitude, 0.0))
                for p in self.input_params]

    def full_covariance(self) -> np.ndarray:
        K = lmc_full_covariance(self.input_kernels(self.z), self.basis_params)
        K[np.diag_indices_from(K)] += self.noise
        return K

    def with_hyperparameters(self, input_params, basis_params, noise) -> "MogpModel":
        return MogpModel(list(input_params), list(basis_params), noise, self.training_inputs,
                         self.training_outputs, self.input_transform, self.output_transform,
                         self.base_jitter, dict(self.metadata))

    def output_covariances(self):
        return [b.output_covariance() for b in self.basis_params]

    def log_likelihood(self) -> float:
        return mogp_log_likelihood(self)

    def predict(self, Xs, full_cov: bool = False) -> PosteriorPrediction:
        return mogp_predict(self, Xs, full_cov)

    def save(self, path):
        return save(self, path)


def mogp_log_likelihood(model: MogpModel) -> float:
    """``-0.5 ln|Kbar| - 0.5 yhat^T Kbar^-1 yhat - (N M / 2) ln 2pi``."""
    nm = model.vectorized_outputs.size
    return float(-0.5 * log_det_from_cholesky(model.chol)
                 - 0.5 * model.vectorized_outputs @ model.alpha - 0.5 * nm * LOG2PI)


def mogp_predict(model: MogpModel, Xs, full_cov: bool = False) -> PosteriorPrediction:
    """Joint predictive distribution of all outputs; mean/variance shaped ``(n*, M)``."""
    Xs = np.atleast_2d(np.asarray(Xs, dtype=float))
    if Xs.shape[1] != model.D:
        raise DimensionMismatch(f"query has {Xs.shape[1]} columns, model expects {model.D}")
    zs = model.input_transform.forward(Xs)
    ns, M = zs.shape[0], model.M
    Bs = model.output_covariances()
    Ks = sum(np.kron(B, K) for B, K in zip(Bs, model.input_kernels(zs, model.z)))
    mean = devectorize(Ks @ model.alpha, M)
    v = model.chol.solve_lower(Ks.T)
    cov = None
    if full_cov:
        zz = zs.copy()
        cov = sum(np.kron(B, K) for B, K in zip(Bs, model.input_kernels(zs, zz))) - v.T @ v
        cov = 0.5 * (cov + cov.T)
        var = np.diag(cov).copy()
    else:
        prior = sum(np.repeat(np.diag(B) * p.amplitude, ns) for B, p in zip(Bs, model.input_params))
        var = prior - np.sum(v * v, axis=0)
    prior_scale = max(float(np.max(np.diag(B))) * p.amplitude for B, p in zip(Bs, model.input_params))
    var, n_clamped = _clamp_variance(var, cov, prior_scale)
    scale = model.output_transform.scale
    mean = mean * scale + model.output_transform.shift
    var = devectorize(var, M) * scale**2
    if cov is not None:
        s = np.repeat(scale, ns)
        cov = cov * np.outer(s, s)
    return PosteriorPrediction(mean, var, cov, n_clamped)


# ---------------------------------------------------------------- packing


def pack(model: MogpModel) -> np.ndarray:
    """``[ln l_q, ln sigma2_q, vec(A_q), ln lambda_q]`` per basis, then ``ln tau2``."""
    parts = []
    for p, b in zip(model.input_params, model.basis_params):
        parts += [np.log(p.length_scales), [math.log(p.amplitude)], b.a_matrix.ravel(),
                  np.maximum(np.log(np.maximum(b.lambda_vec, 1e-300)), _LOG_LAMBDA_FLOOR)]
    parts.append([math.log(max(model.noise, 1e-300))])
    return np.concatenate(parts)


def unpack(theta, Q, D, M, R):
    theta = np.asarray(theta, dtype=float)
    i = 0
    input_params, basis_params = [], []
    for _ in range(Q):
        ls = np.exp(theta[i:i + D]); i += D
        amp = math.exp(theta[i]); i += 1
        A = theta[i:i + M * R].reshape(M, R); i += M * R
        lam = np.exp(theta[i:i + M]); i += M
        input_params.append(ArdKernelParams(ls, amp, 0.0))
        basis_params.append(LmcBasisParams(A, lam))
    noise = math.exp(theta[i])
    return input_params, basis_params, noise


def _bounds(Q, D, M, R):
    lo, hi = [], []
    for _ in range(Q):
        lo += [-7.0] * D + [-20.0] + [-np.inf] * (M * R) + [_LOG_LAMBDA_FLOOR] * M
        hi += [7.0] * D + [20.0] + [np.inf] * (M * R) + [20.0] * M
    lo.append(-30.0)
    hi.append(10.0)
    return np.array(lo), np.array(hi)


def log_likelihood_gradient(model: MogpModel) -> np.ndarray:
    """Analytic gradient of the log likelihood in the packed parameterization."""
    N, M, D = model.N, model.M, model.D
    W = np.outer(model.alpha, model.alpha) - model.chol.inverse()
    W4 = W.reshape(M, N, M, N)
    grads = []
    for p, b in zip(model.input_params, model.basis_params):
        p0 = ArdKernelParams(p.length_scales, p.amplitude, 0.0)
        dK = ard_covariance_gradients(model.z, p0, include_noise=False)  # (D+1, N, N)
        K = dK[D]
        B = b.output_covariance()
        H = np.einsum("minj,nm->ij", W4, B)
        g_kernel = np.einsum("ij,kji->k", H, dK)
        G = np.einsum("minj,ji->mn", W4, K)
        g_A = (G + G.T) @ b.a_matrix
        g_lam = np.diag(G) * b.lambda_vec
        grads += [g_kernel, g_A.ravel(), g_lam]
    grads.append([model.noise * np.trace(W)])
    return 0.5 * np.concatenate(grads)


def train_mogp(
    X,
    Y,
    Q: int = 1,
    R: int = 1,
    trainer: AdamConfig | MhTrainerConfig | None = None,
    *,
    rng: np.random.Generator | None = None,
    standardize: bool = True,
    base_jitter: float = 0.0,
) -> MogpModel:
    """Jointly optimize kernel, LMC weight and noise hyperparameters.

    Initialization: unit length scales and amplitudes, ``A_q ~ N(0, 0.1^2)``,
    ``lambda_q`` at the (centered) output variances, noise at 1e-2 of the
    mean output variance.
    """
    trainer = trainer or AdamConfig(learning_rate=0.05, iterations=300)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float)
    Y = Y.reshape(-1, 1) if Y.ndim == 1 else Y
    N, D = X.shape
    M = Y.shape[1]
    if N < 2:
        raise ValueError("MOGP training needs at least two rows")
    rng = rng if rng is not None else np.random.default_rng(trainer.seed)
    var = Y.var(axis=0)
    var = np.where(var > 0, var, 1.0)
    input_params = [ArdKernelParams(np.ones(D), 1.0, 0.0) for _ in range(Q)]
    basis_params = [LmcBasisParams(rng.normal(0.0, 0.1, (M, R)), var.copy()) for _ in range(Q)]
    base = MogpModel.fit(X, Y, input_params, basis_params, 1e-2 * float(var.mean()),
                         standardize=standardize, base_jitter=base_jitter)
    theta0 = pack(base)
    lo, hi = _bounds(Q, D, M, R)
    theta0 = np.clip(theta0, lo, hi)

    def build(theta):
        return base.with_hyperparameters(*unpack(theta, Q, D, M, R))

    if isinstance(trainer, AdamConfig):
        def fun(theta):
            m = build(theta)
            return -mogp_log_likelihood(m), -log_likelihood_gradient(m)

        res = adam_optimize(fun, theta0, trainer, rng=rng, bounds=(lo, hi))
        theta, objective = res.optimum, -res.best_value
    else:
        def log_target(theta):
            if np.any(theta < lo) or np.any(theta > hi):
                return -math.inf
            try:
                return mogp_log_likelihood(build(theta))
            except NotPositiveDefinite:
                return -math.inf

        res = mh_optimize(log_target, MhTrainerConfig(trainer.samples, trainer.proposal_scales,
                                                       list(trainer.priors), trainer.seed), init=theta0)
        theta = res.point_estimate
        objective = log_target(theta)
    model = build(theta)
    model.metadata.update({"final_objective": float(objective),
                           "initial_objective": float(mogp_log_likelihood(base))})
    return model


# ---------------------------------------------------------------- persistence


def save(model: MogpModel, path):
    arrays = {
        "training_inputs": model.training_inputs,
        "training_outputs": model.training_outputs,
        "theta": pack(model),
        "lambda_raw": np.concatenate([b.lambda_vec for b in model.basis_params]),
        "length_scales_raw": np.concatenate([p.length_scales for p in model.input_params]),
        "amplitudes_raw": [p.amplitude for p in model.input_params],
        "input_shift": model.input_transform.shift,
        "input_scale": model.input_transform.scale,
        "output_shift": model.output_transform.shift,
        "output_scale": model.output_transform.scale,
        "base_jitter": [model.base_jitter],
        "noise": [model.noise],
    }
    meta = {k: v for k, v in model.metadata.items() if isinstance(v, (int, float, str, bool, type(None)))}
    meta.update({"Q": model.Q, "R": model.R})
    return surrogate_io.write_surrogate(path, "MOGP", arrays, meta)


def load(path) -> MogpModel:
    _, a, meta = surrogate_io.read_surrogate(path, expected_kind="MOGP")
    X, Y = a["training_inputs"], a["training_outputs"]
    Q, R = int(meta["Q"]), int(meta["R"])
    ip, bp, _ = unpack(a["theta"], Q, X.shape[1], Y.shape[1], R)
    lam = a["lambda_raw"].reshape(Q, -1)
    ls = a["length_scales_raw"].reshape(Q, -1)
    # exp(log(x)) may differ from x in the last bit; restore raw values
    bp = [LmcBasisParams(b.a_matrix, lam[q]) for q, b in enumerate(bp)]
    ip = [ArdKernelParams(ls[q], float(a["amplitudes_raw"][q]), 0.0) for q in range(Q)]
    return MogpModel(ip, bp, float(a["noise"][0]), X, Y,
                     AffineTransform(a["input_shift"], a["input_scale"]),
                     AffineTransform(a["output_shift"], a["output_scale"]),
                     float(a["base_jitter"][0]), dict(meta))
