"""Squared-exponential ARD input covariance and LMC output covariance.

The kernel is

    k(x, x') = sigma2 * exp(-0.5 * sum_d (x_d - x'_d)^2 / l_d^2) + tau2 * [same training index]

Noise is added outside the exponential, and only on the diagonal of a
matrix built from a single input set (same row index), never for
coincident coordinates that live in different rows.

Multi-output covariances use output-major ordering: the full matrix is
``sum_q kron(B_q, K_q)`` so block ``(m, m')`` is the ``N x N`` matrix
``B_q[m, m'] * K_q``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyBasis


@dataclass(frozen=True)
class ArdKernelParams:
    length_scales: np.ndarray
    amplitude: float = 1.0
    noise: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scales, dtype=float))
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "noise", float(self.noise))
        if np.any(ls <= 0) or not np.all(np.isfinite(ls)):
            raise ValueError("length scales must be positive and finite")
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")

    @property
    def dim(self) -> int:
        return self.length_scales.size

    def to_log_vector(self, include_noise: bool = True) -> np.ndarray:
        """Pack as ``[ln l_1..ln l_D, ln sigma2, (ln tau2)]``."""
        parts = [np.log(self.length_scales), [np.log(self.amplitude)]]
        if include_noise:
            parts.append([np.log(max(self.noise, 1e-300))])
        return np.concatenate(parts)

    @classmethod
    def from_log_vector(cls, v, dim: int, noise: float | None = None) -> "ArdKernelParams":
        v = np.asarray(v, dtype=float)
        tau2 = float(np.exp(v[dim + 1])) if noise is None else noise
        return cls(np.exp(v[:dim]), float(np.exp(v[dim])), tau2)


@dataclass(frozen=True)
class LmcBasisParams:
    """Output weights of one LMC basis: ``B = A A^T + diag(lambda)``."""

    a_matrix: np.ndarray
    lambda_vec: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a_matrix, dtype=float)
        if a.ndim == 1:
            a = a.reshape(-1, 1)
        lam = np.atleast_1d(np.asarray(self.lambda_vec, dtype=float))
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "lambda_vec", lam)
        if lam.size != a.shape[0]:
            raise DimensionMismatch("lambda_vec length must equal the number of rows of a_matrix")
        if np.any(lam < 0):
            raise ValueError("lambda entries must be non-negative")

    @property
    def n_outputs(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def rank(self) -> int:
        return self.a_matrix.shape[1]

    def output_covariance(self) -> np.ndarray:
        return self.a_matrix @ self.a_matrix.T + np.diag(self.lambda_vec)


def _check_dims(x, x2, p: ArdKernelParams):
    if x.shape[-1] != p.dim or x2.shape[-1] != p.dim:
        raise DimensionMismatch(
            f"input dimension {x.shape[-1]}/{x2.shape[-1]} does not match {p.dim} length scales"
        )


def ard_covariance(x, x2, p: ArdKernelParams, same_point: bool = False) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    _check_dims(x, x2, p)
    r2 = np.sum(((x - x2) / p.length_scales) ** 2)
    k = p.amplitude * np.exp(-0.5 * r2)
    if same_point:
        k += p.noise
    return float(k)


def scaled_sq_dist(X, X2, length_scales) -> np.ndarray:
    """Pairwise ``sum_d ((x_d - x'_d) / l_d)^2``."""
    a = X / length_scales
    b = X2 / length_scales
    d = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def ard_covariance_matrix(X, X2=None, p: ArdKernelParams | None = None) -> np.ndarray:
    """Covariance matrix between the rows of ``X`` and ``X2``.

    Passing ``X2=None`` (or the very same array object) means "same input
    set" and adds ``p.noise`` to the diagonal.
    """
    if p is None:
        raise TypeError("kernel parameters are required")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    same = X2 is None or X2 is X
    X2 = X if X2 is None else np.atleast_2d(np.asarray(X2, dtype=float))
    _check_dims(X, X2, p)
    if same:
        d = scaled_sq_dist(X, X, p.length_scales)
        d = 0.5 * (d + d.T)
        np.fill_diagonal(d, 0.0)
    else:
        d = scaled_sq_dist(X, X2, p.length_scales)
    K = p.amplitude * np.exp(-0.5 * d)
    if same and p.noise:
        K[np.diag_indices_from(K)] += p.noise
    return K


def ard_covariance_gradients(X, p: ArdKernelParams, include_noise: bool = True) -> np.ndarray:
    """Derivatives of ``k(X, X)`` with respect to the log hyperparameters.

    Returns an array of shape ``(D + 2, N, N)`` (``D + 1`` without noise)
    ordered ``[ln l_1 .. ln l_D, ln sigma2, ln tau2]``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_dims(X, X, p)
    n, dim = X.shape
    k0 = ard_covariance_matrix(X, p=ArdKernelParams(p.length_scales, p.amplitude, 0.0))
    out = np.empty((dim + 1 + int(include_noise), n, n))
    for d in range(dim):
        diff = (X[:, d][:, None] - X[:, d][None, :]) / p.length_scales[d]
        out[d] = k0 * diff * diff
    out[dim] = k0
    if include_noise:
        out[dim + 1] = p.noise * np.eye(n)
    return out


def lmc_full_covariance(Kq_list, Bq_params) -> np.ndarray:
    """``sum_q kron(B_q, K_q)`` in output-major ordering."""
    Kq_list = list(Kq_list)
    Bq_params = list(Bq_params)
    if not Kq_list or not Bq_params:
        raise EmptyBasis("at least one basis is required")
    if len(Kq_list) != len(Bq_params):
        raise DimensionMismatch("number of input kernels and output bases differ")
    shape = np.shape(Kq_list[0])
    m = Bq_params[0].n_outputs
    total = None
    for K, B in zip(Kq_list, Bq_params):
        K = np.asarray(K, dtype=float)
        if K.shape != shape:
            raise DimensionMismatch("all K_q must share a shape")
        if B.n_outputs != m:
            raise DimensionMismatch("all B_q must have the same number of outputs")
        term = np.kron(B.output_covariance(), K)
        total = term if total is None else total + term
    return total
