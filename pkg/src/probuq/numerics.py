"""Dense linear algebra helpers and reproducible random streams.

Matrices are plain ``numpy.ndarray`` objects (float64, C order). Every
"inverse" used elsewhere in the package is realised as a Cholesky solve.

Random streams use numpy's PCG64 bit generator seeded through
``SeedSequence(seed, spawn_key=(stream_id,))``. PCG64 output for a given
seed sequence is stable across platforms and numpy releases, so a
``(seed, stream_id)`` pair pins the draw sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConvergenceFailure, NonSquare, NonSymmetric, NotPositiveDefinite

JITTER_RELATIVE_START = 1e-10
JITTER_GROWTH = 10.0
JITTER_MAX_RETRIES = 6


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor ``L`` with ``L @ L.T == m + jitter_applied * I``."""

    lower: np.ndarray
    jitter_applied: float = 0.0

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve ``(L L^T) x = b`` for a vector or matrix right-hand side."""
        return scipy.linalg.cho_solve((self.lower, True), b, check_finite=False)

    def solve_lower(self, b: np.ndarray) -> np.ndarray:
        """Solve ``L x = b``."""
        return scipy.linalg.solve_triangular(self.lower, b, lower=True, check_finite=False)

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.n))

    def log_det(self) -> float:
        return log_det_from_cholesky(self)


def _check_square_symmetric(m: np.ndarray) -> None:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {m.shape}")
    scale = np.max(np.abs(m)) if m.size else 0.0
    if scale > 0 and np.max(np.abs(m - m.T)) > 1e-10 * scale:
        raise NonSymmetric("matrix is not symmetric to 1e-10 relative tolerance")


def cholesky_with_jitter(m, base_jitter: float = 0.0) -> CholeskyFactor:
    """Cholesky factor of a symmetric matrix, adding diagonal jitter on failure.

    The first attempt adds ``base_jitter``. On failure the jitter restarts at
    ``max(base_jitter, 1e-10 * mean(diag(m)))`` and grows by 10x per retry,
    for at most 6 retries.

    Raises
    ------
    NonSquare, NonSymmetric
        On malformed input.
    NotPositiveDefinite
        If every retry fails.
    """
    m = np.asarray(m, dtype=float)
    _check_square_symmetric(m)
    n = m.shape[0]
    if not np.all(np.isfinite(m)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    eye = np.eye(n)

    def attempt(jitter):
        a = m + jitter * eye if jitter else m
        try:
            lower = np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.diag(lower) > 0) or not np.all(np.isfinite(lower)):
            return None
        return lower

    lower = attempt(base_jitter)
    if lower is not None:
        return CholeskyFactor(lower, float(base_jitter))

    mean_diag = float(np.mean(np.abs(np.diag(m)))) if n else 1.0
    jitter = max(base_jitter, JITTER_RELATIVE_START * (mean_diag if mean_diag > 0 else 1.0))
    for _ in range(JITTER_MAX_RETRIES):
        lower = attempt(jitter)
        if lower is not None:
            return CholeskyFactor(lower, float(jitter))
        jitter *= JITTER_GROWTH
    raise NotPositiveDefinite(
        f"Cholesky failed after {JITTER_MAX_RETRIES} jitter retries (last jitter {jitter / JITTER_GROWTH:.3e})"
    )


def log_det_from_cholesky(c: CholeskyFactor) -> float:
    """``ln|L L^T| = 2 * sum(ln diag(L))``."""
    return float(2.0 * np.sum(np.log(np.diag(c.lower))))


def thin_svd(m):
    """Thin SVD ``m = U diag(s) V^T`` with singular values in descending order.

    Returns ``(U, s, V)``; note ``V`` (not ``V^T``) is returned.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise NonSquare(f"expected a 2-D matrix, got {m.ndim}-D")
    if not np.all(np.isfinite(m)):
        raise ConvergenceFailure("matrix has non-finite entries")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return u, s, vt.T


def rng_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for the ``(seed, stream_id)`` pair."""
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an int seed, or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return rng_stream(int(rng))


def spawn_streams(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` child generators (one per chain or restart)."""
    return [np.random.Generator(bg) for bg in rng.bit_generator.spawn(n)]


def as_matrix(x, cols: int | None = None) -> np.ndarray:
    """Coerce to a 2-D float array; 1-D input becomes a single row (or column when ``cols == 1``)."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1) if cols == 1 else a.reshape(1, -1)
    return a
