"""Linear PCA of snapshot matrices (one snapshot per column)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch
from .numerics import thin_svd


@dataclass(frozen=True)
class LatentSpace:
    basis: np.ndarray
    singular_values: np.ndarray
    r: int
    tau: float
    snapshot_mean: np.ndarray | None = None

    @property
    def n_features(self) -> int:
        return self.basis.shape[0]

    @property
    def explained_fraction(self) -> float:
        s2 = self.singular_values**2
        return float(s2[: self.r].sum() / s2.sum()) if s2.sum() > 0 else 1.0

    def to_latent(self, s):
        return to_latent(self, s)

    def from_latent(self, c):
        return from_latent(self, c)


def select_rank(singular_values, tau: float) -> int:
    """Smallest ``r`` with ``1 - sum_{i<=r} s_i^2 / sum s_i^2 < tau`` (at least 1)."""
    s2 = np.asarray(singular_values, dtype=float) ** 2
    total = s2.sum()
    if total == 0:
        return 1
    residual = 1.0 - np.cumsum(s2) / total
    hits = np.flatnonzero(residual < tau)
    return int(hits[0]) + 1 if hits.size else s2.size


def fit_pca(snapshots, tau: float = 1e-6, centering: bool = True) -> LatentSpace:
    """Thin SVD of the (optionally row-mean-centered) ``N x N_s`` snapshot matrix.

    With centering, the mean snapshot is subtracted from every column.
    """
    S = np.asarray(snapshots, dtype=float)
    S = S.reshape(-1, 1) if S.ndim == 1 else S
    if S.shape[1] < 1:
        raise ValueError("at least one snapshot is required")
    if not 0 < tau <= 1:
        raise ValueError("tau must lie in (0, 1]")
    mean = S.mean(axis=1) if centering else None
    U, s, _ = thin_svd(S - mean[:, None] if centering else S)
    r = select_rank(s, tau)
    return LatentSpace(U[:, :r].copy(), s, r, tau, mean)


def to_latent(space: LatentSpace, s) -> np.ndarray:
    """``c = U_r^T (s - mean)``; accepts one snapshot or an ``N x k`` block."""
    s = np.asarray(s, dtype=float)
    if s.shape[0] != space.n_features:
        raise DimensionMismatch(f"snapshot length {s.shape[0]} != {space.n_features}")
    if space.snapshot_mean is not None:
        s = s - (space.snapshot_mean if s.ndim == 1 else space.snapshot_mean[:, None])
    return space.basis.T @ s


def from_latent(space: LatentSpace, c) -> np.ndarray:
    """``U_r c + mean``; accepts one coefficient vector or an ``r x k`` block."""
    c = np.asarray(c, dtype=float)
    if c.shape[0] != space.r:
        raise DimensionMismatch(f"coefficient length {c.shape[0]} != r={space.r}")
    out = space.basis @ c
    if space.snapshot_mean is not None:
        out = out + (space.snapshot_mean if out.ndim == 1 else space.snapshot_mean[:, None])
    return out


def relative_l2_error(truth, approx) -> np.ndarray:
    """``||approx - truth|| / ||truth||`` per column (or for a single vector)."""
    truth = np.asarray(truth, dtype=float)
    approx = np.asarray(approx, dtype=float)
    return np.linalg.norm(approx - truth, axis=0) / np.linalg.norm(truth, axis=0)


def load_snapshots(path) -> np.ndarray:
    """Read a snapshot matrix from ``.npy`` or headerless comma-separated text."""
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    return np.loadtxt(path, delimiter=",", ndmin=2)
