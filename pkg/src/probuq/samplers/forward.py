"""Forward sampling: Monte Carlo, Latin hypercube and importance sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from ..distributions import Distribution, Normal
from ..errors import NoFailureFound, ZeroDensityAtSample
from ..numerics import as_generator

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def monte_carlo(n: int, dists: Sequence[Distribution], rng) -> np.ndarray:
    """``n`` i.i.d. draws; column ``d`` follows ``dists[d]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_generator(rng)
    U = rng.uniform(size=(n, len(dists)))
    return np.column_stack([d.ppf(U[:, j]) for j, d in enumerate(dists)])


def latin_hypercube(n: int, dists: Sequence[Distribution], rng) -> np.ndarray:
    """One draw per equal-probability stratum in every dimension, strata paired at random."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = as_generator(rng)
    cols = []
    for d in dists:
        u = (rng.permutation(n) + rng.uniform(size=n)) / n
        cols.append(d.ppf(u))
    return np.column_stack(cols)


def to_physical(U, dists: Sequence[Distribution]) -> np.ndarray:
    """Map standard-normal coordinates to the marginals ``dists``.

    Normal marginals use the exact affine map.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    cols = []
    for j, d in enumerate(dists):
        if isinstance(d, Normal):
            cols.append(d.mean_ + d.std_ * U[:, j])
        else:
            cols.append(d.ppf(ndtr(U[:, j])))
    return np.column_stack(cols)


def to_standard_normal(X, dists: Sequence[Distribution]) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    cols = []
    for j, d in enumerate(dists):
        if isinstance(d, Normal):
            cols.append((X[:, j] - d.mean_) / d.std_)
        else:
            cols.append(ndtri(d.cdf(X[:, j])))
    return np.column_stack(cols)


def std_normal_logpdf(U) -> np.ndarray:
    U = np.atleast_2d(U)
    return -0.5 * np.sum(U * U, axis=1) - U.shape[1] * _HALF_LOG_2PI


@dataclass(frozen=True)
class ImportanceDensity:
    """Gaussian mixture ``sum_k w_k N(mean_k, cov_k)``."""

    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covariances, dtype=float)
        if covs.ndim == 2 and means.shape[0] == 1:
            covs = covs[None]
        w = np.ones(means.shape[0]) if self.weights is None else np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("mixture weights must be non-negative with a positive sum")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covariances", covs)
        object.__setattr__(self, "weights", w / w.sum())
        object.__setattr__(self, "_chol", np.array([np.linalg.cholesky(c) for c in covs]))

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def sample(self, n: int, rng) -> np.ndarray:
        rng = as_generator(rng)
        k = rng.choice(self.weights.size, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[k] + np.einsum("nij,nj->ni", self._chol[k], z)

    def logpdf(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        comps = []
        for w, m, L in zip(self.weights, self.means, self._chol):
            r = np.linalg.solve(L, (X - m).T)
            comps.append(math.log(w) - 0.5 * np.sum(r * r, axis=0) - np.sum(np.log(np.diag(L)))
                         - self.dim * _HALF_LOG_2PI)
        return np.logaddexp.reduce(np.array(comps), axis=0)


@dataclass
class ImportanceResult:
    estimate: float
    variance: float
    effective_sample_size: float
    weights: np.ndarray = field(repr=False)

    @property
    def std_error(self) -> float:
        return math.sqrt(max(self.variance, 0.0))

    def __iter__(self):
        yield self.estimate
        yield self.variance


def importance_estimate(samples, q_logpdf: Callable, f_logpdf: Callable, quantity: Callable) -> ImportanceResult:
    """Weighted estimator ``mean(Q(x) q(x)/f(x))`` over ``samples ~ f``.

    The variance is ``(1/S) * (mean((Q w)^2) - estimate^2)``. The effective
    sample size is ``(sum w)^2 / sum(w^2)``.
    """
    X = np.asarray(samples, dtype=float)
    X = X.reshape(-1, 1) if X.ndim == 1 else X
    lf = np.asarray(f_logpdf(X), dtype=float).reshape(-1)
    bad = np.flatnonzero(~(lf > -np.inf))
    if bad.size:
        raise ZeroDensityAtSample(int(bad[0]))
    lq = np.asarray(q_logpdf(X), dtype=float).reshape(-1)
    w = np.exp(lq - lf)
    vals = np.asarray(quantity(X), dtype=float).reshape(-1) * w
    S = vals.size
    est = float(vals.mean())
    var = float((np.mean(vals * vals) - est * est) / S)
    ess = float(w.sum() ** 2 / np.sum(w * w)) if np.any(w > 0) else 0.0
    return ImportanceResult(est, var, ess, w)


@dataclass
class AisResult:
    failure_probability: float
    cov: float
    density: ImportanceDensity
    model_calls: int
    estimate: ImportanceResult = field(repr=False)

    def __iter__(self):
        yield self.failure_probability
        yield self.cov


def _fails(responses, threshold, sense):
    r = np.asarray(responses, dtype=float).reshape(-1)
    return r > threshold if sense == "greater" else r < threshold


def adaptive_importance_sampling(
    limit_state: Callable,
    dists: Sequence[Distribution],
    n_adapt: int,
    n_estimate: int,
    rng,
    threshold: float = 0.0,
    sense: str = "greater",
    proposal_scale: float = 1.0,
    n_seed: int | None = None,
) -> AisResult:
    """Two-phase failure-probability estimate in standard-normal space.

    Phase 1 spends ``n_adapt`` model calls. Prior draws (widened
    progressively when none fail) locate a failing point; a random-walk
    Metropolis chain then explores ``phi(u) 1[fail(u)]``. A Gaussian fitted
    to the visited failure points, with covariance eigenvalues floored at
    one, becomes the importance density. Phase 2 draws ``n_estimate``
    points from it and applies the weighted indicator estimator.

    ``limit_state`` takes an ``(n, d)`` batch in physical units.
    """
    if sense not in ("greater", "less"):
        raise ValueError("sense must be 'greater' or 'less'")
    rng = as_generator(rng)
    d = len(dists)
    calls = 0

    def evaluate(U):
        nonlocal calls
        calls += U.shape[0]
        return np.asarray(limit_state(to_physical(U, dists)), dtype=float).reshape(-1)

    n_seed = n_seed or max(1, n_adapt // 4)
    fail_points = []
    scale = 1.0
    budget = n_adapt
    while not fail_points and budget > 0:
        m = min(n_seed, budget)
        U = scale * rng.standard_normal((m, d))
        hits = _fails(evaluate(U), threshold, sense)
        budget -= m
        if np.any(hits):
            fail_points = list(U[hits])
        scale *= 1.5
    if not fail_points:
        raise NoFailureFound("no failing sample located within the adaptation budget",
                             {"model_calls": calls, "last_scale": scale / 1.5})
    # the chain targets phi(u) restricted to the failure set
    state = min(fail_points, key=lambda u: float(u @ u))
    chain = list(fail_points)
    for _ in range(budget):
        prop = state + proposal_scale * rng.standard_normal(d)
        log_u = math.log(rng.uniform())
        if log_u < -0.5 * (prop @ prop - state @ state) and _fails(evaluate(prop[None]), threshold, sense)[0]:
            state = prop
        chain.append(state)
    C = np.array(chain)
    mean = C.mean(axis=0)
    cov = np.atleast_2d(np.cov(C.T)) if C.shape[0] > 1 else np.eye(d)
    vals, vecs = np.linalg.eigh(cov)
    cov = (vecs * np.maximum(vals, 1.0)) @ vecs.T
    density = ImportanceDensity(mean, cov)
    S = density.sample(n_estimate, rng)
    ind = _fails(evaluate(S), threshold, sense).astype(float)
    est = importance_estimate(S, std_normal_logpdf, density.logpdf, lambda _X: ind)
    pf = est.estimate
    cov_pf = est.std_error / pf if pf > 0 else math.inf
    return AisResult(pf, cov_pf, density, calls, est)
