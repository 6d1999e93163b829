"""Serial and ensemble MCMC plus convergence diagnostics.

Ensemble moves update the walkers in two fixed halves (first ``P // 2``
walkers, then the rest). Every walker in a half proposes from the
positions of the complementary half only, so each half is one batch of
independent target evaluations and detailed balance holds.

All random numbers of one step are drawn before any target evaluation
and their count does not depend on the positions, so runs that differ
only by an affine change of coordinates consume identical streams.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..errors import DegenerateEnsembleWarning, InsufficientChains
from ..numerics import as_generator


@dataclass(frozen=True)
class EnsembleState:
    positions: np.ndarray
    log_posteriors: np.ndarray
    iteration: int = 0
    acceptance_counts: np.ndarray = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.positions, dtype=float))
        lp = np.asarray(self.log_posteriors, dtype=float).reshape(-1)
        if lp.size != X.shape[0]:
            raise ValueError("one log posterior per walker is required")
        acc = np.zeros(X.shape[0], dtype=int) if self.acceptance_counts is None else np.asarray(
            self.acceptance_counts, dtype=int)
        object.__setattr__(self, "positions", X)
        object.__setattr__(self, "log_posteriors", lp)
        object.__setattr__(self, "acceptance_counts", acc)

    @property
    def n_walkers(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @classmethod
    def initialize(cls, positions, log_posterior_batch: Callable) -> "EnsembleState":
        X = np.atleast_2d(np.asarray(positions, dtype=float))
        return cls(X, np.asarray(log_posterior_batch(X), dtype=float).reshape(-1))


def _halves(P: int):
    h = P // 2
    return [np.arange(0, h), np.arange(h, P)]


def _check_degenerate(state: EnsembleState, rng) -> EnsembleState:
    X = state.positions
    if X.shape[0] > 1 and np.all(X == X[0]):
        warnings.warn("all walkers coincide; re-jittering the ensemble", DegenerateEnsembleWarning, stacklevel=3)
        X = X + 1e-6 * (1.0 + np.abs(X)) * rng.standard_normal(X.shape)
        return replace(state, positions=X, log_posteriors=np.full(X.shape[0], np.nan))
    return state


def _accept(X, lp, acc, idx, prop, lp_prop, log_ratio_extra, log_u):
    lp_prop = np.where(np.isnan(lp_prop), -np.inf, lp_prop)
    with np.errstate(invalid="ignore"):
        delta = lp_prop - lp[idx] + log_ratio_extra
    ok = (lp_prop > -np.inf) & ((delta >= 0) | (log_u < delta))
    X[idx[ok]] = prop[ok]
    lp[idx[ok]] = lp_prop[ok]
    acc[idx[ok]] += 1
    return ok


def _refresh(state, log_posterior_batch):
    if np.any(np.isnan(state.log_posteriors)):
        return replace(state, log_posteriors=np.asarray(log_posterior_batch(state.positions), dtype=float))
    return state


def stretch_move_step(state: EnsembleState, log_posterior_batch: Callable, stretch_a: float = 2.0,
                      rng=None) -> EnsembleState:
    """Affine-invariant stretch move.

    Walker ``x_k`` pairs with a uniformly chosen ``x_j`` of the other half
    and proposes ``x_j + z (x_k - x_j)`` with ``z = ((a - 1) u + 1)^2 / a``,
    so ``z`` has density proportional to ``1/sqrt(z)`` on ``[1/a, a]``. The
    acceptance ratio includes ``z^(d-1)``.
    """
    rng = as_generator(rng)
    if state.n_walkers < 2:
        raise InsufficientChains("the stretch move needs at least two walkers")
    if stretch_a < 1:
        raise ValueError("stretch_a must be >= 1")
    state = _refresh(_check_degenerate(state, rng), log_posterior_batch)
    X = state.positions.copy()
    lp = state.log_posteriors.copy()
    acc = state.acceptance_counts.copy()
    d = state.dim
    for half, other in (_halves(state.n_walkers), _halves(state.n_walkers)[::-1]):
        partners = other[rng.integers(0, other.size, size=half.size)]
        z = ((stretch_a - 1.0) * rng.uniform(size=half.size) + 1.0) ** 2 / stretch_a
        log_u = np.log(rng.uniform(size=half.size))
        xj = X[partners]
        prop = xj + z[:, None] * (X[half] - xj)
        lp_prop = np.asarray(log_posterior_batch(prop), dtype=float).reshape(-1)
        _accept(X, lp, acc, half, prop, lp_prop, (d - 1) * np.log(z), log_u)
    return EnsembleState(X, lp, state.iteration + 1, acc)


def default_de_gamma(dim: int) -> float:
    return 2.38 / math.sqrt(2.0 * dim)


def differential_evolution_step(state: EnsembleState, log_posterior_batch: Callable, gamma: float | None = None,
                                jitter_b: float = 1e-6, rng=None) -> EnsembleState:
    """Differential-evolution proposal ``x_i + gamma (x_r1 - x_r2) + e``, ``e ~ U(-b, b)``.

    ``r1 != r2`` come from the other half. With three walkers the halves
    are too small, so walkers are updated one at a time, drawing ``r1, r2``
    from the two others.
    """
    rng = as_generator(rng)
    P, d = state.n_walkers, state.dim
    if P < 3:
        raise InsufficientChains("differential evolution needs at least three chains")
    gamma = default_de_gamma(d) if gamma is None else gamma
    state = _refresh(_check_degenerate(state, rng), log_posterior_batch)
    X = state.positions.copy()
    lp = state.log_posteriors.copy()
    acc = state.acceptance_counts.copy()
    if P >= 4:
        h = _halves(P)
        groups = [(h[0], h[1]), (h[1], h[0])]
    else:
        groups = [(np.array([i]), np.array([j for j in range(P) if j != i])) for i in range(P)]
    for half, other in groups:
        n = half.size
        r1 = rng.integers(0, other.size, size=n)
        r2 = (r1 + rng.integers(1, other.size, size=n)) % other.size
        e = rng.uniform(-jitter_b, jitter_b, size=(n, d))
        log_u = np.log(rng.uniform(size=n))
        prop = X[half] + gamma * (X[other[r1]] - X[other[r2]]) + e
        lp_prop = np.asarray(log_posterior_batch(prop), dtype=float).reshape(-1)
        _accept(X, lp, acc, half, prop, lp_prop, 0.0, log_u)
    return EnsembleState(X, lp, state.iteration + 1, acc)


def parallel_mh_step(state: EnsembleState, log_posterior_batch: Callable, proposal_scales=0.1,
                     rng=None) -> EnsembleState:
    """Independent random-walk Metropolis step for every chain, one batched evaluation."""
    rng = as_generator(rng)
    if state.n_walkers < 1:
        raise InsufficientChains("at least one chain is required")
    state = _refresh(state, log_posterior_batch)
    X = state.positions.copy()
    lp = state.log_posteriors.copy()
    acc = state.acceptance_counts.copy()
    scales = np.broadcast_to(np.asarray(proposal_scales, dtype=float), (state.dim,))
    prop = X + scales * rng.standard_normal(X.shape)
    log_u = np.log(rng.uniform(size=state.n_walkers))
    lp_prop = np.asarray(log_posterior_batch(prop), dtype=float).reshape(-1)
    _accept(X, lp, acc, np.arange(state.n_walkers), prop, lp_prop, 0.0, log_u)
    return EnsembleState(X, lp, state.iteration + 1, acc)


@dataclass
class ChainResult:
    """Samples shaped ``(n_steps, n_walkers, dim)``; serial chains have one walker."""

    samples: np.ndarray = field(repr=False)
    log_posteriors: np.ndarray = field(repr=False)
    acceptance_rate: float
    final_state: EnsembleState = field(repr=False)
    target_evaluations: int = 0

    def flat(self, burn_in: int = 0, thin: int = 1) -> np.ndarray:
        s = self.samples[burn_in::thin]
        return s.reshape(-1, s.shape[-1])

    @property
    def chains(self) -> np.ndarray:
        """``(n_walkers, n_steps, dim)`` view for diagnostics."""
        return np.swapaxes(self.samples, 0, 1)


def run_ensemble(kind: str, log_posterior_batch: Callable, init, n_steps: int, rng=None, callback=None,
                 **kwargs) -> ChainResult:
    """Drive ``n_steps`` of ``kind`` in {"stretch", "de", "mh"} from ``init`` positions.

    ``callback(state)`` is invoked after every step (for trace streaming).
    """
    rng = as_generator(rng)
    step = {"stretch": stretch_move_step, "de": differential_evolution_step, "mh": parallel_mh_step}.get(kind)
    if step is None:
        raise ValueError(f"unknown ensemble sampler {kind!r}; valid: stretch, de, mh")
    calls = [0]

    def counted(X):
        calls[0] += np.atleast_2d(X).shape[0]
        return log_posterior_batch(X)

    state = init if isinstance(init, EnsembleState) else EnsembleState.initialize(init, counted)
    P, d = state.positions.shape
    samples = np.empty((n_steps, P, d))
    lps = np.empty((n_steps, P))
    acc0 = state.acceptance_counts.copy()
    for t in range(n_steps):
        state = step(state, counted, rng=rng, **kwargs)
        samples[t] = state.positions
        lps[t] = state.log_posteriors
        if callback is not None:
            callback(state)
    rate = float((state.acceptance_counts - acc0).sum() / (n_steps * P)) if n_steps else math.nan
    return ChainResult(samples, lps, rate, state, calls[0])


def mh_chain(log_posterior: Callable, init, proposal_scales, n: int, rng=None) -> ChainResult:
    """Serial random-walk Metropolis on a scalar-valued ``log_posterior(x)``."""
    init = np.atleast_1d(np.asarray(init, dtype=float))

    def batch(X):
        return np.array([log_posterior(x) for x in np.atleast_2d(X)], dtype=float)

    return run_ensemble("mh", batch, init[None, :], n, rng, proposal_scales=proposal_scales)


# ---------------------------------------------------------------- diagnostics


def gelman_rubin(chains) -> np.ndarray:
    """Potential scale reduction factor per parameter.

    ``chains`` is ``(m, n)`` or ``(m, n, d)``. Uses
    ``R = sqrt(((n - 1)/n W + B/n) / W)``. Identical chains give ``B = 0``
    and ``R = sqrt((n-1)/n)``, slightly below one.
    """
    c = np.asarray(chains, dtype=float)
    if c.ndim == 2:
        c = c[:, :, None]
    m, n = c.shape[:2]
    if m < 2:
        raise InsufficientChains("at least two chains are required")
    if n < 4:
        raise InsufficientChains("chains must have at least four samples")
    means = c.mean(axis=1)
    B = n * means.var(axis=0, ddof=1)
    W = c.var(axis=1, ddof=1).mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = np.sqrt(((n - 1) / n * W + B / n) / W)
    return R


def autocorrelation(x) -> np.ndarray:
    """Normalized autocorrelation function of a 1-D series (FFT based)."""
    x = np.asarray(x, dtype=float) - np.mean(x)
    n = x.size
    f = np.fft.rfft(x, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    return acf / acf[0] if acf[0] > 0 else np.ones(n)


def integrated_autocorr_time(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time with automatic windowing (window ``M >= c tau``)."""
    rho = autocorrelation(x)
    taus = 2.0 * np.cumsum(rho) - 1.0
    window = np.arange(taus.size) < c * taus
    M = int(np.argmin(window)) if not np.all(window) else taus.size - 1
    return float(max(taus[M], 1.0))


def mcse(samples, axis_walkers: bool = True) -> np.ndarray:
    """Monte Carlo standard error of the mean per parameter.

    ``samples`` is ``(n_steps, n_walkers, d)`` (walker-averaged series) or
    ``(n_steps, d)`` / ``(n_steps,)`` for a single chain.
    """
    s = np.asarray(samples, dtype=float)
    series = s.mean(axis=1) if (s.ndim == 3 and axis_walkers) else s
    series = series.reshape(series.shape[0], -1)
    out = []
    for j in range(series.shape[1]):
        tau = integrated_autocorr_time(series[:, j])
        out.append(series[:, j].std(ddof=1) * math.sqrt(tau / series.shape[0]))
    return np.array(out)
