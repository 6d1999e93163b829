"""Subset simulation for small failure probabilities, plain and GP-accelerated.

Sampling happens in standard-normal space ``u``; the limit state is called
on ``to_physical(u)``. Responses are put in exceedance form (failure means
``response > threshold``) by negating them when ``sense == "less"``.

Each level keeps the ``n_top = round(p0 * n)`` largest responses. The
intermediate level sits halfway between the ``n_top``-th and the
``(n_top+1)``-th largest responses, so exactly ``n_top`` samples exceed it.
``n_chains`` seeds drawn from that top set grow chains under the
component-wise (modified) Metropolis kernel, with every candidate
accepted only if its response exceeds the current level. Each seed counts
as its chain's first state. Chain lengths are ``n // n_chains`` with the
remainder handed out one per chain from the first.

The coefficient of variation follows the usual correlated-chain
estimator: ``delta_j^2 = (1 - p_j) / (p_j n) (1 + gamma_j)`` with
``gamma_j = 2 sum_k (1 - k/L) rho_j(k)`` from the indicator
autocorrelation within chains (``gamma_0 = 0``), and
``cov^2 = sum_j delta_j^2``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..distributions import Distribution
from ..errors import StagnantChainsWarning
from ..numerics import as_generator
from .forward import to_physical


@dataclass
class SubsetState:
    subset_index: int
    threshold: float
    samples: np.ndarray = field(repr=False)
    responses: np.ndarray = field(repr=False)
    p0: float
    chains: int
    acceptance_rate: float = math.nan
    chain_ids: np.ndarray = field(default=None, repr=False)


@dataclass
class SubsetResult:
    failure_probability: float
    cov: float
    levels: list
    trace: list = field(repr=False)
    model_calls: int
    converged: bool
    surrogate_calls: int = 0

    def __iter__(self):
        yield self.failure_probability
        yield self.cov
        yield self.trace


def _chain_lengths(n: int, n_chains: int) -> np.ndarray:
    base, rem = divmod(n, n_chains)
    return np.array([base + (c < rem) for c in range(n_chains)])


def _gamma(indicator: np.ndarray, chain_ids: np.ndarray, p: float) -> float:
    """Correlation factor of the level indicator within Markov chains."""
    chains = [indicator[chain_ids == c].astype(float) for c in np.unique(chain_ids)]
    L = min(len(c) for c in chains)
    if L < 2 or p <= 0 or p >= 1:
        return 0.0
    chains = np.array([c[:L] for c in chains])
    r0 = p * (1.0 - p)
    g = 0.0
    for k in range(1, L):
        rk = np.mean(chains[:, :-k] * chains[:, k:]) - p * p
        g += (1.0 - k / L) * rk / r0
    return max(2.0 * g, 0.0)


class _Responder:
    """Evaluates exceedance-form responses for a batch of ``u`` points."""

    def __init__(self, limit_state, dists, sense):
        self.limit_state = limit_state
        self.dists = dists
        self.sign = 1.0 if sense == "greater" else -1.0
        self.model_calls = 0
        self.surrogate_calls = 0

    def true(self, U) -> np.ndarray:
        U = np.atleast_2d(U)
        self.model_calls += U.shape[0]
        r = np.asarray(self.limit_state(to_physical(U, self.dists)), dtype=float).reshape(-1)
        return self.sign * r

    def __call__(self, U, subset_index: int) -> np.ndarray:
        return self.true(U)


def _run(
    responder: _Responder,
    d: int,
    n: int,
    p0: float,
    threshold: float,
    max_subsets: int,
    n_chains: int | None,
    proposal_std: float,
    rng: np.random.Generator,
) -> SubsetResult:
    thr = responder.sign * threshold
    U = rng.standard_normal((n, d))
    R = responder(U, 0)
    trace = [SubsetState(0, math.nan, U, R, p0, 0)]
    if p0 >= 1.0:
        pf = float(np.mean(R > thr))
        cov = math.sqrt((1 - pf) / (pf * n)) if pf > 0 else math.inf
        trace[0].threshold = thr
        return SubsetResult(pf, cov, [thr], trace, responder.model_calls, True, responder.surrogate_calls)
    n_top = int(round(p0 * n))
    if not 1 <= n_top < n:
        raise ValueError("p0 * n must round to a count in [1, n)")
    n_chains = n_top if n_chains is None else n_chains
    lengths = _chain_lengths(n, n_chains)
    levels, delta2 = [], 0.0
    prob = 1.0
    chain_ids = None
    for k in range(max_subsets):
        order = np.argsort(-R, kind="stable")
        level = 0.5 * (R[order[n_top - 1]] + R[order[n_top]])
        state = trace[-1]
        if level >= thr or k == max_subsets - 1:
            exceed = R > thr
            p_last = float(np.mean(exceed))
            gamma = 0.0 if chain_ids is None else _gamma(exceed, chain_ids, p_last)
            if p_last > 0:
                delta2 += (1 - p_last) / (p_last * n) * (1 + gamma)
            state.threshold = thr
            levels.append(thr)
            pf = prob * p_last
            cov = math.sqrt(delta2) if pf > 0 else math.inf
            return SubsetResult(pf, cov, levels, trace, responder.model_calls,
                                level >= thr, responder.surrogate_calls)
        state.threshold = level
        levels.append(level)
        exceed = R > level
        p_k = n_top / n
        gamma = 0.0 if chain_ids is None else _gamma(exceed, chain_ids, p_k)
        delta2 += (1 - p_k) / (p_k * n) * (1 + gamma)
        prob *= p_k
        top = order[:n_top]
        if n_chains <= n_top:
            seeds = np.sort(rng.choice(top, size=n_chains, replace=False)) if n_chains < n_top else top
        else:
            seeds = top[np.arange(n_chains) % n_top]
        cur_u = U[seeds].copy()
        cur_r = R[seeds].copy()
        newU = [[u] for u in cur_u]
        newR = [[r] for r in cur_r]
        accepted = proposed = 0
        for step in range(1, lengths.max()):
            active = np.flatnonzero(lengths > step)
            xi = cur_u[active] + proposal_std * rng.standard_normal((active.size, d))
            ratio = np.exp(-0.5 * (xi * xi - cur_u[active] ** 2))
            take = rng.uniform(size=xi.shape) < np.minimum(1.0, ratio)
            cand = np.where(take, xi, cur_u[active])
            moved = np.any(take, axis=1)
            r_c = np.full(active.size, -np.inf)
            if np.any(moved):
                r_c[moved] = responder(cand[moved], k + 1)
            ok = moved & (r_c > level)
            proposed += active.size
            accepted += int(ok.sum())
            cur_u[active[ok]] = cand[ok]
            cur_r[active[ok]] = r_c[ok]
            for j, c in enumerate(active):
                newU[c].append(cur_u[c].copy())
                newR[c].append(cur_r[c])
        U = np.array([u for c in newU for u in c])
        R = np.array([r for c in newR for r in c])
        chain_ids = np.concatenate([np.full(len(c), i) for i, c in enumerate(newU)])
        rate = accepted / proposed if proposed else math.nan
        if proposed and rate < 0.01:
            warnings.warn(f"subset {k + 1}: chain acceptance {rate:.3%} below 1%", StagnantChainsWarning,
                          stacklevel=3)
        trace.append(SubsetState(k + 1, math.nan, U, R, p0, n_chains, rate, chain_ids))
    raise AssertionError("unreachable")  # pragma: no cover


def subset_simulation(
    limit_state: Callable,
    dists: Sequence[Distribution],
    n_per_subset: int,
    p0: float = 0.1,
    threshold: float = 0.0,
    max_subsets: int = 20,
    n_chains: int | None = None,
    rng=None,
    sense: str = "greater",
    proposal_std: float = 1.0,
) -> SubsetResult:
    """Estimate ``P(limit_state(X) > threshold)`` (or ``<`` with ``sense="less"``).

    ``limit_state`` takes an ``(n, d)`` batch in physical units. With
    ``p0 >= 1`` the estimate is the plain Monte Carlo exceedance fraction.
    ``converged`` is False when ``max_subsets`` ran out before the
    intermediate level reached the threshold.
    """
    if not p0 > 0:
        raise ValueError("p0 must be positive")
    if sense not in ("greater", "less"):
        raise ValueError("sense must be 'greater' or 'less'")
    responder = _Responder(limit_state, dists, sense)
    return _run(responder, len(dists), n_per_subset, p0, threshold, max_subsets, n_chains,
                proposal_std, as_generator(rng))


class _GpResponder(_Responder):
    """Trusts the GP where ``|mu - threshold| / sigma >= u_threshold``.

    Elsewhere, candidates are evaluated one at a time in increasing order of
    their U score, retraining after each true evaluation, until every
    remaining candidate of the batch is trusted.
    """

    def __init__(self, limit_state, dists, sense, threshold, u_threshold, n_warmup, gp_trainer,
                 retrain_trainer):
        super().__init__(limit_state, dists, sense)
        self.thr = self.sign * threshold
        self.u_threshold = u_threshold
        self.n_warmup = n_warmup
        self.gp_trainer = gp_trainer
        self.retrain_trainer = retrain_trainer
        self.X_train = None
        self.y_train = None
        self.model = None

    def _train(self, warm: bool):
        from ..gp import train_gp

        init = self.model.params if (warm and self.model is not None) else None
        trainer = self.retrain_trainer if warm else self.gp_trainer
        self.model = train_gp(self.X_train, self.y_train, trainer, init=init)

    def _append(self, U, r):
        self.X_train = np.vstack([self.X_train, U])
        self.y_train = np.concatenate([self.y_train, r])

    def __call__(self, U, subset_index: int) -> np.ndarray:
        U = np.atleast_2d(U)
        if math.isinf(self.u_threshold):
            return self.true(U)
        out = np.empty(U.shape[0])
        start = 0
        if self.model is None:
            m = min(self.n_warmup, U.shape[0])
            out[:m] = self.true(U[:m])
            self.X_train, self.y_train = U[:m].copy(), out[:m].copy()
            self._train(warm=False)
            start = m
        todo = np.arange(start, U.shape[0])
        resolved = np.zeros(U.shape[0], dtype=bool)
        resolved[:start] = True
        while todo.size:
            pred = self.model.predict(U[todo])
            sd = np.sqrt(pred.variance)
            with np.errstate(divide="ignore", invalid="ignore"):
                score = np.where(sd > 0, np.abs(pred.mean - self.thr) / sd, np.inf)
            trusted = score >= self.u_threshold
            out[todo[trusted]] = pred.mean[trusted]
            self.surrogate_calls += int(trusted.sum())
            resolved[todo[trusted]] = True
            todo = todo[~trusted]
            if not todo.size:
                break
            j = todo[int(np.argmin(score[~trusted]))]
            r = self.true(U[j])
            out[j] = r[0]
            resolved[j] = True
            self._append(U[j][None], r)
            self._train(warm=True)
            todo = todo[todo != j]
        return out


def active_learning_subset_simulation(
    limit_state: Callable,
    dists: Sequence[Distribution],
    n_per_subset: int,
    p0: float = 0.1,
    threshold: float = 0.0,
    u_threshold: float = 2.0,
    n_warmup: int = 10,
    max_subsets: int = 20,
    n_chains: int | None = None,
    rng=None,
    sense: str = "greater",
    proposal_std: float = 1.0,
    gp_trainer=None,
    retrain_trainer=None,
) -> SubsetResult:
    """Subset simulation where a GP stands in for the model when it is confident.

    The first ``n_warmup`` samples of subset 0 are evaluated with the model
    and train the GP. A prediction is trusted when its U score
    ``|mu - threshold| / sigma`` is at least ``u_threshold``. The GP works
    in standard-normal coordinates. With ``u_threshold = inf`` no GP is
    built and the run matches :func:`subset_simulation` exactly.
    """
    from ..trainers import AdamConfig

    if not p0 > 0:
        raise ValueError("p0 must be positive")
    if sense not in ("greater", "less"):
        raise ValueError("sense must be 'greater' or 'less'")
    if n_warmup < 2:
        raise ValueError("n_warmup must be >= 2")
    gp_trainer = gp_trainer or AdamConfig(learning_rate=0.05, iterations=300)
    retrain_trainer = retrain_trainer or AdamConfig(learning_rate=0.02, iterations=40)
    responder = _GpResponder(limit_state, dists, sense, threshold, u_threshold, n_warmup,
                             gp_trainer, retrain_trainer)
    return _run(responder, len(dists), n_per_subset, p0, threshold, max_subsets, n_chains,
                proposal_std, as_generator(rng))
