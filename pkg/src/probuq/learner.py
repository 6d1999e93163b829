"""Active-learning drivers: batch Bayesian optimization, log-likelihood
surrogate training for calibration, and MCMC on a trained surrogate."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import gp as gp_mod
from .acquisition import (
    AcquisitionSpec,
    evaluate_acquisition,
    log_bpt_score,
    model_length_scales,
    select_batch_from_values,
)
from .bayes import CalibrationTarget, ParameterPrior
from .distributions import Distribution
from .numerics import rng_stream
from .samplers.forward import latin_hypercube, monte_carlo
from .samplers.mcmc import ChainResult, run_ensemble
from .trainers import AdamConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ActiveLearningConfig:
    acquisition: str = "ExpectedImprovement"
    lam: float = 0.0
    batch_size: int = 2
    iterations: int = 15
    pool_size: int = 500
    warmup: int = 5
    trainer: AdamConfig = field(default_factory=lambda: AdamConfig(learning_rate=0.05, iterations=300))
    convergence_tol: float | None = None
    convergence_window: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.batch_size > self.pool_size:
            raise ValueError("batch_size must lie in [1, pool_size]")
        if self.warmup < 2:
            raise ValueError("warmup must be >= 2")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass
class BoResult:
    best_point: np.ndarray
    best_value: float
    history: list = field(repr=False)
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    model: object = field(default=None, repr=False)

    def __iter__(self):
        yield self.best_point
        yield self.best_value
        yield self.history


def _finite_rows(X, y):
    ok = np.isfinite(y)
    if not np.all(ok):
        log.warning("%d failed evaluations excluded from the training set", int((~ok).sum()))
    return X[ok], y[ok]


def run_bayesian_optimization(objective: Callable, dists: Sequence[Distribution],
                              cfg: ActiveLearningConfig | None = None) -> BoResult:
    """Maximize ``objective`` (a batch callable ``(n, d) -> (n,)``) over the prior box.

    Each iteration trains a GP on all successful evaluations, draws a fresh
    candidate pool from ``dists``, scores it with the configured acquisition
    (``best_value`` = current incumbent) and evaluates a locally penalized
    batch. ``history`` holds one entry per evaluated point.
    """
    cfg = cfg or ActiveLearningConfig()
    rng_design = rng_stream(cfg.seed, 0)
    rng_pool = rng_stream(cfg.seed, 1)
    X = latin_hypercube(cfg.warmup, dists, rng_design)
    y = np.asarray(objective(X), dtype=float).reshape(-1)
    history = [{"iteration": 0, "x": x.tolist(), "y": float(v)} for x, v in zip(X, y)]
    model = None
    for it in range(1, cfg.iterations + 1):
        Xt, yt = _finite_rows(X, y)
        init = model.params if model is not None else None
        model = gp_mod.train_gp(Xt, yt, cfg.trainer, init=init)
        pool = monte_carlo(cfg.pool_size, dists, rng_pool)
        pred = model.predict(pool)
        spec = AcquisitionSpec(cfg.acquisition, cfg.lam, float(np.max(yt)))
        values = np.asarray(evaluate_acquisition(spec, pred.mean, pred.std))
        if spec.minimize:
            values = -values
        idx = select_batch_from_values(pool, values, cfg.batch_size, model_length_scales(model))
        Xb = pool[idx]
        yb = np.asarray(objective(Xb), dtype=float).reshape(-1)
        history += [{"iteration": it, "x": x.tolist(), "y": float(v)} for x, v in zip(Xb, yb)]
        X = np.vstack([X, Xb])
        y = np.concatenate([y, yb])
    Xt, yt = _finite_rows(X, y)
    j = int(np.argmax(yt))
    return BoResult(Xt[j].copy(), float(yt[j]), history, X, y, model)


@dataclass
class BalResult:
    surrogate: gp_mod.GpModel
    X: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    convergence: list
    smoothed_convergence: list
    model_calls: int
    saved_path: Path | None = None
    converged: bool = False


def run_bayesian_active_learning(target: CalibrationTarget, cfg: ActiveLearningConfig | None = None,
                                 save_path=None) -> BalResult:
    """Train a GP mapping the sampled parameter vector to the log-likelihood.

    Each selected point runs the model at every experimental configuration
    (one concurrent batch through ``target.batch_model``) and contributes
    one log-likelihood value. Candidates are scored with the Bayesian
    posterior-targeted acquisition in log form. The per-iteration
    convergence metric is the largest log acquisition over the pool; its
    moving average over ``cfg.convergence_window`` iterations stops the loop
    early once consecutive values differ by less than ``cfg.convergence_tol``.
    """
    cfg = cfg or ActiveLearningConfig(acquisition="BayesianPosteriorTargeted", lam=1.0, batch_size=5,
                                      iterations=30, warmup=10)
    rng_design = rng_stream(cfg.seed, 0)
    rng_pool = rng_stream(cfg.seed, 1)
    X = target.sample(cfg.warmup, rng_design, method="lhs")
    y = target.log_likelihood_batch(X)
    metric, smoothed = [], []
    model = None
    converged = False
    for _ in range(cfg.iterations):
        Xt, yt = _finite_rows(X, y)
        init = model.params if model is not None else None
        model = gp_mod.train_gp(Xt, yt, cfg.trainer, init=init)
        pool = target.sample(cfg.pool_size, rng_pool)
        pred = model.predict(pool)
        logs = log_bpt_score(cfg.lam, pred.mean, pred.std)
        metric.append(float(np.max(logs)))
        w = metric[-cfg.convergence_window:]
        smoothed.append(float(np.mean(w)))
        idx = select_batch_from_values(pool, logs, cfg.batch_size, model_length_scales(model), log_values=True)
        Xb = pool[idx]
        yb = target.log_likelihood_batch(Xb)
        X = np.vstack([X, Xb])
        y = np.concatenate([y, yb])
        if (cfg.convergence_tol is not None and len(smoothed) > cfg.convergence_window
                and abs(smoothed[-1] - smoothed[-2]) < cfg.convergence_tol):
            converged = True
            break
    Xt, yt = _finite_rows(X, y)
    init = model.params if model is not None else None
    model = gp_mod.train_gp(Xt, yt, cfg.trainer, init=init)
    saved = None
    if save_path is not None:
        saved = Path(gp_mod.save(model, save_path))
    return BalResult(model, X, y, metric, smoothed, target.model_calls, saved, converged)


def run_surrogate_mcmc(surrogate, prior: ParameterPrior, kind: str = "de", n_chains: int = 50,
                       n_steps: int = 500, seed: int = 0, init=None, **sampler_kwargs) -> ChainResult:
    """Ensemble MCMC with log posterior = surrogate mean + log prior.

    ``surrogate`` is a trained GP or the path of a saved one. Points outside
    the prior support are rejected without querying the surrogate.
    """
    model = gp_mod.load(surrogate) if isinstance(surrogate, (str, Path)) else surrogate

    def log_post(P):
        P = np.atleast_2d(P)
        lp = prior.log_prior_batch(P)
        inside = np.isfinite(lp)
        if np.any(inside):
            lp[inside] += model.predict(P[inside]).mean
        return lp

    if init is None:
        init = prior.sample(n_chains, rng_stream(seed, 2))
    return run_ensemble(kind, log_post, init, n_steps, rng_stream(seed, 3), **sampler_kwargs)


def run_model_mcmc(target: CalibrationTarget, kind: str = "de", n_chains: int = 50, n_steps: int = 500,
                   seed: int = 0, init=None, **sampler_kwargs) -> ChainResult:
    """Ensemble MCMC directly on the model-based log posterior (same seeding as the surrogate path)."""
    if init is None:
        init = target.sample(n_chains, rng_stream(seed, 2))
    return run_ensemble(kind, target, init, n_steps, rng_stream(seed, 3), **sampler_kwargs)


def posterior_summary(result: ChainResult, burn_in: int = 0) -> dict:
    from .samplers.mcmc import gelman_rubin, mcse

    s = result.samples[burn_in:]
    flat = s.reshape(-1, s.shape[-1])
    out = {
        "mean": flat.mean(axis=0),
        "std": flat.std(axis=0, ddof=1),
        "mcse": mcse(s),
        "acceptance_rate": result.acceptance_rate,
    }
    if s.shape[0] >= 4 and s.shape[1] >= 2:
        out["rhat"] = gelman_rubin(np.swapaxes(s, 0, 1))
    else:
        out["rhat"] = np.full(s.shape[-1], math.nan)
    return out
