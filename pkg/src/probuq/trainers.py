"""Hyperparameter optimizers: Adam / AdamW and a random-walk Metropolis trainer.

Sign convention: ``adam_optimize`` minimizes. Surrogates hand it the
negative log marginal likelihood. ``mh_optimize`` maximizes a log target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .distributions import Distribution, joint_logpdf
from .errors import NonFiniteObjective, NonFiniteTarget
from .numerics import as_generator


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    iterations: int = 1000
    batch_size: int | str = "full"
    schedule: str = "constant"
    decoupled: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.learning_rate <= 0 or self.epsilon <= 0 or self.weight_decay < 0:
            raise ValueError("invalid Adam constants")
        if self.schedule not in ("constant", "cosine"):
            raise ValueError("schedule must be 'constant' or 'cosine'")
        if self.batch_size != "full" and int(self.batch_size) < 1:
            raise ValueError("batch_size must be 'full' or a positive count")


@dataclass(frozen=True)
class MhTrainerConfig:
    samples: int = 2000
    proposal_scales: float | Sequence[float] = 0.1
    priors: Sequence[Distribution] = ()
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")


@dataclass
class AdamResult:
    optimum: np.ndarray
    trace: np.ndarray
    best_value: float
    final: np.ndarray

    def __iter__(self):
        yield self.optimum
        yield self.trace


@dataclass
class MhResult:
    samples: np.ndarray
    acceptance_rate: float
    point_estimate: np.ndarray
    log_targets: np.ndarray = field(repr=False, default=None)

    def __iter__(self):
        yield self.samples
        yield self.acceptance_rate
        yield self.point_estimate


def schedule_multiplier(schedule: str, t: int, total: int) -> float:
    if schedule == "cosine":
        return 0.5 * (1.0 + math.cos(math.pi * (t - 1) / total))
    return 1.0


def adam_minibatch_subsample(n, batch_size, rng) -> np.ndarray:
    """Uniform without-replacement row subset (sorted); all rows when ``batch_size >= n``.

    ``n`` may be a row count or anything with ``len``.
    """
    n = n if isinstance(n, (int, np.integer)) else len(n)
    if batch_size == "full" or int(batch_size) >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=int(batch_size), replace=False))


def adam_optimize(
    objective_and_gradient: Callable,
    init,
    cfg: AdamConfig,
    rng: np.random.Generator | None = None,
    n_data: int | None = None,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
) -> AdamResult:
    """Minimize with Adam (``cfg.decoupled=False``) or AdamW (``True``).

    ``objective_and_gradient(theta)`` returns ``(value, gradient)``. When
    ``cfg.batch_size`` is a count and ``n_data`` is given, it is called as
    ``objective_and_gradient(theta, rows)`` with a fresh row subset per
    iteration.

    Update for iteration ``t`` (``lam`` = weight decay, ``eta_t`` = schedule)::

        g_t   = grad + lam * theta          (Adam only)
        m_t   = b1 m + (1 - b1) g_t ;  v_t = b2 v + (1 - b2) g_t^2
        theta = theta - eta_t * (lr * m_hat / (sqrt(v_hat) + eps) [+ lam * theta  (AdamW)])

    The returned optimum is the best evaluated point, which need not be the
    last iterate. ``bounds`` (lower, upper) projects iterates onto a box.
    """
    theta = np.array(init, dtype=float)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    minibatch = cfg.batch_size != "full" and n_data is not None
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    trace = np.empty(cfg.iterations)
    best_value = math.inf
    best = theta.copy()
    lam = cfg.weight_decay
    for t in range(1, cfg.iterations + 1):
        if minibatch:
            rows = adam_minibatch_subsample(n_data, cfg.batch_size, rng)
            value, grad = objective_and_gradient(theta, rows)
        else:
            value, grad = objective_and_gradient(theta)
        grad = np.asarray(grad, dtype=float)
        if grad.shape != theta.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter shape {theta.shape}")
        if not math.isfinite(value) or not np.all(np.isfinite(grad)):
            raise NonFiniteObjective(t, value)
        trace[t - 1] = value
        if value < best_value:
            best_value = float(value)
            best = theta.copy()
        g = grad if cfg.decoupled else grad + lam * theta
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        step = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        if cfg.decoupled:
            step = step + lam * theta
        theta = theta - schedule_multiplier(cfg.schedule, t, cfg.iterations) * step
        if bounds is not None:
            theta = np.clip(theta, bounds[0], bounds[1])
    return AdamResult(best, trace, best_value, theta)


def mh_steps(log_target, state, log_p, scales, rng, n):
    """Yield ``(state, log_p, accepted)`` for ``n`` random-walk Metropolis steps.

    Resuming from a yielded ``(state, log_p)`` with a generator in the same
    bit state reproduces the remaining steps exactly.
    """
    state = np.array(state, dtype=float)
    scales = np.broadcast_to(np.asarray(scales, dtype=float), state.shape)
    for _ in range(n):
        proposal = state + scales * rng.standard_normal(state.shape)
        lp_new = float(log_target(proposal))
        # always consume the uniform so the stream position is step-aligned
        log_u = math.log(rng.uniform())
        accepted = False
        if math.isnan(lp_new):
            lp_new = -math.inf
        if lp_new > -math.inf and (lp_new >= log_p or log_u < lp_new - log_p):
            state, log_p, accepted = proposal, lp_new, True
        yield state, log_p, accepted


def mh_optimize(log_target: Callable, cfg: MhTrainerConfig, init=None) -> MhResult:
    """Random-walk Metropolis over ``log_target(theta) + sum(log prior)``.

    Gaussian proposals with per-parameter ``cfg.proposal_scales``; the point
    estimate is the visited sample with the highest log target.
    """
    priors = list(cfg.priors)
    if init is None:
        if not priors:
            raise ValueError("an initial point or priors are required")
        init = np.array([p.ppf(0.5) for p in priors], dtype=float)
    init = np.atleast_1d(np.asarray(init, dtype=float))

    def target(theta):
        lp = joint_logpdf(priors, theta) if priors else 0.0
        if lp == -math.inf:
            return -math.inf
        return float(log_target(theta)) + lp

    lp0 = target(init)
    if not math.isfinite(lp0):
        raise NonFiniteTarget(f"log target is not finite at the initial point: {lp0}")
    rng = np.random.default_rng(cfg.seed)
    samples = np.empty((cfg.samples, init.size))
    lps = np.empty(cfg.samples)
    n_acc = 0
    for i, (s, lp, acc) in enumerate(mh_steps(target, init, lp0, cfg.proposal_scales, rng, cfg.samples)):
        samples[i] = s
        lps[i] = lp
        n_acc += acc
    best = int(np.argmax(lps))
    point = samples[best] if lps[best] >= lp0 else init
    return MhResult(samples, n_acc / cfg.samples, point.copy(), lps)
