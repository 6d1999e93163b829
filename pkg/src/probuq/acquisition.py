"""Acquisition functions for active learning and greedy batch selection.

All scores are "larger is better" except the U-function, which is a
minimization score (small values flag samples whose classification
against the threshold is uncertain).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtr

from .errors import DegenerateSigmaWarning, DimensionMismatch, EmptyVector, InsufficientCandidates

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class AcquisitionKind(str, Enum):
    EXPECTED_IMPROVEMENT = "ExpectedImprovement"
    UPPER_CONFIDENCE_BOUND = "UpperConfidenceBound"
    PROBABILITY_OF_IMPROVEMENT = "ProbabilityOfImprovement"
    BAYESIAN_POSTERIOR_TARGETED = "BayesianPosteriorTargeted"
    U_FUNCTION = "UFunction"
    EXPECTED_IMPROVEMENT_GLOBAL_FIT = "ExpectedImprovementGlobalFit"
    COEFFICIENT_OF_VARIATION = "CoefficientOfVariation"


_REDUCTIONS = {
    "sum": np.sum,
    "mean": np.mean,
    "max": np.max,
    "min": np.min,
    "product": np.prod,
}

_NEEDS_BEST = {
    AcquisitionKind.EXPECTED_IMPROVEMENT,
    AcquisitionKind.PROBABILITY_OF_IMPROVEMENT,
    AcquisitionKind.EXPECTED_IMPROVEMENT_GLOBAL_FIT,
}


@dataclass(frozen=True)
class AcquisitionSpec:
    """``lam`` is the tuning constant: exploration weight (UCB), margin
    (EI, POI), threshold (U-function) or exponent scale (BPT)."""

    kind: AcquisitionKind | str
    lam: float = 0.0
    best_value: float | None = None
    reduction: str = "sum"

    def __post_init__(self):
        object.__setattr__(self, "kind", AcquisitionKind(self.kind))
        if not math.isfinite(self.lam):
            raise ValueError("lambda must be finite")
        if self.kind in _NEEDS_BEST and (self.best_value is None or not math.isfinite(self.best_value)):
            raise ValueError(f"{self.kind.value} requires a finite best_value")
        if self.reduction not in _REDUCTIONS:
            raise ValueError(f"reduction must be one of {sorted(_REDUCTIONS)}")

    @property
    def minimize(self) -> bool:
        return self.kind is AcquisitionKind.U_FUNCTION

    def with_best(self, best_value: float) -> "AcquisitionSpec":
        return AcquisitionSpec(self.kind, self.lam, best_value, self.reduction)


def _phi(x):
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _divide(num, sigma, kind):
    """``num / sigma`` with ``+inf`` (and a warning) wherever ``sigma == 0``."""
    zero = sigma == 0
    if np.any(zero):
        warnings.warn(f"{kind.value}: zero predictive std, score set to +inf", DegenerateSigmaWarning,
                      stacklevel=3)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.abs(num) / np.where(zero, 1.0, sigma)
    return np.where(zero, np.inf, out)


def evaluate_acquisition(spec: AcquisitionSpec, mu, sigma):
    """Elementwise score for predictive means ``mu`` and standard deviations ``sigma``.

    ========================  ===========================================
    kind                      score
    ========================  ===========================================
    ExpectedImprovement       ``z Phi(z/s) + s phi(z/s)``, ``z = mu - lam - best``
    UpperConfidenceBound      ``mu + lam s``
    ProbabilityOfImprovement  ``Phi((mu - best - lam) / s)``
    BayesianPosteriorTargeted ``exp(2 lam mu) (exp(s^2) - 1)``
    UFunction                 ``|mu - lam| / s``   (minimize)
    ExpectedImprovementGlobal ``(mu - best)^2 + s^2``
    CoefficientOfVariation    ``s / |mu|``
    ========================  ===========================================

    Returns a float for scalar inputs, otherwise an array.
    """
    mu_a = np.asarray(mu, dtype=float)
    s = np.asarray(sigma, dtype=float)
    if np.any(s < 0):
        raise ValueError("sigma must be non-negative")
    mu_a, s = np.broadcast_arrays(mu_a, s)
    k = spec.kind
    if k is AcquisitionKind.EXPECTED_IMPROVEMENT:
        z = mu_a - spec.lam - spec.best_value
        pos = s > 0
        sd = np.where(pos, s, 1.0)
        out = np.where(pos, z * ndtr(z / sd) + s * _phi(z / sd), np.maximum(z, 0.0))
    elif k is AcquisitionKind.UPPER_CONFIDENCE_BOUND:
        out = mu_a + spec.lam * s
    elif k is AcquisitionKind.PROBABILITY_OF_IMPROVEMENT:
        d = mu_a - spec.best_value - spec.lam
        pos = s > 0
        out = np.where(pos, ndtr(d / np.where(pos, s, 1.0)), np.where(d > 0, 1.0, np.where(d == 0, 0.5, 0.0)))
    elif k is AcquisitionKind.BAYESIAN_POSTERIOR_TARGETED:
        with np.errstate(over="ignore"):
            out = np.exp(2.0 * spec.lam * mu_a) * np.expm1(s * s)
    elif k is AcquisitionKind.U_FUNCTION:
        out = _divide(mu_a - spec.lam, s, k)
    elif k is AcquisitionKind.EXPECTED_IMPROVEMENT_GLOBAL_FIT:
        out = (mu_a - spec.best_value) ** 2 + s * s
    elif k is AcquisitionKind.COEFFICIENT_OF_VARIATION:
        out = _divide(s, np.abs(mu_a), k)
    else:  # pragma: no cover
        raise ValueError(k)
    return float(out) if out.ndim == 0 else out


def log_bpt_score(lam, mu, sigma):
    """``ln`` of the BPT score, finite where the direct form overflows."""
    s2 = np.asarray(sigma, dtype=float) ** 2
    # ln(e^s2 - 1) = s2 + ln(1 - e^-s2) stays finite for large s2.
    with np.errstate(divide="ignore"):
        return 2.0 * lam * np.asarray(mu, dtype=float) + s2 + np.log(-np.expm1(-s2))


def reduce_vector_acquisition(spec: AcquisitionSpec, mu_vec, sigma_vec) -> float:
    mu_vec = np.atleast_1d(np.asarray(mu_vec, dtype=float))
    sigma_vec = np.atleast_1d(np.asarray(sigma_vec, dtype=float))
    if mu_vec.size == 0:
        raise EmptyVector("empty prediction vector")
    if mu_vec.shape != sigma_vec.shape:
        raise DimensionMismatch("mu and sigma must have equal lengths")
    vals = np.atleast_1d(evaluate_acquisition(spec, mu_vec, sigma_vec))
    return float(_REDUCTIONS[spec.reduction](vals))


def local_penalization_correlation(x, x2, length_scales):
    """``1 - exp(-||(x - x2) / l|| / 2)``; broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    ls = np.asarray(length_scales, dtype=float)
    if x.shape[-1] != x2.shape[-1] or ls.shape[-1:] not in ((x.shape[-1],), (1,)):
        raise DimensionMismatch("x, x2 and length_scales must share the last dimension")
    if np.any(ls <= 0):
        raise ValueError("length scales must be positive")
    r = np.sqrt(np.sum(((x - x2) / ls) ** 2, axis=-1))
    out = -np.expm1(-0.5 * r)
    return float(out) if np.ndim(out) == 0 else out


def select_batch_from_values(candidates, values, batch_size: int, length_scales,
                             log_values: bool = False) -> np.ndarray:
    """Greedy penalized selection from precomputed acquisition ``values``.

    Point ``k`` maximizes ``a(x) * prod_{i<k} Corr(x, x_i)``. Ties go to the
    lowest candidate index; already selected indices are excluded. With
    ``log_values`` the inputs are ``ln a(x)`` and penalties are added in
    log space, which selects the same points without overflow.
    """
    X = np.atleast_2d(np.asarray(candidates, dtype=float))
    a = np.asarray(values, dtype=float).reshape(-1)
    if a.size != X.shape[0]:
        raise DimensionMismatch("one acquisition value per candidate is required")
    if batch_size > X.shape[0]:
        raise InsufficientCandidates(f"batch of {batch_size} from a pool of {X.shape[0]}")
    if batch_size < 1:
        return np.empty(0, dtype=int)
    score = a.copy()
    taken = np.zeros(a.size, dtype=bool)
    chosen = []
    for _ in range(batch_size):
        masked = np.where(taken, -np.inf, score)
        j = int(np.argmax(masked))
        chosen.append(j)
        taken[j] = True
        corr = local_penalization_correlation(X, X[j], length_scales)
        if log_values:
            with np.errstate(divide="ignore"):
                score = score + np.log(corr)
        else:
            score = score * corr
    return np.array(chosen, dtype=int)


def select_batch(candidates, model, spec: AcquisitionSpec, batch_size: int, length_scales=None) -> np.ndarray:
    """Evaluate ``spec`` on ``model.predict(candidates)`` then select greedily.

    ``length_scales`` default to the model's own length scales mapped back
    to input units. Minimization scores are not supported here.
    """
    if spec.minimize:
        raise ValueError("batch selection needs a maximization acquisition")
    X = np.atleast_2d(np.asarray(candidates, dtype=float))
    pred = model.predict(X)
    mu = np.asarray(pred.mean, dtype=float)
    sd = np.sqrt(np.asarray(pred.variance, dtype=float))
    if mu.ndim == 2 and mu.shape[1] > 1:
        values = np.array([reduce_vector_acquisition(spec, m, s) for m, s in zip(mu, sd)])
    else:
        values = np.asarray(evaluate_acquisition(spec, mu.reshape(-1), sd.reshape(-1)))
    if length_scales is None:
        length_scales = model_length_scales(model)
    return select_batch_from_values(X, values, batch_size, length_scales)


def model_length_scales(model) -> np.ndarray:
    """Input-unit length scales of a trained GP-like surrogate."""
    if hasattr(model, "params"):
        ls = model.params.length_scales
    elif hasattr(model, "input_params"):
        ls = np.min([p.length_scales for p in model.input_params], axis=0)
    else:
        raise TypeError("cannot infer length scales from this surrogate; pass them explicitly")
    return ls * model.input_transform.scale
