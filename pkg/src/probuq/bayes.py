"""Bayesian calibration: likelihoods over experimental configurations and posteriors.

Observations are modelled as ``D(Theta_i) = M(Theta_i, theta) + eps`` where
``eps`` absorbs both measurement noise and model inadequacy, with scale
``sigma_eps``. That scale is either calibrated along with ``theta`` (in log
space, the last entry of the parameter vector) or held fixed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .distributions import Distribution, joint_logpdf
from .errors import DimensionMismatch, NonPositiveSigma, OutOfSupport

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ExperimentalDataset:
    configurations: np.ndarray
    observations: np.ndarray
    configuration_names: tuple = ()

    def __post_init__(self):
        C = np.asarray(self.configurations, dtype=float)
        C = C.reshape(-1, 1) if C.ndim == 1 else C
        obs = np.asarray(self.observations, dtype=float).reshape(-1)
        object.__setattr__(self, "configurations", C)
        object.__setattr__(self, "observations", obs)
        if obs.size < 1:
            raise ValueError("at least one observation is required")
        if C.shape[0] != obs.size:
            raise DimensionMismatch("one configuration row per observation is required")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(obs))):
            raise ValueError("experimental data must be finite")

    @property
    def n(self) -> int:
        return self.observations.size

    @classmethod
    def from_csv(cls, path, observation_column: str | None = None) -> "ExperimentalDataset":
        """Header row required; the observation column defaults to the last one."""
        with open(Path(path), newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: expected a header row and at least one data row")
        header = [h.strip() for h in rows[0]]
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
        if data.shape[1] != len(header):
            raise DimensionMismatch(f"{path}: row width does not match the header")
        j = len(header) - 1 if observation_column is None else header.index(observation_column)
        keep = [i for i in range(len(header)) if i != j]
        return cls(data[:, keep], data[:, j], tuple(header[i] for i in keep))


@dataclass(frozen=True)
class LikelihoodSpec:
    family: str = "gaussian"
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        fam = self.family.lower().replace("_", "").replace("-", "")
        fam = {"truncatedgaussian": "truncated", "truncatednormal": "truncated", "normal": "gaussian"}.get(fam, fam)
        if fam not in ("gaussian", "truncated"):
            raise ValueError(f"unknown likelihood family {self.family!r}")
        object.__setattr__(self, "family", fam)
        if fam == "truncated" and not self.lower < self.upper:
            raise ValueError("truncation bounds must satisfy lower < upper")


def log_likelihood(theta, sigma_eps: float, model_outputs, data: ExperimentalDataset,
                   spec: LikelihoodSpec | None = None) -> float:
    """Sum over experiments of the noise log density of ``observation - output``.

    ``theta`` is accepted for signature symmetry; the dependence on it
    enters only through ``model_outputs``.
    """
    spec = spec or LikelihoodSpec()
    if not sigma_eps > 0:
        raise NonPositiveSigma(f"sigma_eps must be positive, got {sigma_eps}")
    out = np.asarray(model_outputs, dtype=float).reshape(-1)
    if out.size != data.n:
        raise DimensionMismatch("one model output per experimental configuration is required")
    obs = data.observations
    if spec.family == "gaussian":
        z = (obs - out) / sigma_eps
        return float(np.sum(-0.5 * z * z) - data.n * (math.log(sigma_eps) + _HALF_LOG_2PI))
    if np.any(obs < spec.lower) or np.any(obs > spec.upper):
        raise OutOfSupport("an observation lies outside the truncation bounds")
    a = (spec.lower - out) / sigma_eps
    b = (spec.upper - out) / sigma_eps
    return float(np.sum(stats.truncnorm.logpdf(obs, a, b, loc=out, scale=sigma_eps)))


def log_posterior(theta, sigma_eps, model_outputs, data, spec, priors: Sequence[Distribution],
                  sigma_prior: Distribution | None = None) -> float:
    """Log likelihood plus log prior; ``-inf`` when any prior density vanishes."""
    lp = joint_logpdf(priors, theta)
    if sigma_prior is not None and lp > -math.inf:
        lp += joint_logpdf([sigma_prior], [sigma_eps])
    if lp == -math.inf:
        return -math.inf
    return log_likelihood(theta, sigma_eps, model_outputs, data, spec) + lp


class ParameterPrior:
    """Prior over the sampled vector ``theta`` or ``[theta, ln sigma_eps]``.

    The vector is ``theta`` when ``fixed_sigma`` is given. Otherwise the
    ``sigma_eps`` prior is specified on the natural scale and the
    ``d sigma / d ln sigma`` Jacobian is included.
    """

    def __init__(self, priors: Sequence[Distribution], sigma_prior: Distribution | None = None,
                 fixed_sigma: float | None = None):
        if fixed_sigma is None and sigma_prior is None:
            raise ValueError("either a sigma_eps prior or a fixed sigma_eps is required")
        if fixed_sigma is not None and not fixed_sigma > 0:
            raise NonPositiveSigma("fixed sigma_eps must be positive")
        self.priors = list(priors)
        self.sigma_prior = sigma_prior
        self.fixed_sigma = fixed_sigma

    @property
    def dim(self) -> int:
        return len(self.priors) + (self.fixed_sigma is None)

    def split(self, params):
        params = np.asarray(params, dtype=float)
        if self.fixed_sigma is not None:
            return params, self.fixed_sigma
        return params[:-1], math.exp(params[-1])

    def log_prior(self, params) -> float:
        theta, sigma = self.split(params)
        lp = joint_logpdf(self.priors, theta)
        if self.fixed_sigma is None and lp > -math.inf:
            lp += joint_logpdf([self.sigma_prior], [sigma])
            lp += math.log(sigma)
        return lp

    def log_prior_batch(self, P) -> np.ndarray:
        return np.array([self.log_prior(p) for p in np.atleast_2d(P)])

    def sample(self, n: int, rng, method: str = "mc") -> np.ndarray:
        """Prior draws of the sampled vector (``ln sigma_eps`` last when calibrated)."""
        from .samplers.forward import latin_hypercube, monte_carlo

        dists = self.priors + ([] if self.fixed_sigma is not None else [self.sigma_prior])
        X = (latin_hypercube if method == "lhs" else monte_carlo)(n, dists, rng)
        if self.fixed_sigma is None:
            X[:, -1] = np.log(X[:, -1])
        return X


class CalibrationTarget(ParameterPrior):
    """Log posterior over a parameter vector, for samplers.

    ``batch_model(thetas, configurations)`` maps a ``(P, d)`` parameter
    batch to a ``(P, N_exp)`` output matrix; non-finite rows count as
    failed evaluations and receive ``-inf``.
    """

    def __init__(self, batch_model: Callable, data: ExperimentalDataset, priors: Sequence[Distribution],
                 spec: LikelihoodSpec | None = None, sigma_prior: Distribution | None = None,
                 fixed_sigma: float | None = None):
        super().__init__(priors, sigma_prior, fixed_sigma)
        self.batch_model = batch_model
        self.data = data
        self.spec = spec or LikelihoodSpec()
        self.model_calls = 0
        self.failed_calls = 0

    def log_likelihood_batch(self, P) -> np.ndarray:
        """Log likelihood of each row, with no prior; model runs only here."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        out = np.full(P.shape[0], -np.inf)
        if P.shape[0] == 0:
            return out
        thetas = np.array([self.split(p)[0] for p in P])
        outputs = np.atleast_2d(np.asarray(self.batch_model(thetas, self.data.configurations), dtype=float))
        self.model_calls += P.shape[0] * self.data.n
        for i, p in enumerate(P):
            if not np.all(np.isfinite(outputs[i])):
                self.failed_calls += 1
                continue
            theta, sigma = self.split(p)
            try:
                out[i] = log_likelihood(theta, sigma, outputs[i], self.data, self.spec)
            except (OutOfSupport, NonPositiveSigma):
                pass
        return out

    def __call__(self, P) -> np.ndarray:
        """Batch log posterior. Rows outside the prior support skip the model."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        lp = np.array([self.log_prior(p) for p in P])
        inside = np.isfinite(lp)
        out = np.full(P.shape[0], -np.inf)
        if np.any(inside):
            out[inside] = lp[inside] + self.log_likelihood_batch(P[inside])
        return out


def sample_noise(spec: LikelihoodSpec, center, sigma, rng) -> np.ndarray:
    center = np.asarray(center, dtype=float)
    if spec.family == "gaussian":
        return center + sigma * rng.standard_normal(center.shape)
    a = (spec.lower - center) / sigma
    b = (spec.upper - center) / sigma
    return stats.truncnorm.ppf(rng.uniform(size=center.shape), a, b, loc=center, scale=sigma)


def posterior_predictive(thetas, sigmas, new_config, model_evaluator: Callable, rng,
                         spec: LikelihoodSpec | None = None,
                         quantiles: Sequence[float] = (0.025, 0.05, 0.5, 0.95, 0.975)) -> dict:
    """Noisy model predictions at ``new_config`` for each posterior draw.

    ``model_evaluator(config, theta)`` returns a scalar; exceptions and
    non-finite values are counted as failures and excluded.
    """
    spec = spec or LikelihoodSpec()
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    sigmas = np.broadcast_to(np.asarray(sigmas, dtype=float), (thetas.shape[0],))
    if thetas.shape[0] < 1:
        raise ValueError("at least one posterior draw is required")
    values, failures = [], 0
    for theta, sigma in zip(thetas, sigmas):
        try:
            y = float(model_evaluator(np.asarray(new_config, dtype=float), theta))
        except Exception:  # noqa: BLE001 - any model failure is counted
            failures += 1
            continue
        if not math.isfinite(y):
            failures += 1
            continue
        values.append(float(sample_noise(spec, np.array(y), sigma, rng)) if sigma > 0 else y)
    values = np.array(values)
    summary = {
        "n_draws": int(thetas.shape[0]),
        "n_failed": failures,
        "failure_fraction": failures / thetas.shape[0],
        "samples": values,
    }
    if values.size:
        qs = np.quantile(values, list(quantiles))
        summary["quantiles"] = {float(q): float(v) for q, v in zip(quantiles, qs)}
        summary["median"] = float(np.median(values))
    else:
        summary["quantiles"] = {float(q): math.nan for q in quantiles}
        summary["median"] = math.nan
    return summary


def conjugate_normal_mean_posterior(observations, sigma_eps, prior_mean, prior_std):
    """Posterior ``(mean, std)`` of ``mu`` when ``obs_i ~ N(mu, sigma_eps^2)`` and ``mu ~ N(m0, s0^2)``."""
    obs = np.asarray(observations, dtype=float)
    prec = 1.0 / prior_std**2 + obs.size / sigma_eps**2
    mean = (prior_mean / prior_std**2 + obs.sum() / sigma_eps**2) / prec
    return float(mean), float(math.sqrt(1.0 / prec))
