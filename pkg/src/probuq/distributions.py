"""One-dimensional distributions used as priors and sampling marginals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class Distribution:
    """Thin wrapper over a frozen ``scipy.stats`` distribution."""

    def frozen(self):  # pragma: no cover - overridden
        raise NotImplementedError

    def logpdf(self, x):
        return self.frozen().logpdf(x)

    def pdf(self, x):
        return self.frozen().pdf(x)

    def cdf(self, x):
        return self.frozen().cdf(x)

    def ppf(self, u):
        return self.frozen().ppf(u)

    def sample(self, rng: np.random.Generator, size=None):
        return self.ppf(rng.uniform(size=size))

    def mean(self) -> float:
        return float(self.frozen().mean())

    def std(self) -> float:
        return float(self.frozen().std())

    def support(self) -> tuple[float, float]:
        lo, hi = self.frozen().support()
        return float(lo), float(hi)

    def to_dict(self) -> dict:
        d = {"kind": type(self).__name__.lower()}
        d.update(self.__dict__)
        return d


@dataclass(frozen=True)
class Uniform(Distribution):
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self):
        if not self.upper > self.lower:
            raise ValueError("uniform upper bound must exceed lower bound")

    def frozen(self):
        return stats.uniform(loc=self.lower, scale=self.upper - self.lower)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lower) & (x <= self.upper)
        out = np.where(inside, -math.log(self.upper - self.lower), -np.inf)
        return out if out.ndim else float(out)

    def ppf(self, u):
        return self.lower + (self.upper - self.lower) * np.asarray(u, dtype=float)


@dataclass(frozen=True)
class Normal(Distribution):
    mean_: float = 0.0
    std_: float = 1.0

    def __post_init__(self):
        if not self.std_ > 0:
            raise ValueError("normal std must be positive")

    def frozen(self):
        return stats.norm(loc=self.mean_, scale=self.std_)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean_) / self.std_
        out = -0.5 * z * z - math.log(self.std_) - 0.5 * math.log(2 * math.pi)
        return out if np.ndim(out) else float(out)

    def to_dict(self):
        return {"kind": "normal", "mean": self.mean_, "std": self.std_}


@dataclass(frozen=True)
class LogNormal(Distribution):
    """``ln X ~ Normal(mu, sigma)``."""

    mu: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("lognormal sigma must be positive")

    def frozen(self):
        return stats.lognorm(s=self.sigma, scale=math.exp(self.mu))


@dataclass(frozen=True)
class TruncatedNormal(Distribution):
    mean_: float = 0.0
    std_: float = 1.0
    lower: float = -math.inf
    upper: float = math.inf

    def __post_init__(self):
        if not self.std_ > 0:
            raise ValueError("truncated-normal std must be positive")
        if not self.upper > self.lower:
            raise ValueError("truncation bounds must satisfy lower < upper")

    def frozen(self):
        a = (self.lower - self.mean_) / self.std_
        b = (self.upper - self.mean_) / self.std_
        return stats.truncnorm(a, b, loc=self.mean_, scale=self.std_)

    def to_dict(self):
        return {"kind": "truncatednormal", "mean": self.mean_, "std": self.std_,
                "lower": self.lower, "upper": self.upper}


def from_dict(d: dict) -> Distribution:
    """Build a distribution from ``{"kind": ..., **params}``."""
    d = dict(d)
    kind = d.pop("kind").lower().replace("_", "")
    if kind == "uniform":
        return Uniform(d["lower"], d["upper"])
    if kind == "normal":
        return Normal(d.get("mean", 0.0), d.get("std", 1.0))
    if kind == "lognormal":
        return LogNormal(d.get("mu", 0.0), d.get("sigma", 1.0))
    if kind == "truncatednormal":
        return TruncatedNormal(d.get("mean", 0.0), d.get("std", 1.0),
                               d.get("lower", -math.inf), d.get("upper", math.inf))
    raise ValueError(f"unknown distribution kind {kind!r}")


def joint_logpdf(dists, x) -> float:
    """Sum of marginal log densities; ``-inf`` as soon as one is zero."""
    total = 0.0
    for dist, xi in zip(dists, np.atleast_1d(x)):
        lp = float(dist.logpdf(xi))
        if lp == -math.inf or math.isnan(lp):
            return -math.inf
        total += lp
    return total


def joint_logpdf_batch(dists, X) -> np.ndarray:
    X = np.atleast_2d(X)
    out = np.zeros(X.shape[0])
    for j, dist in enumerate(dists):
        out += np.asarray(dist.logpdf(X[:, j]), dtype=float)
    out[np.isnan(out)] = -np.inf
    return out
