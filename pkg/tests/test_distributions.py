import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from probuq.distributions import LogNormal, Normal, TruncatedNormal, Uniform, from_dict, joint_logpdf, joint_logpdf_batch

DISTS = [Uniform(-1.0, 3.0), Normal(0.5, 2.0), LogNormal(0.1, 0.4), TruncatedNormal(0.0, 1.0, -0.5, 2.0)]


def test_closed_forms():
    assert Uniform(-1.0, 3.0).logpdf(0.0) == pytest.approx(-math.log(4.0))
    assert Uniform(-1.0, 3.0).logpdf(5.0) == -math.inf
    assert Normal(0.0, 1.0).logpdf(0.0) == pytest.approx(-0.5 * math.log(2 * math.pi))
    assert LogNormal(0.0, 1.0).logpdf(1.0) == pytest.approx(stats.lognorm(1.0).logpdf(1.0))
    assert TruncatedNormal(0.0, 1.0, 0.0, math.inf).logpdf(-0.1) == -math.inf
    assert TruncatedNormal(0.0, 1.0, 0.0, math.inf).logpdf(0.5) == pytest.approx(
        stats.norm.logpdf(0.5) + math.log(2.0))


def test_invalid_parameters():
    with pytest.raises(ValueError):
        Uniform(1.0, 1.0)
    with pytest.raises(ValueError):
        Normal(0.0, 0.0)
    with pytest.raises(ValueError):
        LogNormal(0.0, -1.0)
    with pytest.raises(ValueError):
        TruncatedNormal(0.0, 1.0, 2.0, 1.0)
    with pytest.raises(ValueError):
        from_dict({"kind": "cauchy"})


@pytest.mark.parametrize("dist", DISTS)
def test_dict_round_trip(dist):
    again = from_dict(dist.to_dict())
    assert again == dist


@pytest.mark.parametrize("dist", DISTS)
def test_sampling_matches_cdf(dist):
    x = dist.sample(np.random.default_rng(0), 4000)
    assert stats.kstest(x, lambda v: np.asarray(dist.cdf(v))).pvalue > 1e-3
    lo, hi = dist.support()
    assert np.all((x >= lo) & (x <= hi))


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(DISTS), st.floats(0.001, 0.999))
def test_ppf_inverts_cdf(dist, u):
    assert float(dist.cdf(dist.ppf(u))) == pytest.approx(u, abs=1e-9)


def test_joint_logpdf():
    x = np.array([0.0, 0.5, 1.0, 0.1])
    expected = sum(float(d.logpdf(v)) for d, v in zip(DISTS, x))
    assert joint_logpdf(DISTS, x) == pytest.approx(expected)
    assert joint_logpdf(DISTS, [10.0, 0.5, 1.0, 0.1]) == -math.inf
    batch = joint_logpdf_batch(DISTS, np.vstack([x, [10.0, 0.5, 1.0, 0.1]]))
    assert batch[0] == pytest.approx(expected) and batch[1] == -math.inf
