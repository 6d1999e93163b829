import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from probuq.acquisition import (
    AcquisitionKind,
    AcquisitionSpec,
    evaluate_acquisition,
    local_penalization_correlation,
    log_bpt_score,
    model_length_scales,
    reduce_vector_acquisition,
    select_batch,
    select_batch_from_values,
)
from probuq.errors import DegenerateSigmaWarning, DimensionMismatch, EmptyVector, InsufficientCandidates
from probuq.gp import GpModel
from probuq.kernels import ArdKernelParams


def test_closed_form_examples():
    assert evaluate_acquisition(AcquisitionSpec("UpperConfidenceBound", 0.0), 1.7, 0.3) == 1.7
    assert evaluate_acquisition(AcquisitionSpec("UpperConfidenceBound", 2.0), 1.0, 0.5) == 2.0
    assert evaluate_acquisition(AcquisitionSpec("ProbabilityOfImprovement", 0.0, 0.4), 0.4, 1.0) == 0.5
    assert evaluate_acquisition(AcquisitionSpec("ExpectedImprovement", 0.0, 0.0), -1.0, 0.0) == 0.0
    ei = evaluate_acquisition(AcquisitionSpec("ExpectedImprovement", 0.0, 0.0), 1.0, 1.0)
    assert ei == pytest.approx(1.083316, abs=1e-6)
    assert ei == pytest.approx(norm.cdf(1) + norm.pdf(1), abs=1e-12)


def test_other_kinds():
    assert evaluate_acquisition(AcquisitionSpec("UFunction", 1.0), 3.0, 0.5) == 4.0
    assert evaluate_acquisition(AcquisitionSpec("ExpectedImprovementGlobalFit", 0.0, 1.0), 3.0, 2.0) == 8.0
    assert evaluate_acquisition(AcquisitionSpec("CoefficientOfVariation"), -2.0, 0.5) == 0.25
    bpt = evaluate_acquisition(AcquisitionSpec("BayesianPosteriorTargeted", 1.0), 0.5, 0.8)
    assert bpt == pytest.approx(math.exp(1.0) * (math.exp(0.64) - 1))
    assert float(log_bpt_score(1.0, 0.5, 0.8)) == pytest.approx(math.log(bpt))
    assert np.isfinite(log_bpt_score(1.0, 1e4, 1.0))


def test_zero_sigma_warns_for_ratio_scores():
    with pytest.warns(DegenerateSigmaWarning):
        assert evaluate_acquisition(AcquisitionSpec("UFunction", 0.0), 1.0, 0.0) == math.inf


def test_spec_validation():
    with pytest.raises(ValueError):
        AcquisitionSpec("ExpectedImprovement")
    with pytest.raises(ValueError):
        AcquisitionSpec("NoSuchKind")
    with pytest.raises(ValueError):
        AcquisitionSpec("UpperConfidenceBound", reduction="median")
    with pytest.raises(ValueError):
        evaluate_acquisition(AcquisitionSpec("UpperConfidenceBound"), 0.0, -1.0)
    assert AcquisitionSpec("UFunction").minimize
    assert AcquisitionSpec("ExpectedImprovement", best_value=0.0).with_best(2.0).best_value == 2.0


def test_vector_reduction():
    ucb = AcquisitionSpec("UpperConfidenceBound", 1.0, reduction="max")
    assert reduce_vector_acquisition(ucb, [1.0], [0.5]) == evaluate_acquisition(ucb, 1.0, 0.5)
    assert reduce_vector_acquisition(ucb, [1.0, 3.0], [0.5, 0.1]) == pytest.approx(3.1)
    prod = AcquisitionSpec("ExpectedImprovementGlobalFit", 0.0, 0.0, reduction="product")
    assert reduce_vector_acquisition(prod, [1.0, -2.0], [0.3, 0.4]) >= 0
    with pytest.raises(EmptyVector):
        reduce_vector_acquisition(ucb, [], [])
    with pytest.raises(DimensionMismatch):
        reduce_vector_acquisition(ucb, [1.0, 2.0], [1.0])


def test_correlation_examples():
    assert local_penalization_correlation([0.3, 0.1], [0.3, 0.1], [1.0, 1.0]) == 0.0
    assert local_penalization_correlation([0.0], [2.0], [1.0]) == pytest.approx(0.632121, abs=1e-6)
    assert local_penalization_correlation([0.0], [1e3], [1.0]) == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(-5, 5), st.floats(0.01, 5), st.floats(-5, 5), st.floats(-2, 2))
def test_ei_is_nonnegative_and_monotone_in_mu(mu, sigma, best, lam):
    spec = AcquisitionSpec("ExpectedImprovement", lam, best)
    a = evaluate_acquisition(spec, mu, sigma)
    assert a >= 0
    assert evaluate_acquisition(spec, mu + 0.1, sigma) >= a - 1e-12
    assert a >= max(mu - lam - best, 0.0) - 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=3), st.lists(st.floats(-3, 3), min_size=1, max_size=3),
       st.floats(0.1, 2))
def test_correlation_bounds_and_symmetry(x, y, ls):
    n = min(len(x), len(y))
    x, y = np.array(x[:n]), np.array(y[:n])
    c = local_penalization_correlation(x, y, np.full(n, ls))
    assert 0 <= c < 1
    assert c == local_penalization_correlation(y, x, np.full(n, ls))


def _exhaustive(X, a, b, ls):
    """Best ordered batch under the greedy rule, checked by enumerating all orderings."""
    best = None
    for perm in itertools.permutations(range(len(a)), b):
        ok = True
        for k, j in enumerate(perm):
            def score(i):
                return a[i] * np.prod([local_penalization_correlation(X[i], X[p], ls) for p in perm[:k]])
            free = [i for i in range(len(a)) if i not in perm[:k]]
            if score(j) < max(score(i) for i in free):
                ok = False
                break
        if ok:
            best = list(perm)
            break
    return best


def test_select_batch_pool_of_three():
    X = np.array([[0.0], [0.1], [2.0]])
    a = np.array([1.0, 0.95, 0.6])
    ls = np.array([1.0])
    # Corr(x1, x0) = 1 - exp(-0.05) ~ 0.049 while Corr(x2, x0) = 1 - exp(-1) ~ 0.632.
    idx = select_batch_from_values(X, a, 2, ls)
    assert list(idx) == [0, 2]
    assert list(idx) == _exhaustive(X, a, 2, ls)


def test_select_batch_rules(rng):
    X = rng.uniform(size=(10, 2))
    a = rng.uniform(size=10)
    assert list(select_batch_from_values(X, a, 1, [1.0, 1.0])) == [int(np.argmax(a))]
    dup = np.vstack([X, X[np.argmax(a)]])
    a2 = np.append(a, a.max())
    idx = select_batch_from_values(dup, a2, 2, [1.0, 1.0])
    assert 10 not in idx
    with pytest.raises(InsufficientCandidates):
        select_batch_from_values(X, a, 11, [1.0, 1.0])
    with pytest.raises(DimensionMismatch):
        select_batch_from_values(X, a[:-1], 2, [1.0, 1.0])


def test_log_values_select_same_points(rng):
    X = rng.uniform(size=(30, 2))
    a = rng.uniform(0.1, 1.0, 30)
    np.testing.assert_array_equal(select_batch_from_values(X, a, 5, [0.3, 0.3]),
                                  select_batch_from_values(X, np.log(a), 5, [0.3, 0.3], log_values=True))


def test_select_batch_with_model(rng):
    X = rng.uniform(-2, 2, (8, 1))
    m = GpModel.fit(X, -X[:, 0] ** 2, ArdKernelParams([0.5], 1.0, 1e-4))
    pool = np.linspace(-2, 2, 41)[:, None]
    spec = AcquisitionSpec(AcquisitionKind.UPPER_CONFIDENCE_BOUND, 1.0)
    idx = select_batch(pool, m, spec, 3)
    assert len(set(idx.tolist())) == 3
    np.testing.assert_allclose(model_length_scales(m), 0.5 * m.input_transform.scale)
    with pytest.raises(ValueError):
        select_batch(pool, m, AcquisitionSpec("UFunction"), 2)


def test_log_bpt_stable_for_wide_predictions():
    v = log_bpt_score(0.5, [0.0, 1.0], [30.0, 1e-3])
    assert v[0] == pytest.approx(900.0)
    assert v[1] == pytest.approx(1.0 + math.log(math.expm1(1e-6)))
    assert log_bpt_score(1.0, 0.0, 0.0) == -math.inf
