import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ebshrink.errors import ExtremeInputWarning, InvalidInput
from ebshrink.oracle import (
    OracleRule,
    mixture_log_marginal,
    oracle_bayes_risk,
    oracle_posterior_mean,
    oracle_posterior_var,
)
from ebshrink.priors import EvaluationGrid, MixingMeasure, make_prior

SYM = make_prior({"kind": "two-point", "a": -2, "b": 2, "p": 0.5})


def test_two_point_closed_form():
    # posterior weights are proportional to exp(+-2y): mean 2 tanh(2y), var 4 sech^2(2y)
    assert oracle_posterior_mean(SYM, 1.0) == pytest.approx(1.9280551601516338, abs=1e-14)
    assert oracle_posterior_var(SYM, 1.0) == pytest.approx(0.2826032994126579, abs=1e-14)
    y = np.linspace(-4, 4, 33)
    np.testing.assert_allclose(oracle_posterior_mean(SYM, y), 2 * np.tanh(2 * y), atol=1e-14)


def test_point_prior_is_absorbing():
    p = make_prior({"kind": "point", "u": 0.7})
    np.testing.assert_array_equal(oracle_posterior_mean(p, np.array([-50.0, 0.0, 9.0])), 0.7)
    assert oracle_posterior_var(p, 3.0) == 0.0


def test_dense_gaussian_prior_approaches_conjugate_answer():
    prior = make_prior({"kind": "gaussian", "mean": 0, "sd": 1, "n_atoms": 2001})
    y = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(oracle_posterior_mean(prior, y), y / 2, atol=2e-3)
    np.testing.assert_allclose(oracle_posterior_var(prior, y), 0.5, atol=2e-3)


def test_noise_scale_equivariance():
    prior = make_prior({"kind": "discrete", "support": [-1, 0, 2.5], "weights": [0.3, 0.3, 0.4]})
    scaled = MixingMeasure(prior.support * 3, prior.weights)
    y = np.linspace(-5, 5, 21)
    np.testing.assert_allclose(
        oracle_posterior_mean(scaled, 3 * y, noise_sd=3.0), 3 * oracle_posterior_mean(prior, y), rtol=1e-12, atol=1e-12
    )


def test_bayes_risk_two_point():
    # adaptive-quadrature value of E[4 sech^2(2Y)] under the marginal
    assert oracle_bayes_risk(SYM) == pytest.approx(0.2743896351629553, abs=1e-9)
    assert oracle_bayes_risk(make_prior({"kind": "point"})) == 0.0
    with pytest.raises(InvalidInput):
        oracle_bayes_risk(SYM, n_nodes=100)


def test_extreme_inputs_warn_and_fall_back():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        out = oracle_posterior_mean(SYM, np.array([1e300, 0.0]))
    assert out[0] == 2.0 and out[1] == 0.0
    assert any(issubclass(w.category, ExtremeInputWarning) for w in rec)


def test_invalid_inputs():
    with pytest.raises(InvalidInput):
        oracle_posterior_mean(SYM, float("nan"))
    with pytest.raises(InvalidInput):
        oracle_posterior_mean(SYM, 0.0, noise_sd=-1)


priors = st.lists(st.tuples(st.floats(-10, 10), st.floats(0.01, 1)), min_size=1, max_size=8).map(
    lambda a: MixingMeasure.from_atoms([u for u, _ in a], [w for _, w in a])
)


@given(priors, st.lists(st.floats(-30, 30), min_size=2, max_size=20))
def test_posterior_mean_properties(prior, ys):
    y = np.sort(np.array(ys))
    m = oracle_posterior_mean(prior, y)
    v = oracle_posterior_var(prior, y)
    lo, hi = prior.support.min(), prior.support.max()
    assert np.all(m >= lo - 1e-9) and np.all(m <= hi + 1e-9)
    assert np.all(v >= 0)
    assert np.all(np.diff(m) >= -1e-9)  # posterior mean is nondecreasing in y


def test_oracle_rule_table():
    grid = EvaluationGrid(-3, 3, 7)
    rule = OracleRule(SYM, grid=grid)
    np.testing.assert_allclose(rule.table, 2 * np.tanh(2 * grid.nodes), atol=1e-14)
    assert rule(0.0) == 0.0
    assert isinstance(mixture_log_marginal(SYM).log_density(0.0), float)
    with pytest.raises(InvalidInput):
        OracleRule(SYM, family="poisson-count")
    assert math.isfinite(rule(1e3))
