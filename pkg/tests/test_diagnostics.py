import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ebshrink.diagnostics import (
    INCONCLUSIVE,
    NOT_REALIZABLE,
    REALIZABLE,
    DiagnosticReport,
    HeatTestConfig,
    convexity_check,
    default_heat_config,
    heat_extension_check,
    heat_grid,
    polynomial_realizability,
    posterior_variance_positivity,
)
from ebshrink.errors import InvalidGrid, InvalidInput
from ebshrink.fitting import HistogramBinning, fit_kde, fit_lindsey
from ebshrink.models import MixtureLogMarginal, PolynomialLogMarginal
from ebshrink.priors import EvaluationGrid, MixingMeasure, ObservationSet, make_prior


def gaussian_poly(v):
    return PolynomialLogMarginal([0.0, 0.0, -0.5 / v])


# -- convexity / posterior variance ------------------------------------------

def test_convexity_on_gaussian_marginals():
    grid = EvaluationGrid(-10, 10, 201)
    assert convexity_check(gaussian_poly(2.0), grid).verdict == REALIZABLE
    bad = convexity_check(gaussian_poly(0.5), grid)
    assert bad.verdict == NOT_REALIZABLE
    assert bad.violations[0][:2] == (-10.0, 10.0)
    assert bad.test_statistic == pytest.approx(-1.0)
    assert "necessary, not sufficient" in convexity_check(gaussian_poly(1.5), grid).notes


def test_posterior_variance_profile_details():
    grid = EvaluationGrid(-8, 8, 161)
    rep = posterior_variance_positivity(PolynomialLogMarginal([0, 0, -0.25, 0, -0.001]), grid)
    assert rep.verdict == NOT_REALIZABLE
    assert abs(rep.details["argmin_y"]) == 8.0
    assert rep.details["min_variance"] == pytest.approx(0.5 - 0.012 * 64)
    lo, hi, val = rep.violations[0]
    assert lo == -8.0 and hi < -6.4


coeffs = st.lists(st.floats(-1, 1), min_size=3, max_size=6).map(
    lambda c: c[:-1] + [-abs(c[-1]) - 0.01] if (len(c) - 1) % 2 == 0 else c + [-0.05]
)


@given(coeffs)
def test_convexity_and_posvar_agree(c):
    model = PolynomialLogMarginal(c)
    grid = EvaluationGrid(-4, 4, 81)
    assert convexity_check(model, grid).verdict == posterior_variance_positivity(model, grid).verdict


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(0.01, 1)), min_size=1, max_size=8), st.floats(0.3, 3))
def test_true_mixtures_are_never_flagged(atoms, sd):
    prior = MixingMeasure.from_atoms([u for u, _ in atoms], [w for _, w in atoms])
    model = MixtureLogMarginal(prior, sd)
    grid = EvaluationGrid(-15, 15, 301)
    # with noise sd s the carrier curvature is 1/s^2, so rescale before checking
    prof = 1.0 / sd ** 2 + model.score_derivative(grid.nodes)
    assert prof.min() >= -1e-9


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(0.01, 1)), min_size=1, max_size=8))
def test_unit_noise_mixtures_pass_convexity(atoms):
    prior = MixingMeasure.from_atoms([u for u, _ in atoms], [w for _, w in atoms])
    grid = EvaluationGrid(-15, 15, 301)
    assert convexity_check(MixtureLogMarginal(prior), grid).verdict == REALIZABLE


def test_convexity_is_necessary_not_sufficient():
    # Lindsey K=4 fit to counts from exp(-y^2/4 - y^4/1000)
    edges = np.linspace(-8, 8, 161)
    c = 0.5 * (edges[1:] + edges[:-1])
    lam = np.exp(-c * c / 4 - c ** 4 / 1000)
    counts = np.round(lam / lam.sum() * 1e12).astype(np.int64)
    model, _ = fit_lindsey(HistogramBinning(edges, counts, int(counts.sum())), 4)
    assert model.degree == 4
    assert convexity_check(model, EvaluationGrid(-3, 3, 61)).verdict == REALIZABLE
    assert posterior_variance_positivity(model, EvaluationGrid(-10, 10, 201)).verdict == NOT_REALIZABLE
    rep = polynomial_realizability(model.coefficients)
    assert rep.verdict == NOT_REALIZABLE and rep.details["categorical"]


# -- polynomial degree test ----------------------------------------------------

@pytest.mark.parametrize("K", range(3, 9))
def test_degree_three_and_up_never_realizable(K):
    c = np.zeros(K + 1)
    c[-1] = -1.0
    assert polynomial_realizability(c).verdict == NOT_REALIZABLE


def test_quadratic_classification():
    rep = polynomial_realizability([0.0, 0.6, -0.25])
    assert rep.verdict == REALIZABLE and rep.details["prior"] == "gaussian"
    assert rep.details["prior_mean"] == pytest.approx(1.2)
    assert rep.details["prior_variance"] == pytest.approx(1.0)
    point = polynomial_realizability([0.0, 0.4, -0.5])
    assert point.details["prior"] == "point-mass" and point.details["prior_mean"] == pytest.approx(0.4)
    assert polynomial_realizability([0.0, 0.0, -0.6]).verdict == NOT_REALIZABLE
    assert polynomial_realizability([0.0, 0.0, 0.1]).verdict == NOT_REALIZABLE
    assert polynomial_realizability([1.0, 0.7]).details["prior_mean"] == 0.7
    assert polynomial_realizability([0.0, 1.0, -0.3, 0.0, 0.0]).details["degree"] == 2
    with pytest.raises(InvalidInput):
        polynomial_realizability([])
    with pytest.raises(InvalidInput):
        polynomial_realizability([0.0, np.nan])


# -- heat-equation test ----------------------------------------------------------

def heat_cfg():
    return HeatTestConfig(heat_grid(0.0, 40.0, 4096))


def test_heat_separates_gaussian_marginals():
    stats = []
    for v, want in [(0.6, NOT_REALIZABLE), (0.8, NOT_REALIZABLE), (1.0, REALIZABLE), (1.5, REALIZABLE), (2.0, REALIZABLE)]:
        rep = heat_extension_check(gaussian_poly(v), heat_cfg())
        assert rep.verdict == want, (v, rep.notes)
        stats.append(rep.test_statistic)
    assert all(b <= a for a, b in zip(stats, stats[1:]))


def test_heat_boundary_case_is_flagged():
    rep = heat_extension_check(gaussian_poly(1.0), heat_cfg())
    assert "boundary case" in rep.notes
    assert rep.test_statistic == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize(
    "desc",
    [
        {"kind": "two-point", "a": -2, "b": 2},
        {"kind": "spike-slab", "p0": 0.8, "slab_sd": 3, "n_atoms": 51},
        {"kind": "point", "u": 1.0},
        {"kind": "gaussian", "sd": 2.0, "n_atoms": 101},
    ],
)
def test_heat_accepts_true_mixtures(desc):
    model = MixtureLogMarginal(make_prior(desc))
    rep = heat_extension_check(model)
    assert rep.verdict == REALIZABLE
    assert rep.test_statistic <= 1.0 + 1e-6


def test_heat_inconclusive_when_spectrum_dies_early():
    rep = heat_extension_check(gaussian_poly(20.0), HeatTestConfig(heat_grid(0.0, 80.0, 4096)))
    assert rep.verdict == INCONCLUSIVE


def test_heat_grid_guards():
    with pytest.raises(InvalidGrid):
        HeatTestConfig(EvaluationGrid(-10, 10, 1000))
    with pytest.raises(InvalidGrid):
        heat_extension_check(gaussian_poly(1.0), HeatTestConfig(EvaluationGrid(-1000, 1000, 256)))
    with pytest.raises(InvalidGrid):
        heat_extension_check(gaussian_poly(4.0), HeatTestConfig(EvaluationGrid(-3, 3, 256)))


def test_heat_kde_note_and_bounded_domain():
    rng = np.random.default_rng(3)
    kde = fit_kde(ObservationSet(rng.normal(0, 1.5, 400)))
    assert "KDE" in heat_extension_check(kde).notes
    bounded = PolynomialLogMarginal([0, 0, 0, -0.01], domain=(-3, 3))
    # a density with jumps at the domain ends cannot be a Gaussian convolution
    assert heat_extension_check(bounded, default_heat_config(bounded)).verdict == NOT_REALIZABLE


# -- report container ------------------------------------------------------------

def test_report_json_and_validation():
    rep = heat_extension_check(gaussian_poly(0.6), heat_cfg())
    d = json.loads(json.dumps(rep.to_dict()))
    assert set(d) >= {"verdict", "test_statistic", "threshold", "violations", "notes"}
    assert d["violations"][0]["hi"] >= d["violations"][0]["lo"]
    with pytest.raises(InvalidInput):
        DiagnosticReport(NOT_REALIZABLE)
    with pytest.raises(InvalidInput):
        DiagnosticReport("maybe")
    assert DiagnosticReport(REALIZABLE, test_statistic=math.inf).to_dict()["test_statistic"] is None
