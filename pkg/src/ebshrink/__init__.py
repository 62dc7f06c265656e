"""Empirical Bayes shrinkage through modeling of the marginal density."""

__version__ = "0.1.0"

from .diagnostics import (  # noqa: E402
    DiagnosticReport,
    HeatTestConfig,
    convexity_check,
    heat_extension_check,
    polynomial_realizability,
    posterior_variance_positivity,
)
from .errors import ShrinkageError  # noqa: E402
from .fitting import (  # noqa: E402
    FitReport,
    ScoreMatchConfig,
    bin_observations,
    fit_kde,
    fit_lindsey,
    fit_npmle_em,
    fit_scorematch,
)
from .models import GridLogMarginal, LogMarginalModel, MixtureLogMarginal, PolynomialLogMarginal  # noqa: E402
from .oracle import mixture_log_marginal, oracle_bayes_risk, oracle_posterior_mean, oracle_posterior_var  # noqa: E402
from .priors import EvaluationGrid, MixingMeasure, ObservationSet, make_prior, sample_compound  # noqa: E402
from .rules import (  # noqa: E402
    expfam_posterior_moments,
    james_stein,
    posterior_mean_from_mixture,
    robbins_poisson_rule,
    sure_estimate,
    tweedie_rule,
    west_precision_moments,
)
