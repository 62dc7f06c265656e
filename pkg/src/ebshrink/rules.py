"""Shrinkage decision rules and Stein's unbiased risk estimate.

For Gaussian data with ``noise_sd != 1`` the rules work on the standardized
scale ``z = y / sd`` and rescale, which for a model fitted on the raw scale
amounts to ``delta(y) = y + sd^2 * l'(y)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from .errors import (
    DegenerateData,
    InsufficientData,
    InvalidFamily,
    InvalidInput,
    NumericalFailure,
)
from .models import LogMarginalModel, PolynomialLogMarginal
from .oracle import oracle_posterior_mean
from .priors import MixingMeasure, ObservationSet, read_column_csv

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _mean(x: np.ndarray) -> float:
    return math.fsum(x) / x.size


@dataclass(frozen=True)
class ShrinkageEstimates:
    inputs: np.ndarray
    estimates: np.ndarray
    rule_name: str
    model_provenance: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.inputs, float)
        d = np.asarray(self.estimates, float)
        if x.shape != d.shape:
            raise InvalidInput("inputs and estimates must have the same length")
        if not np.all(np.isfinite(d)):
            raise NumericalFailure(f"{self.rule_name}: non-finite estimate")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "estimates", d)

    def __len__(self) -> int:
        return self.estimates.size

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("y,delta\n")
            for y, d in zip(self.inputs, self.estimates):
                fh.write(f"{float(y)!r},{float(d)!r}\n")

    @classmethod
    def read_csv(cls, path, rule_name: str = "", model_provenance: str = "") -> "ShrinkageEstimates":
        y = read_column_csv(path, "y")
        d = read_column_csv(path, "delta")
        return cls(y, d, rule_name, model_provenance)


@dataclass(frozen=True)
class SureValue:
    value: float
    score_term: float
    divergence_term: float

    def to_dict(self) -> dict:
        return {"value": self.value, "score_term": self.score_term, "divergence_term": self.divergence_term}


def _gaussian(obs: ObservationSet) -> None:
    if obs.family != "gaussian-location":
        raise InvalidFamily(f"rule needs gaussian-location data, got {obs.family!r}")


def tweedie_rule(model: LogMarginalModel, obs: ObservationSet) -> ShrinkageEstimates:
    """``delta(y) = y + sd^2 * l'(y)``."""
    _gaussian(obs)
    y = obs.values
    est = y + obs.noise_sd ** 2 * model.score(y)
    return ShrinkageEstimates(y, est, "tweedie", f"{model.representation}:{model.label}")


def james_stein(obs: ObservationSet) -> ShrinkageEstimates:
    """``(1 - (n - 2) sd^2 / sum y^2) y`` (no positive-part truncation)."""
    _gaussian(obs)
    y = obs.values
    n = y.size
    if n < 3:
        raise InsufficientData("James-Stein needs n >= 3")
    ss = math.fsum(y * y)
    if ss == 0:
        raise DegenerateData("sum of squares is zero")
    factor = 1.0 - (n - 2) * obs.noise_sd ** 2 / ss
    return ShrinkageEstimates(y, factor * y, "james-stein", "", {"factor": factor})


def james_stein_model(obs: ObservationSet) -> PolynomialLogMarginal:
    """Quadratic log-marginal whose Tweedie rule is the James-Stein rule:
    ``beta_2 = -(n - 2) / (2 sum y^2)``, ``beta_1 = 0``."""
    y = obs.values
    if y.size < 3:
        raise InsufficientData("James-Stein needs n >= 3")
    ss = math.fsum(y * y)
    if ss == 0:
        raise DegenerateData("sum of squares is zero")
    return PolynomialLogMarginal([0.0, 0.0, -(y.size - 2) / (2.0 * ss)], label="james-stein")


def posterior_mean_from_mixture(prior: MixingMeasure, obs: ObservationSet, noise_sd: float | None = None) -> ShrinkageEstimates:
    """Exact posterior mean under a discrete prior, no differentiation."""
    _gaussian(obs)
    sd = obs.noise_sd if noise_sd is None else noise_sd
    est = oracle_posterior_mean(prior, obs.values, sd)
    return ShrinkageEstimates(obs.values, est, "mixture-posterior", f"mixture:{prior.label}")


# -- Robbins ------------------------------------------------------------------

def pava(values, weights=None) -> np.ndarray:
    """Weighted least-squares nondecreasing fit (pool adjacent violators)."""
    v = np.asarray(values, float)
    w = np.ones_like(v) if weights is None else np.asarray(weights, float)
    means: list[float] = []
    wts: list[float] = []
    sizes: list[int] = []
    for x, wi in zip(v, w):
        means.append(x)
        wts.append(wi)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, s2 = means.pop(), wts.pop(), sizes.pop()
            m1, w1, s1 = means.pop(), wts.pop(), sizes.pop()
            wt = w1 + w2
            means.append((w1 * m1 + w2 * m2) / wt)
            wts.append(wt)
            sizes.append(s1 + s2)
    return np.repeat(means, sizes)


def robbins_table(frequencies) -> np.ndarray:
    """``(k + 1) f(k + 1) / f(k)`` for ``k = 0..K`` (nan where ``f(k) = 0``);
    ``f(K + 1)`` is taken as zero."""
    f = np.asarray(frequencies, float)
    nxt = np.append(f[1:], 0.0)
    k = np.arange(f.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(f > 0, (k + 1) * nxt / f, np.nan)


def robbins_poisson_rule(counts: ObservationSet, smoothed: bool = False) -> ShrinkageEstimates:
    """Robbins' rule ``(y + 1) m(y + 1) / m(y)`` with empirical frequencies.

    An empty next cell gives estimate 0 (listed in ``metadata``). With
    ``smoothed`` the table over observed counts is made nondecreasing by
    count-weighted pool-adjacent-violators before lookup.
    """
    if counts.family != "poisson-count":
        raise InvalidFamily(f"Robbins' rule needs poisson-count data, got {counts.family!r}")
    k = counts.values.astype(np.int64)
    freq = np.bincount(k) / k.size
    table = robbins_table(freq)
    seen = np.flatnonzero(freq > 0)
    zero_next = [int(j) for j in seen if table[j] == 0]
    if smoothed:
        table = table.copy()
        table[seen] = pava(table[seen], freq[seen])
    est = table[k]
    meta = {"zero_numerator_counts": zero_next, "table": {int(j): float(table[j]) for j in seen}}
    name = "robbins-isotonic" if smoothed else "robbins"
    return ShrinkageEstimates(counts.values, est, name, "empirical-frequencies", meta)


# -- exponential-family moments ------------------------------------------------

class GaussianCarrier:
    """``m0 = phi``: ``(log m0)' = -y``, ``(log m0)'' = -1``."""

    def evaluate(self, y, order=0):
        y = np.asarray(y, float)
        if order == 0:
            out = -0.5 * y * y - _LOG_SQRT_2PI
        elif order == 1:
            out = -y
        else:
            out = -np.ones_like(y)
        return float(out) if out.ndim == 0 else out


def _carrier_derivatives(carrier, y: float) -> tuple[float, float]:
    if hasattr(carrier, "evaluate"):
        return float(carrier.evaluate(y, 1)), float(carrier.evaluate(y, 2))
    if callable(carrier):
        h = 1e-4 * (1.0 + abs(y))
        lp, l0, lm = carrier(y + h), carrier(y), carrier(y - h)
        return (lp - lm) / (2 * h), (lp - 2 * l0 + lm) / (h * h)
    raise InvalidInput("carrier must be a model-like object or a callable log-density")


def expfam_posterior_moments(model: LogMarginalModel, carrier_log_density, y: float) -> tuple[float, float]:
    """Posterior mean and variance of the natural parameter:
    ``lambda(y) = log m(y) - log m0(y)``; mean ``lambda'``, variance ``lambda''``."""
    d1, d2 = _carrier_derivatives(carrier_log_density, y)
    return float(model.evaluate(y, 1)) - d1, float(model.evaluate(y, 2)) - d2


# -- West's scale-mixture moments ---------------------------------------------

def standard_normal_log_density(x: float) -> float:
    return -0.5 * x * x - _LOG_SQRT_2PI


@dataclass(frozen=True)
class WestPrior:
    """Gamma(alpha/2, rate beta/2) prior on the precision, base density ``p``.

    ``base_log_density`` must be symmetric and twice differentiable.
    """

    alpha: float
    beta: float
    base_log_density: Callable[[float], float] = standard_normal_log_density

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise InvalidInput("alpha and beta must be positive")
        mass, _ = quad(lambda x: math.exp(self.base_log_density(x)), -np.inf, np.inf, epsabs=1e-12)
        if abs(mass - 1.0) > 1e-6:
            raise InvalidInput(f"base density integrates to {mass}, not 1")

    def log_prior(self, lam: float) -> float:
        a, b = 0.5 * self.alpha, 0.5 * self.beta
        return a * math.log(b) - gammaln(a) + (a - 1.0) * math.log(lam) - b * lam


def west_log_marginal(prior: WestPrior, y: float) -> float:
    """``log p_y(y)``, ``p_y(y) = int lam^(1/2) p(lam^(1/2) y) pi(lam) dlam``.

    Integrated over ``t = log lam`` (removes the endpoint singularity of the
    gamma density) after shifting by the integrand's maximum.
    """
    a, b = 0.5 * prior.alpha, 0.5 * prior.beta
    const = a * math.log(b) - gammaln(a)

    def f(t):
        lam = math.exp(t)
        return 0.5 * t + prior.base_log_density(math.sqrt(lam) * y) + const + a * t - b * lam

    opt = minimize_scalar(lambda t: -f(t), bracket=(-1.0, 1.0))
    tm, fm = float(opt.x), -float(opt.fun)
    lo, hi = tm - 1.0, tm + 1.0
    while f(lo) - fm > -50.0:
        lo -= 1.0
    while f(hi) - fm > -50.0:
        hi += 0.5
    val, err, info = quad(lambda t: math.exp(f(t) - fm), lo, hi, epsabs=0.0, epsrel=1e-13,
                          limit=500, points=[tm], full_output=True)[:3]
    if not (val > 0 and err <= 1e-10 * val):
        raise NumericalFailure(
            f"quadrature for p_y({y}) did not converge: value={val}, abserr={err}, "
            f"evaluations={info.get('neval')}, range=[{lo}, {hi}]"
        )
    return fm + math.log(val)


def west_precision_moments(prior: WestPrior, y: float) -> tuple[float, float]:
    """Posterior mean and variance of the precision ``lambda`` given ``y``.

    ``g = -(log p_y)'`` and ``G = g'`` use central differences with step
    ``1e-4 (1 + |y|)``; then ``E = ((alpha + 1) - y g) / beta`` and
    ``Var = (2 (alpha + 1) - 3 y g - y^2 G) / beta^2``.
    """
    if not math.isfinite(y):
        raise InvalidInput("y must be finite")
    h = 1e-4 * (1.0 + abs(y))
    lp = west_log_marginal(prior, y + h)
    l0 = west_log_marginal(prior, y)
    lm = west_log_marginal(prior, y - h)
    g = -(lp - lm) / (2.0 * h)
    G = -(lp - 2.0 * l0 + lm) / (h * h)
    a1 = prior.alpha + 1.0
    mean = (a1 - y * g) / prior.beta
    var = (2.0 * a1 - 3.0 * y * g - y * y * G) / prior.beta ** 2
    if var < 0:
        raise NumericalFailure(f"negative posterior variance {var} at y={y}")
    return mean, var


# -- SURE ------------------------------------------------------------------------

def sure_estimate(model: LogMarginalModel, obs: ObservationSet) -> SureValue:
    """``1 + mean(s^2) + mean(2 s')`` for the rule ``y + s(y)`` (standardized units)."""
    _gaussian(obs)
    y = obs.values
    s2 = obs.noise_sd ** 2
    score = model.score(y)
    div = model.score_derivative(y)
    score_term = _mean(s2 * score * score)
    div_term = _mean(2.0 * s2 * div)
    return SureValue(1.0 + score_term + div_term, score_term, div_term)
