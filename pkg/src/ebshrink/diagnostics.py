"""Realizability diagnostics: can a candidate marginal be a Gaussian
convolution ``m = phi * F`` for some prior ``F``?

* :func:`convexity_check` / :func:`posterior_variance_positivity` --
  ``1 + l''(y) >= 0``, i.e. ``c(y) = y^2/2 + l(y)`` convex (necessary only)
* :func:`polynomial_realizability` -- exp(polynomial) marginals of degree
  3 or more are never convolutions; degree 2 only with a Gaussian prior
* :func:`heat_extension_check` -- undo the unit-variance Gaussian smoothing
  in Fourier space and test that what is left stays bounded
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidGrid, InvalidInput
from .models import LogMarginalModel, MixtureLogMarginal, PolynomialLogMarginal, integrate_exp
from .priors import EvaluationGrid

REALIZABLE = "realizable"
NOT_REALIZABLE = "not-realizable"
INCONCLUSIVE = "inconclusive"

CONVEXITY_TOL = 1e-6


def _json_float(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass(frozen=True)
class DiagnosticReport:
    verdict: str
    violations: tuple = ()  # (lo, hi, value) triples
    test_statistic: float = math.nan
    threshold: float = math.nan
    notes: str = ""
    check: str = ""
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.verdict not in (REALIZABLE, NOT_REALIZABLE, INCONCLUSIVE):
            raise InvalidInput(f"unknown verdict {self.verdict!r}")
        if self.verdict == NOT_REALIZABLE and not self.violations and not self.details.get("categorical"):
            raise InvalidInput("a not-realizable verdict needs a violation or a categorical reason")

    @property
    def realizable(self) -> bool:
        return self.verdict == REALIZABLE

    def to_dict(self) -> dict:
        return {
            "check": self.check,
            "verdict": self.verdict,
            "test_statistic": _json_float(self.test_statistic),
            "threshold": _json_float(self.threshold),
            "violations": [{"lo": _json_float(a), "hi": _json_float(b), "value": _json_float(v)}
                           for a, b, v in self.violations],
            "notes": self.notes,
            "details": {k: (_json_float(v) if isinstance(v, float) else v) for k, v in self.details.items()},
        }


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Index ranges ``[i, j]`` of consecutive True entries."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    return list(zip(starts.tolist(), ends.tolist()))


def _variance_profile(model: LogMarginalModel, grid: EvaluationGrid) -> tuple[np.ndarray, np.ndarray]:
    y = grid.nodes
    return y, 1.0 + model.score_derivative(y)


def _profile_violations(y, prof, tol):
    bad = prof < -tol
    return tuple((float(y[i]), float(y[j]), float(prof[i:j + 1].min())) for i, j in _runs(bad))


def convexity_check(model: LogMarginalModel, grid: EvaluationGrid) -> DiagnosticReport:
    """Convexity of ``c(y) = y^2/2 + l(y)``: ``c'' = 1 + l''`` at every node."""
    y, prof = _variance_profile(model, grid)
    violations = _profile_violations(y, prof, CONVEXITY_TOL)
    stat = float(prof.min())
    if violations:
        verdict = NOT_REALIZABLE
        notes = f"c(y) fails to be convex on {len(violations)} interval(s); min c'' = {stat:.6g}"
    else:
        verdict = REALIZABLE
        notes = "c(y) is convex on the grid; convexity is necessary, not sufficient, for a Gaussian convolution"
    return DiagnosticReport(verdict, violations, stat, -CONVEXITY_TOL, notes, "convexity")


def posterior_variance_positivity(model: LogMarginalModel, grid: EvaluationGrid) -> DiagnosticReport:
    """Implied posterior variance ``Var(mu | y) = 1 + l''(y)`` must be >= 0."""
    y, prof = _variance_profile(model, grid)
    violations = _profile_violations(y, prof, CONVEXITY_TOL)
    i = int(np.argmin(prof))
    details = {"argmin_y": float(y[i]), "min_variance": float(prof[i]), "max_variance": float(prof.max())}
    if violations:
        verdict = NOT_REALIZABLE
        notes = f"implied posterior variance is negative, minimum {prof[i]:.6g} at y = {y[i]:.6g}"
    else:
        verdict = REALIZABLE
        notes = f"implied posterior variance is nonnegative, minimum {prof[i]:.6g} at y = {y[i]:.6g}"
    return DiagnosticReport(verdict, violations, float(prof[i]), -CONVEXITY_TOL, notes, "posterior-variance", details)


def polynomial_realizability(coefficients) -> DiagnosticReport:
    """Classify ``log m(y) = sum_k beta_k y^k`` by effective degree ``K``.

    ``K >= 3``: never a Gaussian convolution. ``K = 2``: realizable iff
    ``-1/2 <= beta_2 < 0``; the marginal is ``N(-beta_1 / (2 beta_2), V)``
    with ``V = -1 / (2 beta_2)`` and the prior is ``N(same mean, V - 1)``
    (a point mass when ``beta_2 = -1/2``). ``K <= 1``: read as the
    exponential tilt of ``phi`` by ``beta_1 y``, i.e. a point-mass prior at
    ``beta_1``.
    """
    c = np.asarray(coefficients, float).reshape(-1)
    if c.size == 0:
        raise InvalidInput("empty coefficient list")
    if not np.all(np.isfinite(c)):
        raise InvalidInput("coefficients must be finite")
    c = np.trim_zeros(c, "b")
    K = max(c.size - 1, 0)
    if K >= 3:
        return DiagnosticReport(
            NOT_REALIZABLE, (), float(K), 2.0,
            f"log m is a polynomial of degree {K} >= 3; no prior produces it",
            "polynomial", {"degree": K, "categorical": True},
        )
    if K == 2:
        b1, b2 = float(c[1]), float(c[2])
        if b2 >= 0:
            return DiagnosticReport(
                NOT_REALIZABLE, (), float(K), 2.0,
                f"beta_2 = {b2!r} >= 0: exp(log m) is not a density",
                "polynomial", {"degree": 2, "categorical": True, "beta_2": b2},
            )
        V = -1.0 / (2.0 * b2)
        mean = V * b1
        if b2 < -0.5:
            return DiagnosticReport(
                NOT_REALIZABLE, (), float(K), 2.0,
                f"marginal variance V = {V!r} < 1: narrower than the noise, no prior exists",
                "polynomial", {"degree": 2, "categorical": True, "marginal_variance": V, "beta_2": b2},
            )
        if b2 == -0.5:
            return DiagnosticReport(
                REALIZABLE, (), float(K), 2.0,
                f"degenerate (point-mass) prior at {mean!r}",
                "polynomial", {"degree": 2, "prior": "point-mass", "prior_mean": mean, "prior_variance": 0.0,
                               "marginal_variance": V},
            )
        return DiagnosticReport(
            REALIZABLE, (), float(K), 2.0,
            f"Gaussian prior, variance V-1 = {V - 1.0!r} where V = -1/(2 beta_2) = {V!r}",
            "polynomial", {"degree": 2, "prior": "gaussian", "prior_mean": mean, "prior_variance": V - 1.0,
                           "marginal_variance": V},
        )
    b1 = float(c[1]) if c.size > 1 else 0.0
    return DiagnosticReport(
        REALIZABLE, (), float(K), 2.0,
        f"point-mass prior at {b1!r} (marginal N({b1!r}, 1))",
        "polynomial", {"degree": K, "prior": "point-mass", "prior_mean": b1, "prior_variance": 0.0},
    )


# -- heat-equation / Weierstrass test ----------------------------------------

@dataclass(frozen=True)
class HeatTestConfig:
    grid: EvaluationGrid
    spectral_floor: float = 1e-10
    boundedness_ratio: float = 10.0

    def __post_init__(self):
        n = self.grid.n_nodes
        if n < 256 or n & (n - 1):
            raise InvalidGrid("spectral grid needs a power-of-two node count >= 256")
        if not self.spectral_floor > 0 or not self.boundedness_ratio > 0:
            raise InvalidInput("spectral_floor and boundedness_ratio must be positive")


def heat_grid(center: float, half_width: float, n_nodes: int = 4096) -> EvaluationGrid:
    """Symmetric grid ``[center - half_width, center + half_width]``; the
    half width is raised to at least 8 noise sds."""
    half = max(float(half_width), 8.0)
    return EvaluationGrid(center - half, center + half, n_nodes)


def default_heat_config(model: LogMarginalModel, n_nodes: int = 4096, **kw) -> HeatTestConfig:
    """Spectral grid covering the model's mass with at least 8 sds of padding."""
    if isinstance(model, MixtureLogMarginal):
        u = model.prior.support
        center = 0.5 * (u.min() + u.max())
        half = 0.5 * (u.max() - u.min()) + 12.0 * model.noise_sd
    elif model.domain is not None:
        lo, hi = model.domain
        center, half = 0.5 * (lo + hi), 0.5 * (hi - lo) + 8.0
    elif isinstance(model, PolynomialLogMarginal):
        crit = model._critical_points()
        vals = model.log_density(crit)
        top = float(vals.max())
        center = float(crit[np.argmax(vals)])
        lo, hi = crit.min(), crit.max()
        step = 0.5
        while model.log_density(lo) - top > -60.0:
            lo -= step
        while model.log_density(hi) - top > -60.0:
            hi += step
        half = max(center - lo, hi - center) + 8.0
    else:
        raise InvalidInput("cannot infer a spectral grid for this model; pass a HeatTestConfig")
    return HeatTestConfig(heat_grid(center, half, n_nodes), **kw)


def _sample_density(model: LogMarginalModel, y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    if model.domain is None:
        inside = np.ones(y.size, bool)
    else:
        inside = (y >= model.domain[0]) & (y <= model.domain[1])
    out[inside] = np.exp(model.log_density(y[inside]))
    return out


def _mass_outside(model: LogMarginalModel, grid: EvaluationGrid) -> float:
    lo, hi = grid.lo, grid.hi
    if model.domain is not None:
        lo, hi = max(lo, model.domain[0]), min(hi, model.domain[1])
        if lo >= hi:
            return 1.0
    inside = math.exp(integrate_exp(model.log_density, lo, hi, n_cells=4096))
    return max(0.0, 1.0 - inside)


def heat_extension_check(model: LogMarginalModel, config: HeatTestConfig | None = None) -> DiagnosticReport:
    """Backward heat flow from the observed marginal to the prior.

    With unit noise the marginal is the prior run forward to ``t0 = 1/2``
    under ``u_t = u_xx``; undoing that multiplies the spectrum by
    ``exp(w^2 / 2)``. The statistic ``B = max |m^(w)| exp(w^2/2) / |m^(0)|``
    over frequencies still above ``spectral_floor * |m^(0)|`` is at most 1
    for a true convolution and blows up otherwise.
    """
    config = config or default_heat_config(model)
    grid = config.grid
    h = grid.spacing
    nyquist = math.pi / h
    if nyquist < 4.0:
        raise InvalidGrid(f"grid too coarse: Nyquist frequency {nyquist:.3g} < 4")
    outside = _mass_outside(model, grid)
    if outside > 1e-8:
        raise InvalidGrid(f"density mass outside the spectral grid is {outside:.3g} > 1e-8; widen the grid")

    y = grid.nodes
    m = _sample_density(model, y)
    spec = np.abs(h * np.fft.rfft(m))
    omega = 2.0 * np.pi * np.fft.rfftfreq(y.size, h)
    f0 = spec[0]
    kept = spec >= config.spectral_floor * f0
    with np.errstate(divide="ignore"):
        log_ratio = np.log(spec) + 0.5 * omega ** 2 - math.log(f0)
    log_ratio = np.where(kept, log_ratio, -np.inf)
    k = int(np.argmax(log_ratio))
    B = float(math.exp(min(log_ratio[k], 700.0)))
    omega_cut = float(omega[kept].max())
    tau = config.boundedness_ratio

    details = {
        "omega_cut": omega_cut,
        "omega_at_max": float(omega[k]),
        "nyquist": float(nyquist),
        "mass_outside_grid": float(outside),
    }
    notes = []
    if model.label.startswith("kde"):
        notes.append(f"KDE input: sampling noise inflates high frequencies; floor reached at |w| = {omega_cut:.3g}")

    bad = kept & (log_ratio > math.log(tau))
    if bad.any():
        band = omega[bad]
        violations = ((float(band.min()), float(band.max()), B),)
        notes.insert(0, f"deconvolved spectrum exceeds {tau:g} for |w| in [{band.min():.3g}, {band.max():.3g}]")
        return DiagnosticReport(NOT_REALIZABLE, violations, B, tau, "; ".join(notes), "heat", details)
    if omega_cut < 2.0:
        notes.insert(0, f"spectral floor reached at |w| = {omega_cut:.3g} < 2; resolution insufficient")
        return DiagnosticReport(INCONCLUSIVE, (), B, tau, "; ".join(notes), "heat", details)
    ratios = np.exp(log_ratio[kept])
    if abs(B - 1.0) < 1e-3 and ratios.min() > 1.0 - 1e-3:
        notes.insert(0, "deconvolved spectrum is flat: boundary case, degenerate (point-mass) prior")
    else:
        notes.insert(0, f"deconvolved spectrum bounded by {B:.6g} <= {tau:g}")
    return DiagnosticReport(REALIZABLE, (), B, tau, "; ".join(notes), "heat", details)
