"""Log-marginal models: evaluatable ``l(y) = log m(y)`` with two derivatives.

Three representations share one interface:

* :class:`PolynomialLogMarginal` -- ``l(y) = sum_k beta_k y^k - log Z``
* :class:`GridLogMarginal` -- node values on a uniform grid, C2 cubic spline
* :class:`MixtureLogMarginal` -- a finite Gaussian mixture, exact in log-space
"""

from __future__ import annotations

import math
from typing import Any, Mapping

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.interpolate import CubicSpline
from scipy.special import logsumexp

from .errors import DomainError, InvalidInput
from .priors import EvaluationGrid, MixingMeasure

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)

# mixture evaluation is chunked so (points x atoms) stays below this many cells
_CHUNK_CELLS = 2_000_000


def integrate_exp(log_f, a: float, b: float, n_cells: int = 2048, shift: float | None = None) -> float:
    """``log of integral_a^b exp(log_f(y)) dy`` by 8-point Gauss-Legendre per cell."""
    edges = np.linspace(a, b, n_cells + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    vals = log_f(pts)
    if shift is None:
        shift = float(np.max(vals))
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return shift + math.log(math.fsum(w * np.exp(vals - shift)))


def mixture_stats(
    support: np.ndarray, weights: np.ndarray, y, noise_sd: float = 1.0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log-density, posterior mean and posterior variance of the atom location.

    ``m(y) = sum_j w_j phi((y - u_j) / s) / s``; responsibilities are formed
    with log-sum-exp so no kernel tail underflows to a 0/0.
    """
    y = np.asarray(y, float)
    flat = y.reshape(-1)
    out_l = np.empty(flat.size)
    out_m = np.empty(flat.size)
    out_v = np.empty(flat.size)
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    step = max(1, _CHUNK_CELLS // max(1, support.size))
    for start in range(0, flat.size, step):
        yy = flat[start:start + step, None]
        z = (yy - support[None, :]) / noise_sd
        logk = logw[None, :] - 0.5 * z * z
        lse = logsumexp(logk, axis=1, keepdims=True)
        r = np.exp(logk - lse)
        mean = np.sum(r * support[None, :], axis=1)
        var = np.sum(r * (support[None, :] - mean[:, None]) ** 2, axis=1)
        out_l[start:start + step] = lse[:, 0] - _LOG_SQRT_2PI - math.log(noise_sd)
        out_m[start:start + step] = mean
        out_v[start:start + step] = var
    return out_l.reshape(y.shape), out_m.reshape(y.shape), out_v.reshape(y.shape)


class LogMarginalModel:
    """Base class. Subclasses implement ``_raw(y, order)`` (unnormalized)."""

    representation: str = ""
    log_norm_const: float = 0.0
    domain: tuple[float, float] | None = None
    label: str = ""

    def _raw(self, y: np.ndarray, order: int) -> np.ndarray:
        raise NotImplementedError

    def _check_domain(self, y: np.ndarray) -> None:
        if self.domain is None:
            return
        lo, hi = self.domain
        if np.any(y < lo) or np.any(y > hi):
            bad = y[(y < lo) | (y > hi)]
            raise DomainError(
                f"{self.representation} model is defined on [{lo}, {hi}]; got y={bad.ravel()[0]!r}"
            )

    def evaluate(self, y, order: int = 0):
        """``l``, ``l'`` or ``l''`` at ``y`` (scalar in, scalar out)."""
        if order not in (0, 1, 2):
            raise InvalidInput("order must be 0, 1 or 2")
        arr = np.asarray(y, float)
        if not np.all(np.isfinite(arr)):
            raise DomainError("y must be finite")
        self._check_domain(arr)
        out = self._raw(arr, order)
        if order == 0:
            out = out - self.log_norm_const
        return float(out) if np.ndim(y) == 0 else out

    def log_density(self, y):
        return self.evaluate(y, 0)

    def density(self, y):
        return np.exp(self.evaluate(y, 0))

    def score(self, y):
        return self.evaluate(y, 1)

    def score_derivative(self, y):
        return self.evaluate(y, 2)

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def from_dict(d: Mapping[str, Any]) -> "LogMarginalModel":
        rep = d.get("representation")
        if rep == "polynomial":
            return PolynomialLogMarginal.from_dict(d)
        if rep == "grid":
            return GridLogMarginal.from_dict(d)
        if rep == "mixture":
            return MixtureLogMarginal.from_dict(d)
        raise InvalidInput(f"unknown representation {rep!r}")


class PolynomialLogMarginal(LogMarginalModel):
    """``l(y) = beta_0 + beta_1 y + ... + beta_K y^K - log Z``.

    When the polynomial is integrable on the whole line (even degree,
    negative leading coefficient) the domain defaults to the real line;
    otherwise a finite ``domain`` is required and evaluation outside it
    raises :class:`DomainError`.
    """

    representation = "polynomial"

    def __init__(self, coefficients, domain=None, log_norm_const: float | None = None, label: str = ""):
        c = np.trim_zeros(np.asarray(coefficients, float).reshape(-1), "b")
        if c.size == 0:
            c = np.zeros(1)
        if not np.all(np.isfinite(c)):
            raise InvalidInput("coefficients must be finite")
        self.coefficients = c
        self.label = label
        self.integrable_on_line = polynomial_integrable(c)
        if domain is not None:
            lo, hi = float(domain[0]), float(domain[1])
            if not lo < hi:
                raise InvalidInput("domain must satisfy lo < hi")
            self.domain = (lo, hi)
        elif not self.integrable_on_line:
            raise InvalidInput(
                "exp(polynomial) is not integrable on the real line; supply a finite domain"
            )
        else:
            self.domain = None
        self._d1 = P.polyder(c, 1) if c.size > 1 else np.zeros(1)
        self._d2 = P.polyder(c, 2) if c.size > 2 else np.zeros(1)
        self.log_norm_const = self._normalizer() if log_norm_const is None else float(log_norm_const)

    @property
    def degree(self) -> int:
        return self.coefficients.size - 1

    def _raw(self, y, order):
        coef = (self.coefficients, self._d1, self._d2)[order]
        return P.polyval(y, coef)

    def _critical_points(self) -> np.ndarray:
        if self.degree < 2:
            return np.zeros(0)
        r = P.polyroots(self._d1)
        return np.sort(r[np.abs(r.imag) < 1e-9].real)

    def _normalizer(self) -> float:
        crit = self._critical_points()
        if self.domain is not None:
            lo, hi = self.domain
            cand = np.concatenate([[lo, hi], crit[(crit > lo) & (crit < hi)]])
            peak = float(np.max(P.polyval(cand, self.coefficients)))
            return integrate_exp(lambda t: P.polyval(t, self.coefficients), lo, hi, shift=peak)
        peak = float(np.max(P.polyval(crit, self.coefficients)))
        # walk outward past every critical point until the integrand is negligible
        lo = crit.min() - 1.0
        hi = crit.max() + 1.0
        while P.polyval(lo, self.coefficients) - peak > -80.0:
            lo -= 2.0 * (crit.max() - lo)
        while P.polyval(hi, self.coefficients) - peak > -80.0:
            hi += 2.0 * (hi - crit.min())
        return integrate_exp(lambda t: P.polyval(t, self.coefficients), lo, hi, n_cells=4096, shift=peak)

    def to_dict(self) -> dict:
        return {
            "representation": "polynomial",
            "coefficients": self.coefficients.tolist(),
            "domain": None if self.domain is None else list(self.domain),
            "log_norm_const": self.log_norm_const,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["coefficients"], d.get("domain"), d.get("log_norm_const"), d.get("label", ""))


def polynomial_integrable(coefficients) -> bool:
    c = np.trim_zeros(np.asarray(coefficients, float), "b")
    return c.size >= 3 and (c.size - 1) % 2 == 0 and c[-1] < 0


class GridLogMarginal(LogMarginalModel):
    """Node values of ``l`` on a uniform grid, interpolated by a C2 cubic
    spline (not-a-knot ends). ``l''`` is piecewise linear between nodes, so
    its extremes over the domain are attained at nodes."""

    representation = "grid"

    def __init__(self, grid: EvaluationGrid, values, log_norm_const: float | None = None, label: str = ""):
        v = np.asarray(values, float).reshape(-1)
        if v.size != grid.n_nodes:
            raise InvalidInput("need one value per grid node")
        if not np.all(np.isfinite(v)):
            raise InvalidInput("node values must be finite")
        self.grid = grid
        self.values = v
        self.label = label
        self.domain = (grid.lo, grid.hi)
        self._spline = CubicSpline(grid.nodes, v, bc_type="not-a-knot")
        if log_norm_const is None:
            log_norm_const = integrate_exp(self._spline, grid.lo, grid.hi, n_cells=4 * (grid.n_nodes - 1))
        self.log_norm_const = float(log_norm_const)

    def _raw(self, y, order):
        return self._spline(y, order)

    def to_dict(self) -> dict:
        return {
            "representation": "grid",
            "grid": self.grid.to_dict(),
            "values": self.values.tolist(),
            "log_norm_const": self.log_norm_const,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(EvaluationGrid.from_dict(d["grid"]), d["values"], d.get("log_norm_const"), d.get("label", ""))


def spline_operators(grid: EvaluationGrid, points) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Matrices mapping node values to the spline's ``l, l', l''`` at ``points``."""
    basis = CubicSpline(grid.nodes, np.eye(grid.n_nodes), bc_type="not-a-knot")
    pts = np.asarray(points, float)
    return basis(pts, 0), basis(pts, 1), basis(pts, 2)


class MixtureLogMarginal(LogMarginalModel):
    """``m(y) = sum_j w_j N(y; u_j, noise_sd^2)``; already normalized on the line."""

    representation = "mixture"

    def __init__(self, prior: MixingMeasure, noise_sd: float = 1.0, label: str = ""):
        if not noise_sd > 0:
            raise InvalidInput("noise_sd must be positive")
        self.prior = prior
        self.noise_sd = float(noise_sd)
        self.label = label or prior.label
        self.domain = None
        self.log_norm_const = 0.0

    def _raw(self, y, order):
        ll, mean, var = mixture_stats(self.prior.support, self.prior.weights, y, self.noise_sd)
        s2 = self.noise_sd ** 2
        if order == 0:
            return ll
        if order == 1:
            return (mean - y) / s2
        return (var / s2 - 1.0) / s2

    def posterior_mean(self, y):
        return mixture_stats(self.prior.support, self.prior.weights, y, self.noise_sd)[1]

    def posterior_var(self, y):
        return mixture_stats(self.prior.support, self.prior.weights, y, self.noise_sd)[2]

    def to_dict(self) -> dict:
        return {
            "representation": "mixture",
            "prior": self.prior.to_dict(),
            "noise_sd": self.noise_sd,
            "log_norm_const": self.log_norm_const,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(MixingMeasure.from_dict(d["prior"]), d.get("noise_sd", 1.0), d.get("label", ""))


def eval_log_marginal(model: LogMarginalModel, y, order: int = 0):
    """Evaluate ``l`` (order 0), ``l'`` (1) or ``l''`` (2) at ``y``."""
    return model.evaluate(y, order)


def normalization_error(model: LogMarginalModel, lo: float | None = None, hi: float | None = None) -> float:
    """``|integral exp(l) - 1|`` over the declared domain (or ``[lo, hi]``)."""
    if lo is None or hi is None:
        if model.domain is None:
            raise InvalidInput("model has an unbounded domain; pass lo and hi")
        lo, hi = model.domain
    return abs(math.exp(integrate_exp(model.log_density, lo, hi, n_cells=4096)) - 1.0)
