"""Estimators of the marginal density on the observation scale.

* :func:`fit_kde` -- Gaussian kernel density (an equal-weight mixture)
* :func:`fit_lindsey` -- exp(polynomial) by Poisson regression on bin counts
* :func:`fit_npmle_em` -- Kiefer-Wolfowitz NPMLE of the prior on a fixed grid
* :func:`fit_scorematch` -- penalized score-matching QP over spline node values
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.linalg import solve_triangular
from scipy.special import gammaln, logsumexp

from .errors import DegenerateRange, DomainError, InsufficientData, InvalidBandwidth, InvalidInput, NumericalFailure
from .models import (
    GridLogMarginal,
    MixtureLogMarginal,
    PolynomialLogMarginal,
    polynomial_integrable,
    spline_operators,
)
from .priors import EvaluationGrid, MixingMeasure, ObservationSet, default_grid
from .qp import QPResult, solve_qp

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FitReport:
    iterations: int
    final_objective: float
    converged: bool
    constraint_violation: float = 0.0
    history: tuple = ()
    notes: str = ""
    kkt_residual: float | None = None

    def to_dict(self) -> dict:
        d = {
            "iterations": self.iterations,
            "final_objective": self.final_objective,
            "converged": self.converged,
            "constraint_violation": self.constraint_violation,
            "notes": self.notes,
        }
        if self.kkt_residual is not None:
            d["kkt_residual"] = self.kkt_residual
        return d


# -- binning -----------------------------------------------------------------

@dataclass(frozen=True)
class HistogramBinning:
    bin_edges: np.ndarray
    counts: np.ndarray
    n_total: int

    def __post_init__(self):
        e = np.asarray(self.bin_edges, float)
        c = np.asarray(self.counts)
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
            raise InvalidInput("bin edges must be strictly increasing")
        if c.shape != (e.size - 1,) or np.any(c < 0) or np.any(c != np.round(c)):
            raise InvalidInput("need one nonnegative integer count per bin")
        if int(c.sum()) != self.n_total:
            raise InvalidInput("counts must sum to n_total")
        object.__setattr__(self, "bin_edges", e)
        object.__setattr__(self, "counts", c.astype(np.int64))

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("edge_lo,edge_hi,count\n")
            for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
                fh.write(f"{float(lo)!r},{float(hi)!r},{int(c)}\n")

    @classmethod
    def read_csv(cls, path) -> "HistogramBinning":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise InvalidInput(f"{path}: no bins")
        lo = [float(r["edge_lo"]) for r in rows]
        hi = [float(r["edge_hi"]) for r in rows]
        if any(a != b for a, b in zip(hi[:-1], lo[1:])):
            raise InvalidInput("bins must be contiguous")
        counts = np.array([int(r["count"]) for r in rows])
        return cls(np.array(lo + [hi[-1]]), counts, int(counts.sum()))


def bin_observations(obs: ObservationSet, n_bins: int = 60) -> HistogramBinning:
    """Equal-width bins over ``[min - 5% range, max + 5% range]``."""
    if int(n_bins) != n_bins or n_bins < 3:
        raise InvalidInput("n_bins must be an integer >= 3")
    y = obs.values
    lo, hi = float(y.min()), float(y.max())
    rng = hi - lo
    if rng == 0:
        raise DegenerateRange("all observations are identical; binning collapses")
    edges = np.linspace(lo - 0.05 * rng, hi + 0.05 * rng, int(n_bins) + 1)
    idx = np.clip(np.searchsorted(edges, y, side="right") - 1, 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return HistogramBinning(edges, counts, int(y.size))


# -- Lindsey's method --------------------------------------------------------

@dataclass
class _LindseyIRLS:
    center: float
    scale: float
    Q: np.ndarray
    R: np.ndarray
    gamma: np.ndarray
    offset: np.ndarray
    iterations: int
    converged: bool
    deviance_trace: list

    def scaled_coefficients(self) -> np.ndarray:
        return solve_triangular(self.R, self.gamma, lower=False)

    def raw_coefficients(self) -> np.ndarray:
        scaled = Polynomial(self.scaled_coefficients())
        return scaled(Polynomial([-self.center / self.scale, 1.0 / self.scale])).coef

    def log_density_unnormalized(self, y) -> np.ndarray:
        """Evaluate through the scaled basis (no monomial round trip)."""
        x = (np.asarray(y, float) - self.center) / self.scale
        return np.polynomial.polynomial.polyval(x, self.scaled_coefficients())


def _poisson_nll(counts: np.ndarray, eta: np.ndarray) -> float:
    return math.fsum(np.exp(eta) - counts * eta + gammaln(counts + 1.0))


def _lindsey_irls(binning: HistogramBinning, K: int, max_iter: int = 100, tol: float = 1e-12) -> _LindseyIRLS:
    c = binning.centers
    y = binning.counts.astype(float)
    offset = np.log(binning.n_total * binning.widths)
    center = float(c.mean())
    scale = float(np.max(np.abs(c - center)))
    V = np.vander((c - center) / scale, K + 1, increasing=True)
    Q, R = np.linalg.qr(V)
    # start from the log of smoothed counts
    gamma = Q.T @ (np.log(y + 0.5) - offset)
    eta = offset + Q @ gamma
    nll = _poisson_nll(y, eta)
    trace = [nll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = np.exp(eta)
        z = (eta - offset) + (y - mu) / mu
        QW = Q * mu[:, None]
        proposal = np.linalg.solve(Q.T @ QW, QW.T @ z)
        step = 1.0
        while True:
            cand = gamma + step * (proposal - gamma)
            eta_c = offset + Q @ cand
            nll_c = _poisson_nll(y, eta_c) if np.all(np.isfinite(eta_c)) and eta_c.max() < 700 else math.inf
            if nll_c <= nll or step < 1e-10:
                break
            step *= 0.5
        if not nll_c <= nll:
            break
        gain = nll - nll_c
        gamma, eta, nll = cand, eta_c, nll_c
        trace.append(nll)
        if gain <= tol * (abs(nll) + 1.0):
            converged = True
            break
    return _LindseyIRLS(center, scale, Q, R, gamma, offset, it, converged, trace)


def fit_lindsey(binning: HistogramBinning, K: int = 5, max_iter: int = 100) -> tuple[PolynomialLogMarginal, FitReport]:
    """Fit ``log m(y) = sum_{k<=K} beta_k y^k`` to histogram counts.

    Counts are Poisson with mean ``n * width * exp(poly(center))``. The
    regression runs on an orthonormalized, centered/scaled polynomial basis
    with step-halving IRLS; coefficients are mapped back to raw monomials.
    When ``exp(poly)`` is not integrable on the line the model is restricted
    to the bin range.
    """
    if int(K) != K or not 1 <= K <= 10:
        raise InvalidInput("K must be an integer in [1, 10]")
    if np.count_nonzero(binning.counts) < K + 2:
        raise InsufficientData(f"need at least {K + 2} nonempty bins for degree {K}")
    fit = _lindsey_irls(binning, int(K), max_iter=max_iter)
    beta = fit.raw_coefficients()
    notes = []
    domain = None
    if not polynomial_integrable(beta):
        domain = (float(binning.bin_edges[0]), float(binning.bin_edges[-1]))
        notes.append("non-integrable on the real line; evaluation restricted to the bin range")
    if not fit.converged:
        notes.append(f"IRLS did not converge in {max_iter} iterations")
    model = PolynomialLogMarginal(beta, domain=domain, label=f"lindsey-K{K}")
    report = FitReport(
        iterations=fit.iterations,
        final_objective=fit.deviance_trace[-1],
        converged=fit.converged,
        constraint_violation=0.0,
        history=tuple(fit.deviance_trace),
        notes="; ".join(notes),
    )
    return model, report


# -- kernel density ----------------------------------------------------------

def silverman_bandwidth(values) -> float:
    v = np.asarray(values, float)
    return 1.06 * float(np.std(v, ddof=1)) * v.size ** (-0.2)


def fit_kde(obs: ObservationSet, bandwidth: float | None = None) -> MixtureLogMarginal:
    """Gaussian KDE ``m(y) = (1/n) sum_i phi_b(y - y_i)``.

    Held as an equal-weight mixture with kernel sd ``b`` so that ``l'`` and
    ``l''`` are analytic. Without an explicit bandwidth Silverman's rule is
    used; for constant data (zero spread) it falls back to ``obs.noise_sd``.
    """
    if bandwidth is not None:
        if not bandwidth > 0:
            raise InvalidBandwidth("bandwidth must be positive")
        b = float(bandwidth)
    else:
        if obs.n < 2:
            raise InsufficientData("Silverman's rule needs at least two observations")
        b = silverman_bandwidth(obs.values)
        if b == 0:
            b = obs.noise_sd
    prior = MixingMeasure.from_atoms(obs.values, np.full(obs.n, 1.0 / obs.n), label="kde")
    return MixtureLogMarginal(prior, b, label=f"kde(b={b!r})")


# -- NPMLE via EM ------------------------------------------------------------

def npmle_support_grid(obs: ObservationSet, n_atoms: int = 300) -> EvaluationGrid:
    lo, hi = float(obs.values.min()), float(obs.values.max())
    if lo == hi:
        lo, hi = lo - obs.noise_sd, hi + obs.noise_sd
    return EvaluationGrid(lo, hi, n_atoms)


def fit_npmle_em(
    obs: ObservationSet,
    support_grid: EvaluationGrid | None = None,
    tol: float = 1e-5,
    max_iter: int = 20_000,
    prune: float = 1e-10,
) -> tuple[MixingMeasure, FitReport]:
    """Kiefer-Wolfowitz NPMLE of the mixing law restricted to a fixed grid.

    EM on the weights from the uniform start. The per-iteration total
    log-likelihood is kept in ``report.history`` and is nondecreasing
    exactly: an update whose computed likelihood falls below the previous
    one (floating-point noise at the optimum) is rejected and iteration
    stops. Atoms lighter than ``prune`` are dropped at the end.
    """
    if not tol > 0:
        raise InvalidInput("tol must be positive")
    grid = support_grid or npmle_support_grid(obs)
    y = obs.values
    s = obs.noise_sd
    u = grid.nodes
    logk = -0.5 * ((y[:, None] - u[None, :]) / s) ** 2
    shift = logk.max(axis=1)
    K = np.exp(logk - shift[:, None])
    const = math.fsum(shift) - y.size * (_LOG_SQRT_2PI + math.log(s))
    n = y.size

    def loglik(w):
        mix = K @ w
        with np.errstate(divide="ignore"):
            return math.fsum(np.log(mix)) + const, mix

    w = np.full(u.size, 1.0 / u.size)
    ll, mix = loglik(w)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w_new = w * (K.T @ (1.0 / mix)) / n
        w_new /= math.fsum(w_new)
        ll_new, mix_new = loglik(w_new)
        if not ll_new >= ll:
            converged = True
            break
        gain = ll_new - ll
        w, ll, mix = w_new, ll_new, mix_new
        trace.append(ll)
        if gain < tol:
            converged = True
            break
    keep = w >= prune
    wk = w[keep]
    prior = MixingMeasure(u[keep], wk / math.fsum(wk), label="npmle")
    report = FitReport(
        iterations=it,
        final_objective=-ll,
        converged=converged,
        constraint_violation=abs(math.fsum(w) - 1.0),
        history=tuple(trace),
        notes=f"{int(keep.sum())} of {u.size} atoms kept",
    )
    return prior, report


# -- penalized score matching ------------------------------------------------

@dataclass(frozen=True)
class ScoreMatchConfig:
    grid: EvaluationGrid
    rho: float = 1e-2
    enforce_convexity: bool = False
    kkt_tol: float = 1e-6
    max_iter: int = 5000

    def __post_init__(self):
        if not self.rho >= 0:
            raise InvalidInput("rho must be nonnegative")
        if not self.kkt_tol > 0:
            raise InvalidInput("kkt_tol must be positive")


@dataclass
class ScoreMatchQP:
    """The score-matching objective as a QP in the interior node values.

    ``l = E x + c``: ``x`` are the free nodes and ``c`` carries the two pinned
    endpoint values. ``d1``/``d2`` map node values to ``l'``/``l''`` at the
    data; ``curv`` maps them to ``l''`` at the nodes.
    """

    grid: EvaluationGrid
    rho: float
    d1: np.ndarray
    d2: np.ndarray
    curv: np.ndarray
    quad_w: np.ndarray
    pins: tuple[float, float]
    H: np.ndarray = field(repr=False, default=None)
    g: np.ndarray = field(repr=False, default=None)
    A: np.ndarray = field(repr=False, default=None)
    b: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.d1.shape[0]

    def full(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate([[self.pins[0]], x, [self.pins[1]]])

    def objective(self, values: np.ndarray) -> float:
        """``(1/n) sum [l'(y_i)^2 + 2 l''(y_i)] + rho * trapezoid(l''^2)``."""
        s = self.d1 @ values
        ds = self.d2 @ values
        curv = self.curv @ values
        return float(np.mean(s * s + 2.0 * ds) + self.rho * np.sum(self.quad_w * curv * curv))

    def gradient(self, values: np.ndarray) -> np.ndarray:
        s = self.d1 @ values
        curv = self.curv @ values
        return (2.0 / self.n) * (self.d1.T @ s + self.d2.sum(axis=0)) + 2.0 * self.rho * self.curv.T @ (self.quad_w * curv)


def build_scorematch_qp(obs: ObservationSet, config: ScoreMatchConfig, pins: tuple[float, float] | None = None) -> ScoreMatchQP:
    grid = config.grid
    y = obs.values
    if not grid.contains(y):
        raise DomainError(f"observations must lie inside the grid [{grid.lo}, {grid.hi}]")
    if float(y.min()) == float(y.max()):
        raise DegenerateRange("all observations are identical; the score-matching grid collapses")
    if pins is None:
        kde = fit_kde(obs)
        pins = (kde.log_density(grid.lo), kde.log_density(grid.hi))
    _, d1, d2 = spline_operators(grid, y)
    _, _, curv = spline_operators(grid, grid.nodes)
    N = grid.n_nodes
    qw = np.full(N, grid.spacing)
    qw[0] = qw[-1] = 0.5 * grid.spacing
    prob = ScoreMatchQP(grid, float(config.rho), d1, d2, curv, qw, (float(pins[0]), float(pins[1])))

    n = y.size
    H_full = (2.0 / n) * d1.T @ d1 + 2.0 * config.rho * curv.T @ (qw[:, None] * curv)
    g_full = (2.0 / n) * d2.sum(axis=0)
    c = np.zeros(N)
    c[0], c[-1] = pins
    free = slice(1, N - 1)
    prob.H = H_full[free, free]
    prob.g = g_full[free] + H_full[free, :] @ c
    # 1 + l''(node) >= 0  ->  curv[:, free] x >= -1 - curv @ c
    prob.A = curv[:, free]
    prob.b = -1.0 - curv @ c
    return prob


def fit_scorematch(
    obs: ObservationSet,
    config: ScoreMatchConfig | None = None,
    pins: tuple[float, float] | None = None,
) -> tuple[GridLogMarginal, FitReport]:
    """Penalized score matching for ``l = log m`` on a uniform grid.

    Minimizes ``(1/n) sum [s(y_i)^2 + 2 s'(y_i)] + rho * int (l'')^2`` over
    node values, where ``s`` and ``s'`` come from the same C2 cubic spline
    used to evaluate the returned model (linear maps of node values). The
    objective sees ``l`` only through derivatives, so ``l`` is pinned at both
    grid ends to the Silverman KDE's log-density. With
    ``enforce_convexity`` the linear constraints ``1 + l''(node) >= 0`` are
    imposed; since ``l''`` is piecewise linear this makes
    ``c(y) = y^2/2 + l(y)`` convex on the whole grid.
    """
    config = config or ScoreMatchConfig(default_grid(obs.values, obs.noise_sd))
    prob = build_scorematch_qp(obs, config, pins)
    N = config.grid.n_nodes
    # straight line between the pins: l'' = 0, strictly feasible
    x0 = np.linspace(prob.pins[0], prob.pins[1], N)[1:-1]
    notes = f"pinned l at grid ends to KDE values {prob.pins[0]:.6g}, {prob.pins[1]:.6g}"
    try:
        res: QPResult = solve_qp(
            prob.H,
            prob.g,
            prob.A if config.enforce_convexity else None,
            prob.b if config.enforce_convexity else None,
            x0=x0,
            tol=config.kkt_tol,
            max_iter=config.max_iter,
        )
    except NumericalFailure as exc:  # singular Hessian (rho = 0 with sparse data)
        if config.rho == 0:
            notes += f"; solver failed: {exc}"
            model = GridLogMarginal(config.grid, prob.full(x0), label="scorematch")
            return model, FitReport(0, math.nan, False, math.inf, (), notes)
        raise
    values = prob.full(res.x)
    model = GridLogMarginal(config.grid, values, label="scorematch")
    if not res.converged:
        notes += f"; solver stopped with KKT residual {res.kkt_residual:.3g}"
    elif res.kkt_residual > config.kkt_tol:
        notes += f"; KKT residual {res.kkt_residual:.3g} is at the double-precision floor {res.residual_floor:.3g}"
    report = FitReport(
        iterations=res.iterations,
        final_objective=prob.objective(values),
        converged=res.converged,
        constraint_violation=res.primal_violation,
        history=(),
        notes=notes,
        kkt_residual=res.kkt_residual,
    )
    return model, report


def select_rho(
    obs: ObservationSet,
    grid: EvaluationGrid | None = None,
    rhos: Sequence[float] = tuple(np.logspace(-4, 1, 6)),
    enforce_convexity: bool = False,
) -> tuple[float, list[tuple[float, float]]]:
    """Pick the penalty minimizing SURE of the fitted Tweedie rule."""
    from .rules import sure_estimate

    grid = grid or default_grid(obs.values, obs.noise_sd)
    table = []
    for rho in rhos:
        model, _ = fit_scorematch(obs, ScoreMatchConfig(grid, float(rho), enforce_convexity))
        table.append((float(rho), sure_estimate(model, obs).value))
    best = min(table, key=lambda t: t[1])[0]
    return best, table
