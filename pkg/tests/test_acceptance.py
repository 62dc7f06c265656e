"""Acceptance suite: eleven end-to-end criteria, each with its tolerance and
runtime budget. Every criterion prints one PASS/FAIL line.

Run under pytest, or directly: ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import poisson

from ebshrink.diagnostics import (
    NOT_REALIZABLE,
    REALIZABLE,
    HeatTestConfig,
    heat_extension_check,
    heat_grid,
    polynomial_realizability,
    posterior_variance_positivity,
)
from ebshrink.fitting import ScoreMatchConfig, bin_observations, fit_lindsey, fit_npmle_em, fit_scorematch
from ebshrink.models import MixtureLogMarginal, PolynomialLogMarginal
from ebshrink.oracle import mixture_log_marginal, oracle_bayes_risk, oracle_posterior_mean, oracle_posterior_var
from ebshrink.priors import EvaluationGrid, ObservationSet, default_grid, make_prior, sample_compound
from ebshrink.rules import (
    WestPrior,
    james_stein,
    james_stein_model,
    posterior_mean_from_mixture,
    robbins_poisson_rule,
    robbins_table,
    sure_estimate,
    tweedie_rule,
    west_precision_moments,
)

# Frozen after the pilot: plug-in MSE / oracle risk was 1.007 at seed 11 and
# 0.90-1.14 across six other seeds.
NPMLE_RISK_BAND = 0.15
NPMLE_SEED = 11


def _pcg(seed):
    return np.random.Generator(np.random.PCG64(seed))


class Outcome:
    def __init__(self, number, title, ok, detail, elapsed, budget):
        self.number, self.title, self.detail = number, title, detail
        self.elapsed, self.budget = elapsed, budget
        self.in_time = elapsed < budget
        self.ok = bool(ok) and self.in_time

    def line(self) -> str:
        tag = "PASS" if self.ok else "FAIL"
        timing = f"{self.elapsed:.2f}s / {self.budget:g}s"
        if not self.in_time:
            timing += " OVER BUDGET"
        return f"[{tag}] criterion {self.number:2d} {self.title}: {self.detail} ({timing})"


def timed(number, title, budget):
    def deco(fn):
        def run():
            t0 = time.perf_counter()
            ok, detail = fn()
            return Outcome(number, title, ok, detail, time.perf_counter() - t0, budget)
        run.number = number
        return run
    return deco


# -- 1 -----------------------------------------------------------------------

IDENTITY_PRIORS = {
    "point": {"kind": "point", "u": 0.5},
    "two-point": {"kind": "two-point", "a": -2, "b": 2, "p": 0.5},
    "gaussian": {"kind": "gaussian", "mean": 0, "sd": 1, "n_atoms": 201},
    "spike-slab": {"kind": "spike-slab", "p0": 0.8, "slab_sd": 3, "n_atoms": 201},
    "irregular": {"kind": "discrete", "support": [-3.1, -0.4, 0.0, 1.7, 4.2],
                  "weights": [0.1, 0.25, 0.3, 0.2, 0.15]},
}


def _direct_log_derivatives(prior, y):
    """l' and l'' from plain sums of m, m', m'' (no log-sum-exp, no posterior)."""
    d = prior.support[None, :] - y[:, None]
    k = prior.weights[None, :] * np.exp(-0.5 * d * d)
    m0 = k.sum(axis=1)
    m1 = (k * d).sum(axis=1)
    m2 = (k * (d * d - 1.0)).sum(axis=1)
    return m1 / m0, m2 / m0 - (m1 / m0) ** 2


@timed(1, "Tweedie identity suite", 1.0)
def criterion_1():
    y = EvaluationGrid(-8, 8, 401).nodes
    worst_mean = worst_var = 0.0
    for desc in IDENTITY_PRIORS.values():
        prior = make_prior(desc)
        model = mixture_log_marginal(prior)
        pm, pv = oracle_posterior_mean(prior, y), oracle_posterior_var(prior, y)
        d1, d2 = _direct_log_derivatives(prior, y)
        for s, c in ((model.score(y), model.score_derivative(y)), (d1, d2)):
            worst_mean = max(worst_mean, float(np.max(np.abs(pm - y - s))))
            worst_var = max(worst_var, float(np.max(np.abs(pv - 1.0 - c))))
    ok = worst_mean <= 1e-8 and worst_var <= 1e-8
    return ok, f"5 priors x 401 nodes, max |mean err| {worst_mean:.2e}, max |var err| {worst_var:.2e} (tol 1e-8)"


# -- 2 -----------------------------------------------------------------------

@timed(2, "James-Stein as quadratic Tweedie", 1.0)
def criterion_2():
    rng = _pcg(2)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(3, 2000))
        y = rng.normal(rng.normal(0, 3), rng.uniform(0.5, 4), n)
        obs = ObservationSet(y)
        diff = np.abs(tweedie_rule(james_stein_model(obs), obs).estimates - james_stein(obs).estimates)
        worst = max(worst, float(diff.max()))
    return worst <= 1e-12, f"20 datasets, max |diff| {worst:.2e} (tol 1e-12)"


# -- 3 -----------------------------------------------------------------------

def _expected_low_degree(c):
    """Independent classification of exp(b0 + b1 y + b2 y^2)."""
    b1 = c[1] if len(c) > 1 else 0.0
    b2 = c[2] if len(c) > 2 else 0.0
    if b2 == 0.0:
        return REALIZABLE, "point-mass", b1
    if b2 > 0 or b2 < -0.5:
        return NOT_REALIZABLE, None, None
    mean = -b1 / (2.0 * b2)
    return REALIZABLE, ("point-mass" if b2 == -0.5 else "gaussian"), mean


@timed(3, "polynomial-degree realizability", 1.0)
def criterion_3():
    rng = _pcg(3)
    high_bad = 0
    for _ in range(1000):
        K = int(rng.integers(3, 9))
        c = rng.normal(0, 1, K + 1)
        c[-1] = rng.choice([-1, 1]) * rng.uniform(1e-3, 2)  # effective degree exactly K
        if polynomial_realizability(c).verdict != NOT_REALIZABLE:
            high_bad += 1
    low_bad = 0
    boundary = 0
    for i in range(1000):
        deg = int(rng.integers(0, 3))
        c = list(rng.normal(0, 1, deg + 1))
        if deg == 2:
            pick = i % 4
            if pick == 0:
                c[2] = -0.5
                boundary += 1
            elif pick == 1:
                c[2] = -rng.uniform(1e-6, 0.5)
            elif pick == 2:
                c[2] = -0.5 - rng.exponential(1.0)
            else:
                c[2] = rng.exponential(1.0)
        rep = polynomial_realizability(c)
        verdict, kind, mean = _expected_low_degree(c)
        good = rep.verdict == verdict
        if good and verdict == REALIZABLE:
            good = rep.details["prior"] == kind and math.isclose(rep.details["prior_mean"], mean, rel_tol=1e-12,
                                                                  abs_tol=1e-12)
        low_bad += not good
    ok = high_bad == 0 and low_bad == 0
    return ok, (f"degree 3-8: {1000 - high_bad}/1000 not-realizable; degree <=2: {1000 - low_bad}/1000 "
                f"classified correctly ({boundary} on the beta_2 = -1/2 boundary)")


# -- 4 -----------------------------------------------------------------------

@timed(4, "heat-test separation", 2.0)
def criterion_4():
    cfg = HeatTestConfig(heat_grid(0.0, 40.0, 4096))
    want = {0.6: NOT_REALIZABLE, 0.8: NOT_REALIZABLE, 1.0: REALIZABLE, 1.5: REALIZABLE, 2.0: REALIZABLE}
    stats, wrong = [], []
    for v, verdict in want.items():
        rep = heat_extension_check(PolynomialLogMarginal([0.0, 0.0, -0.5 / v]), cfg)
        stats.append(rep.test_statistic)
        if rep.verdict != verdict:
            wrong.append(v)
    monotone = all(b <= a for a, b in zip(stats, stats[1:]))
    detail = "B = " + ", ".join(f"{v:g}:{s:.3g}" for v, s in zip(want, stats))
    return not wrong and monotone, f"{detail}; wrong verdicts {wrong}; monotone {monotone}"


# -- 5 -----------------------------------------------------------------------

@timed(5, "NPMLE quality", 30.0)
def criterion_5():
    prior = make_prior({"kind": "two-point", "a": -2, "b": 2, "p": 0.5})
    mu, obs = sample_compound(prior, 2000, NPMLE_SEED)
    fitted, report = fit_npmle_em(obs)
    h = report.history
    monotone = all(b >= a for a, b in zip(h, h[1:]))
    pv = posterior_variance_positivity(MixtureLogMarginal(fitted), EvaluationGrid(-15, 15, 3001))
    mse = float(np.mean((posterior_mean_from_mixture(fitted, obs).estimates - mu) ** 2))
    risk = oracle_bayes_risk(prior)
    ratio = mse / risk
    ok = monotone and pv.verdict == REALIZABLE and abs(ratio - 1.0) <= NPMLE_RISK_BAND
    return ok, (f"{report.iterations} EM steps, loglik monotone {monotone}, min posterior var "
                f"{pv.details['min_variance']:.3g}, MSE {mse:.4f} vs Bayes risk {risk:.4f} (ratio {ratio:.3f}, "
                f"band +-{NPMLE_RISK_BAND:g})")


# -- 6 -----------------------------------------------------------------------

@timed(6, "SURE unbiasedness for James-Stein", 60.0)
def criterion_6():
    n = 500
    mu = _pcg(0).normal(0, 1, n)  # fixed true means
    sures, losses = [], []
    for seed in range(1, 201):
        obs = ObservationSet(mu + _pcg(seed).standard_normal(n), seed=seed)
        losses.append(float(np.mean((james_stein(obs).estimates - mu) ** 2)))
        sures.append(sure_estimate(james_stein_model(obs), obs).value)
    sures, losses = np.array(sures), np.array(losses)
    se = losses.std(ddof=1) / math.sqrt(losses.size)
    gap = abs(sures.mean() - losses.mean())
    return gap < 3 * se, f"mean SURE {sures.mean():.5f}, empirical risk {losses.mean():.5f}, gap {gap:.2e} < 3 SE = {3 * se:.2e}"


# -- 7 -----------------------------------------------------------------------

@timed(7, "score-matching QP", 30.0)
def criterion_7():
    _, obs = sample_compound(make_prior({"kind": "two-point", "a": -3, "b": 3}), 1500, 7)
    grid = default_grid(obs.values, n_nodes=201)
    _, free = fit_scorematch(obs, ScoreMatchConfig(grid, rho=1e-3))
    con_model, con = fit_scorematch(obs, ScoreMatchConfig(grid, rho=1e-3, enforce_convexity=True))
    min_c = float((1.0 + con_model.score_derivative(grid.nodes)).min())
    stiff_model, stiff = fit_scorematch(obs, ScoreMatchConfig(grid, rho=1e6))
    curv = stiff_model.score_derivative(grid.nodes)
    spread = float(curv.max() - curv.min())
    kkt_ok = free.kkt_residual <= 1e-6 and con.kkt_residual <= 1e-6
    ok = kkt_ok and min_c >= -1e-6 and spread < 1e-3 and con.converged and free.converged and stiff.converged
    note = f"; rho=1e6 KKT {stiff.kkt_residual:.1e} (double-precision floor)" if stiff.kkt_residual > 1e-6 else ""
    return ok, (f"KKT free {free.kkt_residual:.1e}, convex {con.kkt_residual:.1e}; min 1+l'' {min_c:.2e}; "
                f"rho=1e6 l'' spread {spread:.1e}{note}")


# -- 8 -----------------------------------------------------------------------

@timed(8, "Lindsey consistency", 10.0)
def criterion_8():
    obs = ObservationSet(math.sqrt(2.0) * _pcg(3).standard_normal(100_000))
    model, report = fit_lindsey(bin_observations(obs, 60), 2)
    b2 = float(model.coefficients[2])
    rep = polynomial_realizability(model.coefficients)
    ok = -0.30 <= b2 <= -0.20 and rep.verdict == REALIZABLE and rep.details.get("prior") == "gaussian"
    return ok, f"beta_2 = {b2:.4f} (truth -0.25), classified {rep.verdict}/{rep.details.get('prior')}"


# -- 9 -----------------------------------------------------------------------

@timed(9, "Robbins rule", 1.0)
def criterion_9():
    worst = 0.0
    for lam0 in (0.3, 1.0, 3.7, 9.0):
        k = np.arange(42)
        table = robbins_table(poisson.pmf(k, lam0))[:-1]
        worst = max(worst, float(np.max(np.abs(table - lam0))))
    rng = _pcg(9)
    nonmono = 0
    for _ in range(200):
        rates = rng.gamma(rng.uniform(0.5, 4), rng.uniform(0.5, 3), int(rng.integers(5, 400)))
        counts = ObservationSet(rng.poisson(rates).astype(float), family="poisson-count")
        table = robbins_poisson_rule(counts, smoothed=True).metadata["table"]
        seq = [table[key] for key in sorted(table)]
        nonmono += any(b < a for a, b in zip(seq, seq[1:]))
    ok = worst <= 1e-12 and nonmono == 0
    return ok, f"exact-pmf max |err| {worst:.1e} (tol 1e-12); isotonic nondecreasing on {200 - nonmono}/200 datasets"


# -- 10 ----------------------------------------------------------------------

@timed(10, "West precision moments", 5.0)
def criterion_10():
    worst = 0.0
    for a, b in ((3.0, 1.0), (5.0, 2.0)):
        prior = WestPrior(a, b)
        for y in (-2.0, -1.0, 0.0, 1.0, 2.0):
            mean, var = west_precision_moments(prior, y)
            # normal-gamma conjugacy: lambda | y ~ Ga((a + 1)/2, rate (b + y^2)/2)
            worst = max(worst, abs(mean - (a + 1) / (b + y * y)), abs(var - 2 * (a + 1) / (b + y * y) ** 2))
    return worst <= 1e-4, f"10 cases, max |err| {worst:.1e} (tol 1e-4)"


# -- 11 ----------------------------------------------------------------------

PIPELINE = [
    ["simulate", "--prior", '{"kind": "two-point", "a": -2, "b": 2, "p": 0.5}', "--n", "500", "--seed", "5",
     "--output", "obs.csv"],
    ["fit", "--input", "obs.csv", "--method", "npmle", "--output", "model.json", "--plot", "fit.svg"],
    ["estimate", "--input", "obs.csv", "--rule", "tweedie", "--model", "model.json", "--output", "est.csv"],
    ["diagnose", "--model", "model.json", "--check", "all", "--output", "diag.json", "--plot", "diag.svg"],
    ["bench", "--rules", "mixture-posterior,james-stein,npmle", "--sizes", "500", "--reps", "2", "--seed", "1",
     "--output", "bench.csv"],
]


def _run_pipeline(workdir: Path) -> list[int]:
    codes = []
    env = dict(os.environ)
    for argv in PIPELINE:
        proc = subprocess.run([sys.executable, "-m", "ebshrink", *argv], cwd=workdir, capture_output=True,
                              text=True, env=env)
        codes.append(proc.returncode)
    return codes


def _without_timing(path: Path) -> str:
    if path.name == "bench.csv":
        rows = list(csv.DictReader(io.StringIO(path.read_text())))
        return json.dumps([{k: v for k, v in r.items() if k != "wall_time"} for r in rows])
    if path.name == "bench.json":
        d = json.loads(path.read_text())
        for r in d["rows"]:
            r.pop("wall_time")
        return json.dumps(d, sort_keys=True)
    return path.read_text()


@timed(11, "CLI end-to-end", 120.0)
def criterion_11():
    with tempfile.TemporaryDirectory() as tmp:
        runs = [Path(tmp) / "a", Path(tmp) / "b"]
        codes = []
        for d in runs:
            d.mkdir()
            codes.append(_run_pipeline(d))
        names = sorted(p.name for p in runs[0].iterdir())
        same = names == sorted(p.name for p in runs[1].iterdir())
        diffs = [n for n in names if _without_timing(runs[0] / n) != _without_timing(runs[1] / n)]
        rows = list(csv.DictReader(io.StringIO((runs[0] / "bench.csv").read_text())))
        cells_ok = len(rows) == 9 and all(r["error"] == "" for r in rows)
        verdicts = [r["verdict"] for r in json.loads((runs[0] / "diag.json").read_text())["reports"]]
    all_zero = all(c == 0 for run in codes for c in run)
    ok = all_zero and same and not diffs and cells_ok
    return ok, (f"exit codes {codes[0]} / {codes[1]}; {len(names)} files, differing {diffs or 'none'} "
                f"(wall_time excluded); bench 3x3 cells ok {cells_ok}; diagnose verdicts {verdicts}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{c.number:02d}" for c in CRITERIA])
def test_acceptance(criterion, capsys):
    outcome = criterion()
    with capsys.disabled():
        print("\n" + outcome.line())
    assert outcome.ok, outcome.line()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    for r in results:
        print(r.line())
    passed = sum(r.ok for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    sys.exit(0 if passed == len(results) else 1)
