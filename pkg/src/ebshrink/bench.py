"""Factorial benchmark of shrinkage rules against the oracle Bayes rule."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .fitting import ScoreMatchConfig, bin_observations, fit_kde, fit_lindsey, fit_npmle_em, fit_scorematch
from .oracle import mixture_log_marginal, oracle_posterior_mean
from .priors import ObservationSet, default_grid, make_prior, sample_compound
from .rules import james_stein, james_stein_model, posterior_mean_from_mixture, sure_estimate, tweedie_rule

BENCH_RULES = ("mixture-posterior", "james-stein", "npmle", "kde", "lindsey", "scorematch")

COLUMNS = ("rule", "prior", "n", "reps", "mse", "mse_se", "oracle_mse", "regret", "sure", "wall_time", "error")


def cell_seed(base_seed: int, prior: dict, rule: str, n: int, rep: int) -> int:
    """Seed for one replicate, independent of execution order."""
    key = json.dumps([base_seed, prior, rule, n, rep], sort_keys=True, separators=(",", ":"))
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little")


@dataclass
class BenchRow:
    rule: str
    prior: str
    n: int
    reps: int
    mse: float
    mse_se: float  # standard error of mse across replicates (nan for one rep)
    oracle_mse: float
    regret: float
    sure: float
    wall_time: float
    error: str = ""


def _apply_rule(rule: str, obs: ObservationSet, prior_true):
    """Return (estimates, sure-or-nan)."""
    if rule == "mixture-posterior":  # with the true prior
        est = posterior_mean_from_mixture(prior_true, obs).estimates
        return est, sure_estimate(mixture_log_marginal(prior_true, obs.noise_sd), obs).value
    if rule == "james-stein":
        return james_stein(obs).estimates, sure_estimate(james_stein_model(obs), obs).value
    if rule == "npmle":
        fitted, _ = fit_npmle_em(obs)
        model = mixture_log_marginal(fitted, obs.noise_sd)
        return posterior_mean_from_mixture(fitted, obs).estimates, sure_estimate(model, obs).value
    if rule == "kde":
        model = fit_kde(obs)
    elif rule == "lindsey":
        model, _ = fit_lindsey(bin_observations(obs, 60), 5)
    elif rule == "scorematch":
        model, _ = fit_scorematch(obs, ScoreMatchConfig(default_grid(obs.values, obs.noise_sd, n_nodes=201)))
    else:
        raise ValueError(f"unknown bench rule {rule!r}; choose from {BENCH_RULES}")
    return tweedie_rule(model, obs).estimates, sure_estimate(model, obs).value


def run_cell(prior_desc: dict, rule: str, n: int, reps: int, base_seed: int, noise_sd: float = 1.0) -> BenchRow:
    prior = make_prior(prior_desc)
    label = prior_desc.get("label") or json.dumps(prior_desc, sort_keys=True, separators=(",", ":"))
    t0 = time.perf_counter()
    mses, oracle_mses, sures = [], [], []
    try:
        for rep in range(reps):
            mu, obs = sample_compound(prior, n, cell_seed(base_seed, prior_desc, rule, n, rep), noise_sd=noise_sd)
            est, sure = _apply_rule(rule, obs, prior)
            oracle = oracle_posterior_mean(prior, obs.values, noise_sd)
            mses.append(math.fsum((est - mu) ** 2) / n)
            oracle_mses.append(math.fsum((oracle - mu) ** 2) / n)
            sures.append(sure)
    except Exception as exc:  # recorded in the table; the sweep carries on
        return BenchRow(rule, label, n, reps, math.nan, math.nan, math.nan, math.nan, math.nan,
                        time.perf_counter() - t0, f"{type(exc).__name__}: {exc}")
    mse = math.fsum(mses) / reps
    oracle_mse = math.fsum(oracle_mses) / reps
    sure = math.fsum(sures) / reps
    se = float(np.std(mses, ddof=1) / math.sqrt(reps)) if reps > 1 else math.nan
    return BenchRow(rule, label, n, reps, mse, se, oracle_mse, mse - oracle_mse, sure, time.perf_counter() - t0)


def run_bench(priors: Sequence[dict], rules: Sequence[str], sizes: Sequence[int], reps: int,
              base_seed: int, noise_sd: float = 1.0) -> list[BenchRow]:
    rows = []
    for prior_desc in priors:
        for rule in rules:
            for n in sizes:
                rows.append(run_cell(dict(prior_desc), rule, int(n), int(reps), base_seed, noise_sd))
    return rows


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_bench_csv(rows: Sequence[BenchRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(COLUMNS) + "\n")
        for r in rows:
            d = asdict(r)
            fh.write(",".join(_csv_escape(_cell(d[c])) for c in COLUMNS) + "\n")


def _csv_escape(s: str) -> str:
    if any(ch in s for ch in ',"\n'):
        return '"' + s.replace('"', '""') + '"'
    return s


def rows_to_json(rows: Sequence[BenchRow]) -> list[dict]:
    out = []
    for r in rows:
        d = asdict(r)
        out.append({k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in d.items()})
    return out
