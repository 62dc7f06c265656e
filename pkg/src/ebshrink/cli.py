"""Command-line entry point: ``ebshrink {simulate,fit,estimate,diagnose,bench}``.

Exit codes: 0 success, 2 invalid input or configuration, 4 a not-realizable
verdict under ``--strict``, 5 a non-converged fit under ``--strict``.
Option values resolve as command-line flag, then ``--config`` JSON, then
built-in default; the resolved values are written into every JSON output.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .bench import BENCH_RULES, rows_to_json, run_bench, write_bench_csv
from .diagnostics import (
    INCONCLUSIVE,
    NOT_REALIZABLE,
    REALIZABLE,
    DiagnosticReport,
    convexity_check,
    default_heat_config,
    heat_extension_check,
    polynomial_realizability,
    posterior_variance_positivity,
)
from .errors import NumericalFailure, ShrinkageError
from .fitting import (
    FitReport,
    ScoreMatchConfig,
    bin_observations,
    fit_kde,
    fit_lindsey,
    fit_npmle_em,
    fit_scorematch,
    npmle_support_grid,
)
from .models import GridLogMarginal, LogMarginalModel, MixtureLogMarginal, PolynomialLogMarginal
from .plotting import svg_document
from .priors import EvaluationGrid, default_grid, make_prior, read_observations, sample_compound, write_observations
from .rules import (
    james_stein,
    james_stein_model,
    posterior_mean_from_mixture,
    robbins_poisson_rule,
    sure_estimate,
    tweedie_rule,
)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIAGNOSTIC = 4
EXIT_NONCONVERGED = 5

FIT_METHODS = ("kde", "lindsey", "npmle", "scorematch")
ESTIMATE_RULES = ("tweedie", "james-stein", "mixture-posterior", "robbins")
CHECKS = ("convexity", "polylog", "posvar", "heat", "all")

DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {"prior": None, "n": 1000, "family": "gaussian-location", "noise_sd": 1.0, "seed": 0},
    "fit": {
        "method": "npmle", "bandwidth": None, "K": 5, "n_bins": 60, "n_atoms": 300, "tol": 1e-5,
        "max_iter": None, "rho": 1e-2, "convexity": False, "kkt_tol": 1e-6, "grid_nodes": 401,
        "grid_lo": None, "grid_hi": None, "plot": None, "seed": None,
    },
    "estimate": {"rule": "tweedie", "model": None, "smoothed": False, "seed": None},
    "diagnose": {
        "check": "all", "model": None, "grid_lo": None, "grid_hi": None, "grid_nodes": 401,
        "heat_nodes": 4096, "spectral_floor": 1e-10, "boundedness_ratio": 10.0, "plot": None, "seed": None,
    },
    "bench": {
        "priors": [
            {"kind": "two-point", "a": -2.0, "b": 2.0, "p": 0.5, "label": "two-point"},
            {"kind": "gaussian", "mean": 0.0, "sd": 1.0, "n_atoms": 201, "label": "gaussian"},
            {"kind": "spike-slab", "p0": 0.8, "slab_sd": 3.0, "n_atoms": 201, "label": "spike-slab"},
        ],
        "rules": ["mixture-posterior", "james-stein", "npmle"],
        "sizes": [500],
        "reps": 5,
        "noise_sd": 1.0,
        "seed": 0,
    },
}


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_INVALID):
        super().__init__(msg)
        self.code = code


# -- helpers -------------------------------------------------------------------

def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, Path):
        return str(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def dump_json(obj, path) -> None:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from None


def load_json(path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def save_model(model: LogMarginalModel, path, extra: dict | None = None) -> None:
    """Model JSON: the model's own fields plus provenance keys."""
    d = dict(extra or {})
    d.update(model.to_dict())
    dump_json(d, path)


def load_model(path) -> tuple[LogMarginalModel, dict]:
    d = load_json(path)
    if not isinstance(d, dict) or "representation" not in d:
        raise CliError(f"{path}: model file has no 'representation' field")
    try:
        model = LogMarginalModel.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise CliError(f"{path}: malformed model file ({exc})") from None
    extra = {k: v for k, v in d.items() if k not in model.to_dict()}
    return model, extra


def sibling(path, suffix: str) -> Path:
    """``out/model.json`` -> ``out/model<suffix>``."""
    p = Path(path)
    return p.with_name(p.stem + suffix)


def resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS[command])
    if args.config:
        file_cfg = load_json(args.config)
        if not isinstance(file_cfg, dict):
            raise CliError(f"{args.config}: config must be a JSON object")
        unknown = set(file_cfg) - set(cfg) - {"input", "output", "strict"}
        if unknown:
            raise CliError(f"{args.config}: unknown config keys {sorted(unknown)}")
        cfg.update({k.replace("-", "_"): v for k, v in file_cfg.items()})
    for key, val in vars(args).items():
        if key in ("command", "config", "func") or val is None:
            continue
        cfg[key] = val
    cfg.setdefault("strict", False)
    cfg["strict"] = bool(cfg.get("strict"))
    return cfg


def _need(cfg: dict, key: str) -> Any:
    if cfg.get(key) is None:
        raise CliError(f"--{key.replace('_', '-')} is required")
    return cfg[key]


def _parse_json_arg(value, what: str):
    if isinstance(value, str):
        try:
            return json.loads(value)
        except json.JSONDecodeError as exc:
            raise CliError(f"{what}: invalid JSON ({exc.msg})") from None
    return value


def _write_svg(path, panels) -> None:
    try:
        Path(path).write_text(svg_document(panels), encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}") from None


def _plot_grid(model: LogMarginalModel, values: np.ndarray, sd: float, n: int = 241) -> np.ndarray:
    g = default_grid(values, sd, n_nodes=n)
    lo, hi = g.lo, g.hi
    if model.domain is not None:
        lo, hi = max(lo, model.domain[0]), min(hi, model.domain[1])
    return np.linspace(lo, hi, n)


# -- commands ------------------------------------------------------------------

def cmd_simulate(cfg: dict) -> int:
    out = _need(cfg, "output")
    desc = _parse_json_arg(_need(cfg, "prior"), "--prior")
    if not isinstance(desc, dict):
        raise CliError("--prior must be a JSON object descriptor")
    cfg["prior"] = desc
    prior = make_prior(desc)
    mu, obs = sample_compound(prior, int(cfg["n"]), int(cfg["seed"]), cfg["family"], float(cfg["noise_sd"]))
    try:
        write_observations(obs, out, {"prior": desc, "true_means": [float(v) for v in mu], "config": _jsonable(cfg)})
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}") from None
    return EXIT_OK


def _fit_grid(cfg: dict, obs) -> EvaluationGrid:
    g = default_grid(obs.values, obs.noise_sd, n_nodes=int(cfg["grid_nodes"]))
    lo = g.lo if cfg["grid_lo"] is None else float(cfg["grid_lo"])
    hi = g.hi if cfg["grid_hi"] is None else float(cfg["grid_hi"])
    return EvaluationGrid(lo, hi, int(cfg["grid_nodes"]))


def cmd_fit(cfg: dict) -> int:
    obs = read_observations(_need(cfg, "input"))
    out = _need(cfg, "output")
    method = cfg["method"]
    if method not in FIT_METHODS:
        raise CliError(f"unknown method {method!r}; choose from {FIT_METHODS}")
    if method == "kde":
        model = fit_kde(obs, cfg["bandwidth"])
        report = FitReport(0, math.nan, True, notes="closed form, no iterations")
    elif method == "lindsey":
        kw = {} if cfg["max_iter"] is None else {"max_iter": int(cfg["max_iter"])}
        model, report = fit_lindsey(bin_observations(obs, int(cfg["n_bins"])), int(cfg["K"]), **kw)
    elif method == "npmle":
        kw = {} if cfg["max_iter"] is None else {"max_iter": int(cfg["max_iter"])}
        support = npmle_support_grid(obs, int(cfg["n_atoms"]))
        prior, report = fit_npmle_em(obs, support, tol=float(cfg["tol"]), **kw)
        model = MixtureLogMarginal(prior, obs.noise_sd, label="npmle")
    else:
        kw = {} if cfg["max_iter"] is None else {"max_iter": int(cfg["max_iter"])}
        conf = ScoreMatchConfig(_fit_grid(cfg, obs), float(cfg["rho"]), bool(cfg["convexity"]),
                                float(cfg["kkt_tol"]), **kw)
        model, report = fit_scorematch(obs, conf)
    provenance = {"config": cfg, "method": method, "n": obs.n}
    save_model(model, out, provenance)
    dump_json({"method": method, "model_file": str(out), "fit_report": report.to_dict(),
               "converged": report.converged, "config": cfg}, sibling(out, ".report.json"))
    if cfg["plot"]:
        ys = _plot_grid(model, obs.values, obs.noise_sd)
        delta = ys + obs.noise_sd ** 2 * model.score(ys)
        _write_svg(cfg["plot"], [(ys, {"m(y)": model.density(ys)}, f"fitted marginal ({method})"),
                                 (ys, {"delta(y)": delta, "y": ys}, "Tweedie rule")])
    if not report.converged:
        print(f"warning: {method} fit did not converge ({report.notes})", file=sys.stderr)
        if cfg["strict"]:
            return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_estimate(cfg: dict) -> int:
    obs = read_observations(_need(cfg, "input"))
    out = _need(cfg, "output")
    rule = cfg["rule"]
    if rule not in ESTIMATE_RULES:
        raise CliError(f"unknown rule {rule!r}; choose from {ESTIMATE_RULES}")
    model = None
    if rule in ("tweedie", "mixture-posterior"):
        if cfg["model"] is None:
            raise CliError(f"rule {rule!r} needs --model")
        model, _ = load_model(cfg["model"])
    sure = None
    if rule == "tweedie":
        est = tweedie_rule(model, obs)
        sure = sure_estimate(model, obs)
    elif rule == "mixture-posterior":
        if not isinstance(model, MixtureLogMarginal):
            raise CliError(f"rule 'mixture-posterior' needs a mixture model, got {model.representation!r}")
        if model.noise_sd != obs.noise_sd:
            raise CliError(f"model noise_sd {model.noise_sd} differs from the data's {obs.noise_sd}")
        est = posterior_mean_from_mixture(model.prior, obs)
        sure = sure_estimate(model, obs)
    elif rule == "james-stein":
        est = james_stein(obs)
        sure = sure_estimate(james_stein_model(obs), obs)
    else:
        est = robbins_poisson_rule(obs, bool(cfg["smoothed"]))
    try:
        est.write_csv(out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}") from None
    summary = {
        "rule": est.rule_name,
        "n": obs.n,
        "model_provenance": est.model_provenance,
        "sure": None if sure is None else sure.to_dict(),
        "metadata": est.metadata,
        "config": cfg,
    }
    dump_json(summary, sibling(out, ".summary.json"))
    return EXIT_OK


def _diagnose_grid(cfg: dict, model: LogMarginalModel) -> EvaluationGrid:
    n = int(cfg["grid_nodes"])
    lo, hi = cfg["grid_lo"], cfg["grid_hi"]
    if lo is None or hi is None:
        if cfg.get("input"):
            obs = read_observations(cfg["input"])
            g = default_grid(obs.values, obs.noise_sd, n_nodes=n)
            dlo, dhi = g.lo, g.hi
        elif model.domain is not None:
            dlo, dhi = model.domain
        elif isinstance(model, MixtureLogMarginal):
            u = model.prior.support
            dlo, dhi = u.min() - 4 * model.noise_sd, u.max() + 4 * model.noise_sd
        elif isinstance(model, GridLogMarginal):
            dlo, dhi = model.grid.lo, model.grid.hi
        else:
            g = default_heat_config(model, n_nodes=256).grid
            dlo, dhi = g.lo, g.hi
        lo = dlo if lo is None else lo
        hi = dhi if hi is None else hi
    if model.domain is not None:
        lo, hi = max(float(lo), model.domain[0]), min(float(hi), model.domain[1])
    return EvaluationGrid(float(lo), float(hi), n)


def _polylog(model: LogMarginalModel, alone: bool) -> DiagnosticReport:
    if isinstance(model, PolynomialLogMarginal):
        return polynomial_realizability(model.coefficients)
    if alone:
        raise CliError(f"check 'polylog' needs a polynomial model, got {model.representation!r}")
    if isinstance(model, MixtureLogMarginal):
        return DiagnosticReport(REALIZABLE, notes="mixture model: a Gaussian convolution by construction",
                                check="polynomial")
    return DiagnosticReport(INCONCLUSIVE, notes=f"not applicable to a {model.representation} model",
                            check="polynomial")


def cmd_diagnose(cfg: dict) -> int:
    model, _ = load_model(_need(cfg, "model"))
    out = _need(cfg, "output")
    check = cfg["check"]
    if check not in CHECKS:
        raise CliError(f"unknown check {check!r}; choose from {CHECKS}")
    wanted = ("convexity", "polylog", "posvar", "heat") if check == "all" else (check,)
    reports = []
    grid = None
    for name in wanted:
        if name in ("convexity", "posvar") and grid is None:
            grid = _diagnose_grid(cfg, model)
        if name == "convexity":
            reports.append(convexity_check(model, grid))
        elif name == "posvar":
            reports.append(posterior_variance_positivity(model, grid))
        elif name == "polylog":
            reports.append(_polylog(model, alone=check == "polylog"))
        else:
            hc = default_heat_config(model, int(cfg["heat_nodes"]), spectral_floor=float(cfg["spectral_floor"]),
                                     boundedness_ratio=float(cfg["boundedness_ratio"]))
            reports.append(heat_extension_check(model, hc))
    dump_json({"model": f"{model.representation}:{model.label}",
               "reports": [r.to_dict() for r in reports], "config": cfg}, out)
    if cfg["plot"]:
        grid = grid or _diagnose_grid(cfg, model)
        y = grid.nodes
        _write_svg(cfg["plot"], [(y, {"c(y)": 0.5 * y * y + model.log_density(y)}, "c(y) = y^2/2 + l(y)"),
                                 (y, {"1 + l''(y)": 1.0 + model.score_derivative(y)}, "posterior variance profile")])
    if cfg["strict"] and any(r.verdict == NOT_REALIZABLE for r in reports):
        return EXIT_DIAGNOSTIC
    return EXIT_OK


def _int_list(v, what: str) -> list[int]:
    if isinstance(v, str):
        v = [s for s in v.split(",") if s.strip()]
    try:
        return [int(x) for x in v]
    except (TypeError, ValueError):
        raise CliError(f"{what}: expected a comma-separated list of integers") from None


def cmd_bench(cfg: dict) -> int:
    out = _need(cfg, "output")
    priors = _parse_json_arg(cfg["priors"], "--priors")
    if not isinstance(priors, list) or not all(isinstance(p, dict) for p in priors):
        raise CliError("--priors must be a JSON list of prior descriptors")
    for p in priors:
        make_prior(p)  # validate up front: a bad descriptor is a config error, not a cell failure
    rules = cfg["rules"].split(",") if isinstance(cfg["rules"], str) else list(cfg["rules"])
    bad = [r for r in rules if r not in BENCH_RULES]
    if bad:
        raise CliError(f"unknown bench rules {bad}; choose from {BENCH_RULES}")
    sizes = _int_list(cfg["sizes"], "--sizes")
    reps = int(cfg["reps"])
    if reps < 1 or any(n < 3 for n in sizes):
        raise CliError("need reps >= 1 and sizes >= 3")
    cfg.update(priors=priors, rules=rules, sizes=sizes)
    rows = run_bench(priors, rules, sizes, reps, int(cfg["seed"]), float(cfg["noise_sd"]))
    try:
        write_bench_csv(rows, out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}") from None
    dump_json({"rows": rows_to_json(rows), "config": cfg}, Path(out).with_suffix(".json"))
    for r in rows:
        if r.error:
            print(f"warning: bench cell {r.rule}/{r.prior}/n={r.n} failed: {r.error}", file=sys.stderr)
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _bool_flag(p, name, help_):
    p.add_argument(name, action="store_true", default=None, help=help_)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="input CSV (header row with a 'y' column)")
    common.add_argument("--output", help="output file")
    common.add_argument("--config", help="JSON file of option values (flags take precedence)")
    common.add_argument("--seed", type=int, help="random seed")
    _bool_flag(common, "--strict", "nonzero exit on non-convergence (5) or a not-realizable verdict (4)")

    parser = argparse.ArgumentParser(prog="ebshrink", description="Empirical Bayes shrinkage via marginal modeling.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="draw a compound-decision dataset")
    p.add_argument("--prior", help='prior descriptor as JSON, e.g. \'{"kind": "two-point", "a": -2, "b": 2}\'')
    p.add_argument("--n", type=int, help="number of observations")
    p.add_argument("--family", choices=("gaussian-location", "poisson-count", "gaussian-scale"))
    p.add_argument("--noise-sd", dest="noise_sd", type=float)

    p = sub.add_parser("fit", parents=[common], help="estimate the marginal log-density")
    p.add_argument("--method", choices=FIT_METHODS)
    p.add_argument("--bandwidth", type=float, help="kde bandwidth (default: Silverman)")
    p.add_argument("--K", type=int, help="lindsey polynomial degree")
    p.add_argument("--n-bins", dest="n_bins", type=int, help="lindsey histogram bins")
    p.add_argument("--n-atoms", dest="n_atoms", type=int, help="npmle support grid size")
    p.add_argument("--tol", type=float, help="npmle: stop when the log-likelihood gain falls below this")
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--rho", type=float, help="score-matching curvature penalty")
    _bool_flag(p, "--convexity", "score matching: enforce 1 + l'' >= 0 at the nodes")
    p.add_argument("--kkt-tol", dest="kkt_tol", type=float)
    p.add_argument("--grid-nodes", dest="grid_nodes", type=int)
    p.add_argument("--grid-lo", dest="grid_lo", type=float)
    p.add_argument("--grid-hi", dest="grid_hi", type=float)
    p.add_argument("--plot", help="write an SVG of m(y) and delta(y)")

    p = sub.add_parser("estimate", parents=[common], help="apply a shrinkage rule")
    p.add_argument("--rule", choices=ESTIMATE_RULES)
    p.add_argument("--model", help="model JSON written by 'fit'")
    _bool_flag(p, "--smoothed", "robbins: isotonic smoothing")

    p = sub.add_parser("diagnose", parents=[common], help="realizability diagnostics for a model")
    p.add_argument("--model", help="model JSON written by 'fit'")
    p.add_argument("--check", choices=CHECKS)
    p.add_argument("--grid-nodes", dest="grid_nodes", type=int)
    p.add_argument("--grid-lo", dest="grid_lo", type=float)
    p.add_argument("--grid-hi", dest="grid_hi", type=float)
    p.add_argument("--heat-nodes", dest="heat_nodes", type=int)
    p.add_argument("--spectral-floor", dest="spectral_floor", type=float)
    p.add_argument("--boundedness-ratio", dest="boundedness_ratio", type=float)
    p.add_argument("--plot", help="write an SVG of c(y) and 1 + l''(y)")

    p = sub.add_parser("bench", parents=[common], help="factorial simulation benchmark")
    p.add_argument("--priors", help="JSON list of prior descriptors")
    p.add_argument("--rules", help=f"comma-separated subset of {','.join(BENCH_RULES)}")
    p.add_argument("--sizes", help="comma-separated sample sizes")
    p.add_argument("--reps", type=int)
    p.add_argument("--noise-sd", dest="noise_sd", type=float)
    return parser


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "estimate": cmd_estimate,
            "diagnose": cmd_diagnose, "bench": cmd_bench}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    strict = bool(args.strict)
    try:
        cfg = resolve(args.command, args)
        strict = cfg["strict"]
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NumericalFailure as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED if strict else EXIT_INVALID
    except ShrinkageError as exc:
        print(f"error ({exc.code}): {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
