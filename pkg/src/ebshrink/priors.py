"""Priors, observation containers and forward simulation for the compound
normal-means problem (plus its Poisson and Gaussian-scale cousins)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .errors import InvalidDescriptor, InvalidGrid, InvalidInput, UnsupportedFamily

FAMILIES = ("gaussian-location", "poisson-count", "gaussian-scale")

#: Number of equi-probability atoms used when a continuous prior is discretized.
DEFAULT_ATOMS = 201

#: Name of the bit generator behind :func:`sample_compound`.
RNG_ALGORITHM = "numpy.random.PCG64"


def _merge_atoms(support: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(support, kind="stable")
    support, weights = support[order], weights[order]
    uniq, inverse = np.unique(support, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inverse, weights)
    return uniq, merged


@dataclass(frozen=True)
class MixingMeasure:
    """A discrete prior: atoms ``support`` carrying probabilities ``weights``."""

    support: np.ndarray
    weights: np.ndarray
    label: str = ""

    def __post_init__(self):
        u = np.asarray(self.support, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if u.size == 0 or u.shape != w.shape:
            raise InvalidInput("support and weights must be nonempty and of equal length")
        if not np.all(np.isfinite(u)) or not np.all(np.isfinite(w)):
            raise InvalidInput("support and weights must be finite")
        if np.any(w < 0):
            raise InvalidInput("weights must be nonnegative")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise InvalidInput(f"weights sum to {math.fsum(w)!r}, not 1")
        if u.size > 1 and np.any(np.diff(u) <= 0):
            raise InvalidInput("support must be strictly increasing")
        u.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "support", u)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_atoms(cls, support, weights, label: str = "") -> "MixingMeasure":
        """Build from unsorted, possibly repeated atoms; weights are renormalized."""
        u, w = _merge_atoms(np.asarray(support, float), np.asarray(weights, float))
        w = w / math.fsum(w)
        return cls(u, w, label)

    def __len__(self) -> int:
        return self.support.size

    def mean(self) -> float:
        return math.fsum(self.support * self.weights)

    def variance(self) -> float:
        return math.fsum(self.weights * (self.support - self.mean()) ** 2)

    def pruned(self, min_weight: float = 0.0) -> "MixingMeasure":
        """Drop atoms with weight ``<= min_weight`` and renormalize."""
        keep = self.weights > min_weight
        if keep.all():
            return self
        w = self.weights[keep]
        return MixingMeasure(self.support[keep], w / math.fsum(w), self.label)

    def shifted(self, c: float) -> "MixingMeasure":
        return MixingMeasure(self.support + c, self.weights, self.label)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(self), size=n, p=self.weights)
        return self.support[idx]

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "weights": self.weights.tolist(), "label": self.label}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MixingMeasure":
        return cls(np.array(d["support"], float), np.array(d["weights"], float), d.get("label", ""))


@dataclass(frozen=True)
class EvaluationGrid:
    lo: float
    hi: float
    n_nodes: int

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.lo >= self.hi:
            raise InvalidGrid(f"need lo < hi, got [{self.lo}, {self.hi}]")
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 3:
            raise InvalidGrid("n_nodes must be an integer >= 3")
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        object.__setattr__(self, "n_nodes", int(self.n_nodes))

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / (self.n_nodes - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n_nodes)

    def contains(self, y) -> bool:
        y = np.asarray(y, float)
        return bool(np.all((y >= self.lo) & (y <= self.hi)))

    def to_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "n_nodes": self.n_nodes}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvaluationGrid":
        return cls(d["lo"], d["hi"], d["n_nodes"])


def default_grid(values, noise_sd: float = 1.0, n_nodes: int = 401, pad: float = 4.0) -> EvaluationGrid:
    """Grid over ``[min(y) - pad*sd, max(y) + pad*sd]``."""
    v = np.asarray(values, float)
    return EvaluationGrid(v.min() - pad * noise_sd, v.max() + pad * noise_sd, n_nodes)


@dataclass(frozen=True)
class ObservationSet:
    values: np.ndarray
    family: str = "gaussian-location"
    noise_sd: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size == 0:
            raise InvalidInput("an ObservationSet must be nonempty")
        if not np.all(np.isfinite(v)):
            raise InvalidInput("observations must be finite")
        if self.family not in FAMILIES:
            raise UnsupportedFamily(f"unknown family {self.family!r}")
        if not self.noise_sd > 0:
            raise InvalidInput("noise_sd must be positive")
        if self.family == "poisson-count" and (np.any(v < 0) or np.any(v != np.round(v))):
            raise InvalidInput("poisson-count values must be nonnegative integers")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "noise_sd", float(self.noise_sd))

    @property
    def n(self) -> int:
        return self.values.size

    def metadata(self) -> dict:
        return {"family": self.family, "noise_sd": self.noise_sd, "seed": self.seed}


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def _format_value(x: float, integer: bool) -> str:
    return str(int(x)) if integer else repr(float(x))


def write_observations(obs: ObservationSet, path, extra: Mapping[str, Any] | None = None) -> None:
    """Write ``y`` CSV plus a JSON sidecar carrying family/noise_sd/seed."""
    path = Path(path)
    integer = obs.family == "poisson-count"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("y\n")
        for v in obs.values:
            fh.write(_format_value(v, integer) + "\n")
    meta = obs.metadata()
    if extra:
        meta.update(extra)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class CsvFormatError(InvalidInput):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


def read_column_csv(path, column: str = "y") -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file (header row is mandatory)", 1) from None
        header = [h.strip() for h in header]
        if column not in header:
            raise CsvFormatError(f"header must contain column {column!r}, got {header}", 1)
        col = header.index(column)
        out = []
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise CsvFormatError(f"expected {len(header)} fields, got {len(row)}", lineno)
            try:
                val = float(row[col])
            except ValueError:
                raise CsvFormatError(f"cannot parse {row[col]!r} as a number", lineno) from None
            if not math.isfinite(val):
                raise CsvFormatError(f"non-finite value {row[col]!r}", lineno)
            out.append(val)
    if not out:
        raise CsvFormatError("no data rows")
    return np.array(out)


def read_observations(path) -> ObservationSet:
    """Read the CSV; the sidecar is optional (defaults: gaussian-location, sd 1)."""
    values = read_column_csv(path, "y")
    meta: dict = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
    return ObservationSet(
        values,
        family=meta.get("family", "gaussian-location"),
        noise_sd=meta.get("noise_sd", 1.0),
        seed=meta.get("seed"),
    )


# -- prior descriptors -------------------------------------------------------

def _num(desc: Mapping[str, Any], key: str, default=None) -> float:
    if key not in desc:
        if default is None:
            raise InvalidDescriptor(f"descriptor {desc.get('kind')!r} is missing {key!r}")
        return default
    try:
        val = float(desc[key])
    except (TypeError, ValueError):
        raise InvalidDescriptor(f"{key!r} must be numeric") from None
    if not math.isfinite(val):
        raise InvalidDescriptor(f"{key!r} must be finite")
    return val


def _n_atoms(desc: Mapping[str, Any]) -> int:
    n = desc.get("n_atoms", DEFAULT_ATOMS)
    if int(n) != n or n < 1:
        raise InvalidDescriptor("n_atoms must be an integer >= 1")
    return int(n)


def _normal_quantile_atoms(mean: float, sd: float, n_atoms: int) -> np.ndarray:
    probs = (np.arange(n_atoms) + 0.5) / n_atoms
    return mean + sd * norm.ppf(probs)


def make_prior(desc: Mapping[str, Any]) -> MixingMeasure:
    """Build a :class:`MixingMeasure` from a JSON-style descriptor.

    Recognised kinds::

        {"kind": "point", "u": 0}
        {"kind": "two-point", "a": -2, "b": 2, "p": 0.5}      # p = mass at a
        {"kind": "gaussian", "mean": 0, "sd": 1, "n_atoms": 201}
        {"kind": "spike-slab", "p0": 0.9, "slab_sd": 3, "n_atoms": 201}
        {"kind": "discrete", "support": [...], "weights": [...]}

    Continuous priors are replaced by ``n_atoms`` equal-weight atoms placed at
    the midpoint quantiles ``(i + 1/2) / n_atoms``.
    """
    if not isinstance(desc, Mapping) or "kind" not in desc:
        raise InvalidDescriptor("descriptor must be a mapping with a 'kind' key")
    kind = desc["kind"]
    label = desc.get("label") or kind
    if kind == "point":
        return MixingMeasure(np.array([_num(desc, "u", 0.0)]), np.array([1.0]), label)
    if kind == "two-point":
        a, b, p = _num(desc, "a"), _num(desc, "b"), _num(desc, "p", 0.5)
        if not 0.0 <= p <= 1.0:
            raise InvalidDescriptor("p must lie in [0, 1]")
        return MixingMeasure.from_atoms([a, b], [p, 1.0 - p], label).pruned()
    if kind == "gaussian":
        mean, sd = _num(desc, "mean", 0.0), _num(desc, "sd", 1.0)
        if sd <= 0:
            raise InvalidDescriptor("sd must be positive")
        n = _n_atoms(desc)
        return MixingMeasure.from_atoms(_normal_quantile_atoms(mean, sd, n), np.full(n, 1.0 / n), label)
    if kind == "spike-slab":
        p0, sd = _num(desc, "p0"), _num(desc, "slab_sd")
        if not 0.0 <= p0 <= 1.0:
            raise InvalidDescriptor("p0 must lie in [0, 1]")
        if sd <= 0:
            raise InvalidDescriptor("slab_sd must be positive")
        n = _n_atoms(desc)
        atoms = np.concatenate([[0.0], _normal_quantile_atoms(0.0, sd, n)])
        weights = np.concatenate([[p0], np.full(n, (1.0 - p0) / n)])
        return MixingMeasure.from_atoms(atoms, weights, label).pruned()
    if kind == "discrete":
        try:
            support = np.asarray(desc["support"], float)
            weights = np.asarray(desc["weights"], float)
        except (KeyError, TypeError, ValueError):
            raise InvalidDescriptor("discrete prior needs numeric 'support' and 'weights'") from None
        if support.shape != weights.shape or support.size == 0 or np.any(weights < 0) or weights.sum() <= 0:
            raise InvalidDescriptor("discrete prior needs matching nonempty support/weights, weights >= 0")
        return MixingMeasure.from_atoms(support, weights, label).pruned()
    raise InvalidDescriptor(f"unknown prior kind {kind!r}")


def sample_compound(
    prior: MixingMeasure,
    n: int,
    seed: int,
    family: str = "gaussian-location",
    noise_sd: float = 1.0,
) -> tuple[np.ndarray, ObservationSet]:
    """Draw ``mu_i ~ prior`` i.i.d. and one observation per ``mu_i``.

    ``gaussian-location``: ``y ~ N(mu, noise_sd^2)``; ``poisson-count``:
    ``y ~ Poisson(mu)`` (atoms must be >= 0); ``gaussian-scale``:
    ``y ~ N(0, mu^2)`` (atoms must be > 0). Randomness comes from a PCG64
    generator seeded with ``seed`` so repeated calls are bitwise identical.
    """
    if int(n) != n or n < 1:
        raise InvalidInput("n must be a positive integer")
    if family not in FAMILIES:
        raise UnsupportedFamily(f"unknown family {family!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    mu = prior.sample(int(n), rng)
    if family == "gaussian-location":
        y = mu + noise_sd * rng.standard_normal(mu.size)
        return mu, ObservationSet(y, family, noise_sd, seed)
    if family == "poisson-count":
        if np.any(prior.support < 0):
            raise InvalidInput("poisson rates must be nonnegative")
        y = rng.poisson(mu).astype(float)
        return mu, ObservationSet(y, family, 1.0, seed)
    if np.any(prior.support <= 0):
        raise InvalidInput("gaussian-scale atoms are standard deviations and must be positive")
    y = mu * rng.standard_normal(mu.size)
    return mu, ObservationSet(y, family, 1.0, seed)


def as_values(obs: ObservationSet | Sequence[float] | np.ndarray) -> np.ndarray:
    if isinstance(obs, ObservationSet):
        return obs.values
    return np.asarray(obs, float).reshape(-1)


__all__ = [
    "FAMILIES",
    "DEFAULT_ATOMS",
    "RNG_ALGORITHM",
    "MixingMeasure",
    "EvaluationGrid",
    "ObservationSet",
    "default_grid",
    "make_prior",
    "sample_compound",
    "write_observations",
    "read_observations",
    "read_column_csv",
    "sidecar_path",
    "CsvFormatError",
]
