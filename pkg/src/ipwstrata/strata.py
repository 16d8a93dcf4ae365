"""Discrete-covariate populations, realized stratum samples and strata collapsing.

A population is an ordered list of strata (covariate cells). Each cell has a
true propensity ``p``, per-arm outcome means and variances, and a fixed size
``n_total``. Samples follow the forced-pair design: every cell holds at least
one treated and one control unit, the remaining ``n_total - 2`` units are
assigned independently with probability ``p``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

__all__ = [
    "StratumSpec",
    "PopulationSpec",
    "StratumSample",
    "Dataset",
    "WeightingScheme",
    "Violation",
    "PopulationFormatError",
    "validate",
    "require_valid",
    "collapse_by_propensity",
    "collapse_dataset",
    "load_population",
]

POPULATION_FIELDS = ("label", "p", "mu1", "mu0", "var1", "var0", "n_total")


class PopulationFormatError(ValueError):
    """Raised when a population document cannot be parsed."""


class WeightingScheme(str, enum.Enum):
    """Which propensity enters the IPW weights."""

    TRUE = "true"
    ESTIMATED = "estimated"
    HYBRID = "hybrid"

    @classmethod
    def parse(cls, value: "str | WeightingScheme") -> "WeightingScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown weighting scheme {value!r} (expected one of {names})") from None


@dataclass(frozen=True)
class StratumSpec:
    """One covariate cell of the data-generating process.

    Construction does not enforce the invariants; use :func:`validate`.
    """

    label: str
    p: float
    mu1: float
    mu0: float
    var1: float
    var0: float
    n_total: int

    @property
    def q(self) -> float:
        return 1.0 - self.p

    @property
    def n_free(self) -> int:
        """Units left after the forced treated/control pair."""
        return self.n_total - 2

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in POPULATION_FIELDS}


@dataclass(frozen=True)
class PopulationSpec:
    strata: tuple[StratumSpec, ...]

    def __init__(self, strata: Iterable[StratumSpec]):
        object.__setattr__(self, "strata", tuple(strata))

    def __len__(self) -> int:
        return len(self.strata)

    def __iter__(self):
        return iter(self.strata)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.strata]

    @property
    def n_total(self) -> int:
        return sum(s.n_total for s in self.strata)

    def stratum(self, label: str) -> StratumSpec:
        for s in self.strata:
            if s.label == label:
                return s
        raise KeyError(label)

    def weights(self) -> dict[str, float]:
        """Cell shares N_x / N."""
        total = self.n_total
        return {s.label: s.n_total / total for s in self.strata}

    def to_dict(self) -> dict:
        return {"strata": [s.to_dict() for s in self.strata]}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc) -> "PopulationSpec":
        if not isinstance(doc, Mapping) or "strata" not in doc:
            raise PopulationFormatError('population document must be an object with a "strata" list')
        raw = doc["strata"]
        if not isinstance(raw, list):
            raise PopulationFormatError('"strata" must be a list')
        strata = []
        for i, entry in enumerate(raw):
            if not isinstance(entry, Mapping):
                raise PopulationFormatError(f"strata[{i}] must be an object")
            missing = [k for k in POPULATION_FIELDS if k not in entry]
            if missing:
                raise PopulationFormatError(f"strata[{i}] missing field(s): {', '.join(missing)}")
            extra = sorted(set(entry) - set(POPULATION_FIELDS))
            if extra:
                raise PopulationFormatError(f"strata[{i}] unknown field(s): {', '.join(extra)}")
            strata.append(_stratum_from_entry(i, entry))
        return cls(strata)

    @classmethod
    def from_json(cls, text: str) -> "PopulationSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PopulationFormatError(f"malformed JSON: {exc}") from exc
        return cls.from_dict(doc)


def _stratum_from_entry(i: int, entry: Mapping) -> StratumSpec:
    label = entry["label"]
    if not isinstance(label, str):
        raise PopulationFormatError(f"strata[{i}].label must be a string")
    values = {}
    for name in ("p", "mu1", "mu0", "var1", "var0"):
        v = entry[name]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise PopulationFormatError(f"strata[{i}].{name} must be a number")
        values[name] = float(v)
    n_total = entry["n_total"]
    if isinstance(n_total, float) and n_total.is_integer():
        n_total = int(n_total)
    if isinstance(n_total, bool) or not isinstance(n_total, int):
        raise PopulationFormatError(f"strata[{i}].n_total must be an integer")
    return StratumSpec(label=label, n_total=n_total, **values)


def load_population(path: "str | Path") -> PopulationSpec:
    return PopulationSpec.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Violation:
    code: str
    label: str | None
    detail: str

    def __str__(self) -> str:
        where = f"stratum {self.label!r}: " if self.label is not None else ""
        return f"{self.code}: {where}{self.detail}"


def validate(pop: PopulationSpec) -> list[Violation]:
    """Return every violated population invariant; empty iff the population is valid."""
    out: list[Violation] = []
    if len(pop.strata) == 0:
        out.append(Violation("empty", None, "population has no strata"))
    seen: set[str] = set()
    for s in pop.strata:
        if s.label in seen:
            out.append(Violation("duplicate label", s.label, "label appears more than once"))
        seen.add(s.label)
        for name in ("p", "mu1", "mu0", "var1", "var0"):
            if not math.isfinite(getattr(s, name)):
                out.append(Violation("finite", s.label, f"{name}={getattr(s, name)!r} is not finite"))
        if not 0.0 < s.p < 1.0:
            out.append(Violation("positivity", s.label, f"p={s.p!r} not in (0, 1)"))
        if s.var1 < 0:
            out.append(Violation("variance", s.label, f"var1={s.var1!r} is negative"))
        if s.var0 < 0:
            out.append(Violation("variance", s.label, f"var0={s.var0!r} is negative"))
        if s.n_total < 2:
            out.append(Violation("cell size", s.label, f"n_total={s.n_total} < 2"))
    return out


def require_valid(pop: PopulationSpec) -> PopulationSpec:
    problems = validate(pop)
    if problems:
        raise ValueError("invalid population: " + "; ".join(str(v) for v in problems))
    return pop


@dataclass(frozen=True)
class StratumSample:
    """Sufficient statistics of one realized stratum.

    ``units`` optionally carries the per-unit ``(z, y)`` records the sums
    were built from.
    """

    label: str
    n1: int
    n0: int
    sum1: float
    sum0: float
    units: tuple[tuple[int, float], ...] | None = field(default=None, compare=False)

    @property
    def n_total(self) -> int:
        return self.n1 + self.n0

    @property
    def p_hat(self) -> float:
        return self.n1 / (self.n1 + self.n0)

    @property
    def mean1(self) -> float:
        return self.sum1 / self.n1

    @property
    def mean0(self) -> float:
        return self.sum0 / self.n0

    @classmethod
    def from_units(cls, label: str, units: Sequence[tuple[int, float]]) -> "StratumSample":
        n1 = n0 = 0
        sum1 = sum0 = 0.0
        for z, y in units:
            if z == 1:
                n1 += 1
                sum1 += y
            elif z == 0:
                n0 += 1
                sum0 += y
            else:
                raise ValueError(f"treatment indicator must be 0 or 1, got {z!r}")
        return cls(label, n1, n0, sum1, sum0, units=tuple((int(z), float(y)) for z, y in units))


@dataclass(frozen=True)
class Dataset:
    samples: tuple[StratumSample, ...]

    def __init__(self, samples: Iterable[StratumSample]):
        samples = tuple(samples)
        labels = [s.label for s in samples]
        if len(set(labels)) != len(labels):
            raise ValueError("dataset has duplicate stratum labels")
        object.__setattr__(self, "samples", samples)

    def __iter__(self):
        return iter(self.samples)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def n_total(self) -> int:
        return sum(s.n_total for s in self.samples)

    def sample(self, label: str) -> StratumSample:
        for s in self.samples:
            if s.label == label:
                return s
        raise KeyError(label)

    def check_aligned(self, pop: PopulationSpec) -> None:
        """Raise ValueError unless there is exactly one sample per stratum of matching size."""
        if sorted(pop.labels) != sorted(s.label for s in self.samples):
            raise ValueError("dataset labels do not match population labels")
        for s in self.samples:
            spec = pop.stratum(s.label)
            if s.n_total != spec.n_total:
                raise ValueError(
                    f"stratum {s.label!r}: n1 + n0 = {s.n_total} but population has n_total={spec.n_total}"
                )


def _group_label(labels: Sequence[str]) -> str:
    return labels[0] if len(labels) == 1 else "+".join(labels)


def collapse_by_propensity(pop: PopulationSpec) -> tuple[PopulationSpec, dict[str, str]]:
    """Merge strata sharing exactly the same true propensity.

    The merged cell has the summed size and describes the size-weighted
    mixture of its members: pooled means, and pooled variances including the
    between-cell spread of the means. Returns the collapsed population and the
    original -> merged label map. Group order follows first appearance.
    """
    if len(pop.strata) == 0:
        raise ValueError("cannot collapse an empty population")
    groups: dict[float, list[StratumSpec]] = {}
    for s in pop.strata:
        groups.setdefault(s.p, []).append(s)

    merged: list[StratumSpec] = []
    mapping: dict[str, str] = {}
    for p, members in groups.items():
        label = _group_label([m.label for m in members])
        for m in members:
            mapping[m.label] = label
        if len(members) == 1:
            merged.append(members[0])
            continue
        n = sum(m.n_total for m in members)
        w = [m.n_total / n for m in members]
        mu1 = math.fsum(wi * m.mu1 for wi, m in zip(w, members))
        mu0 = math.fsum(wi * m.mu0 for wi, m in zip(w, members))
        var1 = math.fsum(wi * (m.var1 + (m.mu1 - mu1) ** 2) for wi, m in zip(w, members))
        var0 = math.fsum(wi * (m.var0 + (m.mu0 - mu0) ** 2) for wi, m in zip(w, members))
        merged.append(StratumSpec(label, p, mu1, mu0, var1, var0, n))
    return PopulationSpec(merged), mapping


def collapse_dataset(data: Dataset, grouping: Mapping[str, str]) -> Dataset:
    """Add counts and outcome sums within each group of ``grouping``."""
    labels = [s.label for s in data.samples]
    if set(labels) != set(grouping):
        raise ValueError("dataset labels do not match the grouping map")
    order: list[str] = []
    acc: dict[str, list] = {}
    for s in data.samples:
        g = grouping[s.label]
        if g not in acc:
            order.append(g)
            acc[g] = [0, 0, 0.0, 0.0, []]
        a = acc[g]
        a[0] += s.n1
        a[1] += s.n0
        a[2] += s.sum1
        a[3] += s.sum0
        a[4].append(s)
    out = []
    for g in order:
        n1, n0, sum1, sum0, members = acc[g]
        if len(members) == 1:
            out.append(replace(members[0], label=g))
            continue
        units = None
        if all(m.units is not None for m in members):
            units = tuple(u for m in members for u in m.units)
        out.append(StratumSample(g, n1, n0, sum1, sum0, units=units))
    return Dataset(out)
