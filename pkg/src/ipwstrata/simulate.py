"""Seeded Monte Carlo under the forced-pair sampling design.

Replications are split into fixed-size chunks. Chunk ``j`` draws from a
Philox generator seeded by ``SeedSequence(master_seed, spawn_key=(j,))``, and
per-chunk central moments are merged in chunk order, so a report depends only
on ``(population, schemes, config)`` and never on how many threads ran it.
Every scheme is evaluated on the same draws.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .estimators import stratum_contrasts
from .moments import aggregate_variance
from .strata import (
    PopulationSpec,
    StratumSpec,
    WeightingScheme,
    collapse_by_propensity,
    require_valid,
    validate,
)

__all__ = [
    "OutcomeModel",
    "SimConfig",
    "EstimatorSummary",
    "MonteCarloReport",
    "chunk_generator",
    "draw_assignment",
    "draw_outcomes",
    "run_monte_carlo",
    "sweep",
]


class OutcomeModel(str, enum.Enum):
    GAUSSIAN = "gaussian"
    TWO_POINT = "twopoint"

    @classmethod
    def parse(cls, value) -> "OutcomeModel":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "").replace("_", "")
        for m in cls:
            if m.value == key:
                return m
        raise ValueError(f"unknown outcome model {value!r} (expected gaussian or twopoint)")


@dataclass(frozen=True)
class SimConfig:
    replications: int
    master_seed: int
    outcome_model: OutcomeModel = OutcomeModel.GAUSSIAN
    chunk_size: int = 8192

    def __post_init__(self):
        object.__setattr__(self, "outcome_model", OutcomeModel.parse(self.outcome_model))
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if self.chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")

    @property
    def n_chunks(self) -> int:
        return -(-self.replications // self.chunk_size)


def chunk_generator(master_seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(chunk,))))


def draw_assignment(s: StratumSpec, rng: np.random.Generator, size=None):
    """One forced treated unit plus a Bin(n_total - 2, p) draw for the rest.

    Returns ``(n1, n0)``; arrays of shape ``size`` when ``size`` is given.
    """
    n1 = 1 + rng.binomial(s.n_total - 2, s.p, size=size)
    if size is None:
        n1 = int(n1)
    return n1, s.n_total - n1


def _arm_sums(n, mu, var, model: OutcomeModel, rng: np.random.Generator):
    # Sums are drawn from their exact distribution, not unit by unit.
    n = np.asarray(n)
    mu = np.asarray(mu, dtype=float)
    var = np.asarray(var, dtype=float)
    if model is OutcomeModel.GAUSSIAN:
        return rng.normal(n * mu, np.sqrt(n * var))
    ups = rng.binomial(n, 0.5)
    return n * mu + np.sqrt(var) * (2 * ups - n)


def draw_outcomes(s: StratumSpec, n1, n0, model="gaussian", rng: np.random.Generator | None = None):
    """Outcome sums of ``n1`` treated and ``n0`` control units.

    Gaussian outcomes are normal; two-point outcomes are ``mu +/- sigma`` with
    equal probability. ``n1``/``n0`` may be arrays of counts, one sum per entry.
    """
    if np.any(np.asarray(n1) < 1) or np.any(np.asarray(n0) < 1):
        raise ValueError("both arms need at least one unit")
    model = OutcomeModel.parse(model)
    rng = rng if rng is not None else np.random.default_rng()
    sum1 = _arm_sums(n1, s.mu1, s.var1, model, rng)
    sum0 = _arm_sums(n0, s.mu0, s.var0, model, rng)
    if np.ndim(sum1) == 0:
        return float(sum1), float(sum0)
    return sum1, sum0


@dataclass(frozen=True)
class EstimatorSummary:
    mean: float
    variance: float
    mean_se: float
    variance_se: float | None

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "variance": self.variance,
            "mean_se": self.mean_se,
            "variance_se": self.variance_se,
        }


@dataclass(frozen=True)
class MonteCarloReport:
    replications: int
    master_seed: int
    outcome_model: str
    chunk_size: int
    schemes: dict[str, EstimatorSummary]
    variance_differences: dict[str, dict] = field(default_factory=dict)

    def __getitem__(self, scheme) -> EstimatorSummary:
        return self.schemes[WeightingScheme.parse(scheme).value]

    def to_dict(self) -> dict:
        return {
            "replications": self.replications,
            "master_seed": self.master_seed,
            "outcome_model": self.outcome_model,
            "chunk_size": self.chunk_size,
            "schemes": {k: v.to_dict() for k, v in self.schemes.items()},
            "variance_differences": self.variance_differences,
        }


@dataclass
class _Moments:
    """Count, mean and central sums of powers 2..4."""

    n: int = 0
    mean: float = 0.0
    m2: float = 0.0
    m3: float = 0.0
    m4: float = 0.0

    @classmethod
    def of(cls, x: np.ndarray) -> "_Moments":
        mean = float(np.mean(x))
        d = x - mean
        d2 = d * d
        return cls(len(x), mean, float(np.sum(d2)), float(np.sum(d2 * d)), float(np.sum(d2 * d2)))

    def merge(self, other: "_Moments") -> "_Moments":
        if self.n == 0:
            return replace(other)
        na, nb = self.n, other.n
        n = na + nb
        delta = other.mean - self.mean
        mean = self.mean + delta * nb / n
        m2 = self.m2 + other.m2 + delta**2 * na * nb / n
        m3 = (
            self.m3
            + other.m3
            + delta**3 * na * nb * (na - nb) / n**2
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n
        )
        m4 = (
            self.m4
            + other.m4
            + delta**4 * na * nb * (na * na - na * nb + nb * nb) / n**3
            + 6.0 * delta**2 * (na * na * other.m2 + nb * nb * self.m2) / n**2
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n
        )
        return _Moments(n, mean, m2, m3, m4)

    @property
    def variance(self) -> float:
        return self.m2 / (self.n - 1) if self.n > 1 else 0.0

    def summary(self) -> EstimatorSummary:
        n, var = self.n, self.variance
        var_se = None
        if n > 3:
            # SE of the unbiased sample variance from the fourth central moment.
            m4 = self.m4 / n
            var_se = math.sqrt(max(m4 - var * var * (n - 3) / (n - 1), 0.0) / n)
        return EstimatorSummary(self.mean, var, math.sqrt(var / n), var_se)


class _Design:
    """Array views of a population for vectorised replication."""

    def __init__(self, pop: PopulationSpec, schemes: Sequence[WeightingScheme]):
        self.schemes = list(schemes)
        strata = pop.strata
        self.n_total = np.array([s.n_total for s in strata])
        self.p = np.array([s.p for s in strata])
        self.mu1 = np.array([s.mu1 for s in strata])
        self.mu0 = np.array([s.mu0 for s in strata])
        self.var1 = np.array([s.var1 for s in strata])
        self.var0 = np.array([s.var0 for s in strata])
        self.shares = self.n_total / self.n_total.sum()
        _, mapping = collapse_by_propensity(pop)
        groups = list(dict.fromkeys(mapping[s.label] for s in strata))
        self.groups = np.zeros((len(strata), len(groups)))
        for i, s in enumerate(strata):
            self.groups[i, groups.index(mapping[s.label])] = 1.0
        self.group_shares = self.shares @ self.groups

    def replicate(self, size: int, model: OutcomeModel, rng: np.random.Generator) -> dict[WeightingScheme, np.ndarray]:
        shape = (size, len(self.p))
        n1 = 1 + rng.binomial(np.broadcast_to(self.n_total - 2, shape), np.broadcast_to(self.p, shape))
        n0 = self.n_total - n1
        sum1 = _arm_sums(n1, self.mu1, self.var1, model, rng)
        sum0 = _arm_sums(n0, self.mu0, self.var0, model, rng)
        out = {}
        for scheme in self.schemes:
            if scheme is WeightingScheme.TRUE:
                out[scheme] = stratum_contrasts(n1, n0, sum1, sum0, self.p) @ self.shares
            elif scheme is WeightingScheme.ESTIMATED:
                out[scheme] = stratum_contrasts(n1, n0, sum1, sum0) @ self.shares
            else:
                g = self.groups
                out[scheme] = stratum_contrasts(n1 @ g, n0 @ g, sum1 @ g, sum0 @ g) @ self.group_shares
        return out


def run_monte_carlo(
    pop: PopulationSpec,
    schemes: Sequence = (WeightingScheme.TRUE, WeightingScheme.ESTIMATED),
    config: SimConfig | None = None,
    *,
    workers: int = 1,
) -> MonteCarloReport:
    """Empirical mean and variance of each estimator over ``config.replications`` draws.

    ``workers > 1`` runs chunks on a thread pool; the report is bit-identical
    to the serial run.
    """
    require_valid(pop)
    if config is None:
        raise ValueError("a SimConfig is required")
    schemes = list(dict.fromkeys(WeightingScheme.parse(s) for s in schemes))
    if not schemes:
        raise ValueError("no weighting schemes requested")
    design = _Design(pop, schemes)

    def run_chunk(j: int):
        start = j * config.chunk_size
        size = min(config.chunk_size, config.replications - start)
        draws = design.replicate(size, config.outcome_model, chunk_generator(config.master_seed, j))
        return {s: _Moments.of(x) for s, x in draws.items()}

    chunks = range(config.n_chunks)
    if workers > 1 and config.n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_chunk = list(pool.map(run_chunk, chunks))
    else:
        per_chunk = [run_chunk(j) for j in chunks]

    totals = {s: _Moments() for s in schemes}
    for stats in per_chunk:
        for s in schemes:
            totals[s] = totals[s].merge(stats[s])

    summaries = {s.value: totals[s].summary() for s in schemes}
    diffs = {}
    for i, a in enumerate(schemes):
        for b in schemes[i + 1 :]:
            diffs[f"{a.value}-{b.value}"] = _batch_difference(per_chunk, a, b, summaries, config.replications)
    return MonteCarloReport(
        replications=config.replications,
        master_seed=config.master_seed,
        outcome_model=config.outcome_model.value,
        chunk_size=config.chunk_size,
        schemes=summaries,
        variance_differences=diffs,
    )


def _batch_difference(per_chunk, a, b, summaries, total: int) -> dict:
    """Difference of variances with a batch-means standard error over chunks."""
    diff = summaries[a.value].variance - summaries[b.value].variance
    usable = [c for c in per_chunk if c[a].n > 1]
    if len(usable) < 2:
        return {"difference": diff, "se": None}
    weights = np.array([c[a].n for c in usable], dtype=float)
    weights /= weights.sum()
    d = np.array([c[a].variance - c[b].variance for c in usable])
    centre = float(weights @ d)
    b_count = len(usable)
    se = math.sqrt(float(np.sum(weights**2 * (d - centre) ** 2)) * b_count / (b_count - 1))
    return {"difference": diff, "se": se}


SWEEP_PARAMETERS = ("p", "mu_shift")


def _apply(pop: PopulationSpec, parameter: str, value: float) -> PopulationSpec:
    if parameter == "p":
        return PopulationSpec(replace(s, p=float(value)) for s in pop.strata)
    return PopulationSpec(replace(s, mu1=s.mu1 + value, mu0=s.mu0 + value) for s in pop.strata)


def sweep(
    pop_template: PopulationSpec,
    parameter: str,
    grid: Sequence[float],
    schemes: Sequence = (WeightingScheme.TRUE, WeightingScheme.ESTIMATED),
    config: SimConfig | None = None,
    *,
    workers: int = 1,
) -> list[dict]:
    """Exact (and optionally simulated) estimator variances along a parameter grid.

    ``parameter="p"`` sets every stratum's propensity to the grid value;
    ``"mu_shift"`` adds the grid value to both outcome means of every
    stratum. Each row has ``value`` and ``exact_<scheme>`` keys, plus
    ``mc_<scheme>`` and ``mc_se_<scheme>`` when ``config`` is given. Every
    grid point reuses the same seed.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r} (expected one of {SWEEP_PARAMETERS})")
    schemes = list(dict.fromkeys(WeightingScheme.parse(s) for s in schemes))
    pops = []
    for i, value in enumerate(grid):
        pop = _apply(pop_template, parameter, value)
        problems = validate(pop)
        if problems:
            raise ValueError(f"grid[{i}]={value!r} is invalid: " + "; ".join(map(str, problems)))
        pops.append(pop)
    rows = []
    for value, pop in zip(grid, pops):
        row = {"value": float(value)}
        for s in schemes:
            row[f"exact_{s.value}"] = aggregate_variance(pop, s)
        if config is not None:
            report = run_monte_carlo(pop, schemes, config, workers=workers)
            for s in schemes:
                row[f"mc_{s.value}"] = report[s].variance
                row[f"mc_se_{s.value}"] = report[s].variance_se
        rows.append(row)
    return rows
