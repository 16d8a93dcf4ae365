"""Point estimators on realized datasets.

The primary path works on per-stratum sufficient statistics (counts and
outcome sums). :func:`ipw_unitwise` is the direct unit-level form and serves
as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .strata import (
    Dataset,
    PopulationSpec,
    StratumSample,
    WeightingScheme,
    collapse_by_propensity,
    collapse_dataset,
)

__all__ = [
    "EstimateResult",
    "StratumContrast",
    "ipw_unitwise",
    "stratum_contrast",
    "stratum_contrasts",
    "stratified_estimate",
    "collapse_identity_check",
]


@dataclass(frozen=True)
class StratumContrast:
    label: str
    weight: float
    contrast: float


@dataclass(frozen=True)
class EstimateResult:
    tau_hat: float
    per_stratum: tuple[StratumContrast, ...]


def ipw_unitwise(units: Iterable[tuple[str, int, float]], w: Mapping[str, float]) -> float:
    """(1/N) * sum of y*z/w(x) - y*(1-z)/(1-w(x)) over units ``(label, z, y)``."""
    terms = []
    for label, z, y in units:
        try:
            wx = w[label]
        except KeyError:
            raise KeyError(f"no weight for stratum {label!r}") from None
        if not 0.0 < wx < 1.0:
            raise ValueError(f"weight for stratum {label!r} must lie in (0, 1), got {wx!r}")
        terms.append(y * z / wx - y * (1 - z) / (1.0 - wx))
    if not terms:
        raise ValueError("no units")
    return math.fsum(terms) / len(terms)


def _check_arms(s: StratumSample) -> None:
    if s.n1 < 1 or s.n0 < 1:
        raise ValueError(f"stratum {s.label!r} has an empty arm (n1={s.n1}, n0={s.n0})")


def stratum_contrast(s: StratumSample, w: float | None) -> float:
    """Weighted treated mean minus weighted control mean for one stratum.

    ``w=None`` uses the stratum's own treated share, in which case both
    weights are one and the contrast is the plain difference of means.
    """
    _check_arms(s)
    if w is None:
        return s.mean1 - s.mean0
    if not 0.0 < w < 1.0:
        raise ValueError(f"weight for stratum {s.label!r} must lie in (0, 1), got {w!r}")
    p_hat = s.p_hat
    return p_hat / w * s.mean1 - (1.0 - p_hat) / (1.0 - w) * s.mean0


def stratum_contrasts(n1, n0, sum1, sum0, w=None):
    """Vectorised :func:`stratum_contrast` over arrays of counts and sums."""
    n1 = np.asarray(n1)
    n0 = np.asarray(n0)
    if np.any(n1 < 1) or np.any(n0 < 1):
        raise ValueError("every stratum needs at least one treated and one control unit")
    if w is None:
        return sum1 / n1 - sum0 / n0
    n = n1 + n0
    return (sum1 / w - sum0 / (1.0 - w)) / n


def _weights_for(data: Dataset, scheme, pop: PopulationSpec | None) -> dict[str, float | None]:
    if isinstance(scheme, Mapping):
        return {s.label: float(scheme[s.label]) for s in data.samples}
    scheme = WeightingScheme.parse(scheme)
    if scheme is WeightingScheme.ESTIMATED:
        return {s.label: None for s in data.samples}
    if pop is None:
        raise ValueError("true-propensity weighting needs the population")
    return {s.label: pop.stratum(s.label).p for s in data.samples}


def stratified_estimate(data: Dataset, scheme, pop: PopulationSpec | None = None) -> EstimateResult:
    """Cell-share weighted sum of stratum contrasts.

    ``scheme`` is a :class:`WeightingScheme` (or its name) or an explicit
    mapping label -> weight. The hybrid scheme merges cells sharing a true
    propensity and then weights by the pooled treated share.
    """
    if not isinstance(scheme, Mapping) and WeightingScheme.parse(scheme) is WeightingScheme.HYBRID:
        if pop is None:
            raise ValueError("hybrid weighting needs the population")
        data.check_aligned(pop)
        _, mapping = collapse_by_propensity(pop)
        return stratified_estimate(collapse_dataset(data, mapping), WeightingScheme.ESTIMATED)
    if pop is not None:
        data.check_aligned(pop)
    weights = _weights_for(data, scheme, pop)
    total = data.n_total
    rows = tuple(
        StratumContrast(s.label, s.n_total / total, stratum_contrast(s, weights[s.label])) for s in data.samples
    )
    tau = math.fsum(r.weight * r.contrast for r in rows)
    return EstimateResult(tau_hat=tau, per_stratum=rows)


def collapse_identity_check(data: Dataset, p) -> float:
    """|share-weighted true-PS contrasts of two cells - true-PS contrast of the pooled cell|.

    ``p`` is the shared propensity, or a pair ``(p_a, p_b)`` to probe cells
    whose propensities differ; the pooled cell is then weighted by the
    size-weighted average propensity. Zero up to rounding when both cells
    share one propensity.
    """
    if len(data) != 2:
        raise ValueError(f"expected exactly two strata, got {len(data)}")
    a, b = data.samples
    p_a, p_b = (p, p) if np.ndim(p) == 0 else (float(p[0]), float(p[1]))
    total = data.n_total
    separate = a.n_total / total * stratum_contrast(a, p_a) + b.n_total / total * stratum_contrast(b, p_b)
    pooled = collapse_dataset(data, {a.label: "pooled", b.label: "pooled"}).samples[0]
    p_pooled = p_a if p_a == p_b else (a.n_total * p_a + b.n_total * p_b) / total
    return abs(separate - stratum_contrast(pooled, p_pooled))
