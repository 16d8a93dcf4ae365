"""Exact finite-sample moments of the stratified IPW estimators.

Under the forced-pair design the treated count of a cell of size N is
``1 + A`` with ``A ~ Bin(N - 2, p)``. All variances below follow from the law
of total variance conditional on the counts, plus the negative moments
``E[1/(c + A)]`` for ``c`` in {1, 2}.

Closed forms are evaluated with ``1 - q**k`` computed as
``-expm1(k * log1p(-p))``. For ``p >= 0.005`` they agree with exact
summation to about 1e-13 relative; for much smaller ``p`` the ``c = 2`` form
loses digits to cancellation (roughly ``1e-16 / p``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .strata import (
    PopulationSpec,
    StratumSpec,
    WeightingScheme,
    collapse_by_propensity,
    require_valid,
)

__all__ = [
    "BRUTEFORCE_MAX_N",
    "ENUMERATION_MAX_POINTS",
    "neg_moment_c1",
    "neg_moment_c2",
    "neg_moment_bruteforce",
    "neg_moment",
    "StratumVariances",
    "stratum_variances",
    "StratumDifference",
    "VarianceDifference",
    "variance_difference",
    "collapsed_group_moments",
    "aggregate_variance",
    "collapsed_pair_gap",
    "AppendixChain",
    "appendix_polynomial_chain",
]

BRUTEFORCE_MAX_N = 10**6
ENUMERATION_MAX_POINTS = 10**6


def _check_np(n, p):
    n_arr = np.asarray(n)
    p_arr = np.asarray(p, dtype=float)
    if np.any(n_arr < 0):
        raise ValueError(f"trial count must be >= 0, got {n!r}")
    if not np.all((p_arr > 0.0) & (p_arr < 1.0)):
        raise ValueError(f"success probability must lie in (0, 1), got {p!r}")
    return n_arr, p_arr


def _one_minus_q_pow(k, p):
    """1 - (1 - p)**k without cancellation for small p."""
    return -np.expm1(k * np.log1p(-p))


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def _scalar_args(n, p) -> bool:
    return np.ndim(n) == 0 and np.ndim(p) == 0


def _check_scalar(n, p) -> None:
    if n < 0:
        raise ValueError(f"trial count must be >= 0, got {n!r}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"success probability must lie in (0, 1), got {p!r}")


def neg_moment_c1(n, p):
    """E[1/(1 + A)] for A ~ Bin(n, p).

    Accepts scalars or broadcastable arrays.
    """
    if _scalar_args(n, p):
        _check_scalar(n, p)
        n1 = n + 1.0
        # Clip rounding above the exact upper bound (attained at n = 0).
        return min(-math.expm1(n1 * math.log1p(-p)) / (n1 * p), 1.0)
    n, p = _check_np(n, p)
    n1 = n + 1.0
    return _scalar_or_array(np.minimum(_one_minus_q_pow(n1, p) / (n1 * p), 1.0))


def neg_moment_c2(m, p):
    """E[1/(2 + C)] for C ~ Bin(m, p)."""
    if _scalar_args(m, p):
        _check_scalar(m, p)
        m1, m2 = m + 1.0, m + 2.0
        return min(1.0 / (m1 * p) + math.expm1(m2 * math.log1p(-p)) / (m1 * m2 * p * p), 0.5)
    m, p = _check_np(m, p)
    m1 = m + 1.0
    m2 = m + 2.0
    out = 1.0 / (m1 * p) - _one_minus_q_pow(m2, p) / (m1 * m2 * p * p)
    return _scalar_or_array(np.minimum(out, 0.5))


def neg_moment_bruteforce(c: float, n: int, p: float) -> float:
    """E[1/(c + A)], A ~ Bin(n, p), by summing over the support.

    The pmf is built in log space, so large ``n`` does not underflow the
    binomial coefficients.
    """
    if c < 1:
        raise ValueError(f"offset must be >= 1, got {c!r}")
    n = int(n)
    if n < 0:
        raise ValueError(f"trial count must be >= 0, got {n}")
    if n > BRUTEFORCE_MAX_N:
        raise ValueError(f"trial count {n} exceeds the enumeration guard {BRUTEFORCE_MAX_N}")
    if not 0.0 < p < 1.0:
        raise ValueError(f"success probability must lie in (0, 1), got {p!r}")
    a = np.arange(n + 1, dtype=float)
    logpmf = (
        math.lgamma(n + 1.0)
        - special.gammaln(a + 1.0)
        - special.gammaln(n - a + 1.0)
        + a * math.log(p)
        + (n - a) * math.log1p(-p)
    )
    # All terms are positive; numpy's pairwise sum keeps the error near eps * log2(n).
    return float(np.sum(np.exp(logpmf) / (c + a)))


def neg_moment(c: int, n: int, p: float) -> float:
    """E[1/(c + A)]: closed form for c in {1, 2}, exact summation otherwise."""
    if c == 1:
        return neg_moment_c1(n, p)
    if c == 2:
        return neg_moment_c2(n, p)
    return neg_moment_bruteforce(c, n, p)


@dataclass(frozen=True)
class StratumVariances:
    """Exact mean and variance of the two stratum contrasts.

    ``*_true`` refers to weighting by the true propensity, ``*_est`` to the
    within-cell treated share.
    """

    v_true: float
    v_est: float
    mean_true: float
    mean_est: float

    @property
    def difference(self) -> float:
        return self.v_true - self.v_est


def stratum_variances(s: StratumSpec) -> StratumVariances:
    if not 0.0 < s.p < 1.0:
        raise ValueError(f"stratum {s.label!r}: p={s.p!r} not in (0, 1)")
    if s.n_total < 2:
        raise ValueError(f"stratum {s.label!r}: n_total={s.n_total} < 2")
    p, q, n = s.p, 1.0 - s.p, s.n_free
    big_n = n + 2.0
    quad = (s.mu1 / p + s.mu0 / q) ** 2 * n * p * q / big_n**2
    v_true = quad + s.var1 * (p * n + 1) / (big_n**2 * p * p) + s.var0 * (q * n + 1) / (big_n**2 * q * q)
    v_est = s.var1 * neg_moment_c1(n, p) + s.var0 * neg_moment_c1(n, q)
    mean_true = s.mu1 * (p * n + 1) / (big_n * p) - s.mu0 * (q * n + 1) / (big_n * q)
    return StratumVariances(v_true=v_true, v_est=v_est, mean_true=mean_true, mean_est=s.mu1 - s.mu0)


@dataclass(frozen=True)
class StratumDifference:
    label: str
    quadratic: float
    treated: float
    control: float

    @property
    def total(self) -> float:
        return self.quadratic + self.treated + self.control


@dataclass(frozen=True)
class VarianceDifference:
    total: float
    per_stratum: tuple[StratumDifference, ...]


def variance_difference(pop: PopulationSpec) -> VarianceDifference:
    """Unweighted sum over strata of V(true-PS contrast) - V(estimated-PS contrast).

    Evaluated term by term: the squared-mean term, then the treated and the
    control variance terms. No N_x/N weights are applied; see
    :func:`aggregate_variance` for the variance of the full estimator.
    """
    require_valid(pop)
    rows = []
    for s in pop.strata:
        p, q, n = s.p, 1.0 - s.p, s.n_free
        quadratic = (s.mu1 / p + s.mu0 / q) ** 2 * n * p * q / (n + 2) ** 2
        treated = s.var1 * (
            (p * n + 1) / ((n + 2) ** 2 * p**2) - _one_minus_q_pow(n + 1, p) / ((n + 1) * p)
        )
        control = s.var0 * (
            (q * n + 1) / ((n + 2) ** 2 * q**2) - _one_minus_q_pow(n + 1, q) / ((n + 1) * q)
        )
        rows.append(StratumDifference(s.label, float(quadratic), float(treated), float(control)))
    total = math.fsum(r.quadratic for r in rows) + math.fsum(r.treated for r in rows) + math.fsum(
        r.control for r in rows
    )
    return VarianceDifference(total=total, per_stratum=tuple(rows))


def _homogeneous(members: Sequence[StratumSpec]) -> bool:
    first = members[0]
    return all(
        (m.mu1, m.mu0, m.var1, m.var0) == (first.mu1, first.mu0, first.var1, first.var0) for m in members[1:]
    )


def collapsed_group_moments(members: Sequence[StratumSpec]) -> tuple[float, float]:
    """Exact (mean, variance) of the difference of pooled arm means over merged cells.

    All members must share one propensity. Each member keeps its own forced
    pair and its own outcome moments; the joint distribution of the treated
    counts is enumerated, so the cost is the product of ``n_total - 1`` over
    members (guarded by ``ENUMERATION_MAX_POINTS``).
    """
    p = members[0].p
    if any(m.p != p for m in members):
        raise ValueError("merged cells must share the same propensity")
    size = math.prod(m.n_total - 1 for m in members)
    if size > ENUMERATION_MAX_POINTS:
        raise ValueError(f"joint count space has {size} points, above the guard {ENUMERATION_MAX_POINTS}")
    q = 1.0 - p
    total = sum(m.n_total for m in members)
    # Joint pmf as an outer product of per-member binomial pmfs.
    axes = [np.arange(m.n_total - 1) for m in members]
    grids = np.meshgrid(*axes, indexing="ij")
    prob = np.ones(grids[0].shape)
    for m, a in zip(members, grids):
        prob = prob * np.exp(
            special.gammaln(m.n_free + 1.0)
            - special.gammaln(a + 1.0)
            - special.gammaln(m.n_free - a + 1.0)
            + a * math.log(p)
            + (m.n_free - a) * math.log(q)
        )
    treated = [1 + a for a in grids]
    control = [m.n_total - t for m, t in zip(members, treated)]
    t1 = sum(treated)
    t0 = total - t1
    cond_mean = sum(t * m.mu1 for m, t in zip(members, treated)) / t1 - sum(
        c * m.mu0 for m, c in zip(members, control)
    ) / t0
    cond_var = sum(t * m.var1 for m, t in zip(members, treated)) / t1**2 + sum(
        c * m.var0 for m, c in zip(members, control)
    ) / t0**2
    mean = float(np.sum(prob * cond_mean))
    var = float(np.sum(prob * (cond_mean - mean) ** 2) + np.sum(prob * cond_var))
    return mean, var


def _collapsed_cell_variance(members: Sequence[StratumSpec]) -> float:
    if len(members) == 1:
        return stratum_variances(members[0]).v_est
    if not _homogeneous(members):
        return collapsed_group_moments(members)[1]
    # k forced pairs, the free units of all members pool into one binomial.
    k = len(members)
    free = sum(m.n_free for m in members)
    p, q = members[0].p, 1.0 - members[0].p
    s = members[0]
    return s.var1 * neg_moment(k, free, p) + s.var0 * neg_moment(k, free, q)


def aggregate_variance(pop: PopulationSpec, scheme: "WeightingScheme | str") -> float:
    """Exact variance of the full stratified estimator, sum of (N_x/N)**2 * V_x.

    For the hybrid scheme, cells sharing a true propensity are merged first
    and the merged cell is analysed with the estimated propensity.
    """
    require_valid(pop)
    scheme = WeightingScheme.parse(scheme)
    total = pop.n_total
    if scheme is WeightingScheme.HYBRID:
        _, mapping = collapse_by_propensity(pop)
        groups: dict[str, list[StratumSpec]] = {}
        for s in pop.strata:
            groups.setdefault(mapping[s.label], []).append(s)
        terms = [
            (sum(m.n_total for m in members) / total) ** 2 * _collapsed_cell_variance(members)
            for members in groups.values()
        ]
        return math.fsum(terms)
    attr = "v_true" if scheme is WeightingScheme.TRUE else "v_est"
    return math.fsum((s.n_total / total) ** 2 * getattr(stratum_variances(s), attr) for s in pop.strata)


def collapsed_pair_gap(n, p):
    """E[1/(2(1 + A))] - E[1/(2 + A + B)] for independent A, B ~ Bin(n, p).

    This is the per-unit-variance saving from merging two equal-size cells
    with the same propensity. Accepts broadcastable arrays.
    """
    n_arr = np.asarray(n)
    if np.any(n_arr < 1):
        raise ValueError(f"n must be >= 1, got {n!r}")
    out = np.asarray(neg_moment_c1(n_arr, p)) / 2.0 - np.asarray(neg_moment_c2(2 * n_arr, p))
    return _scalar_or_array(out)


@dataclass(frozen=True)
class AppendixChain:
    g1: float
    g2: float
    g3: float


def appendix_polynomial_chain(n, p) -> AppendixChain:
    """Evaluate the three polynomials whose signs establish the merge gap is nonnegative.

    ``g1`` is the gap numerator divided by ``q``; ``d g1/dp = (2n+1) q**(n-1) g2``
    and ``d g2/dp = g3``. Valid on the closed interval ``0 <= p <= 1``.
    """
    n_arr = np.asarray(n)
    if np.any(n_arr < 1):
        raise ValueError(f"n must be >= 1, got {n!r}")
    p = np.asarray(p, dtype=float)
    q = 1.0 - p
    g1 = (1.0 - q ** (n_arr + 1)) * (q**n_arr + 1.0) - (2 * n_arr + 2) * (1.0 - q) * q**n_arr
    g2 = -(n_arr * (q - 1.0) - q * (q**n_arr - 1.0))
    g3 = (n_arr + 1) * (1.0 - (1.0 - p) ** n_arr)
    return AppendixChain(_scalar_or_array(g1), _scalar_or_array(g2), _scalar_or_array(g3))

