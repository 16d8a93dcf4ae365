import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipwstrata import (
    PopulationSpec,
    StratumSpec,
    WeightingScheme,
    aggregate_variance,
    appendix_polynomial_chain,
    collapsed_group_moments,
    collapsed_pair_gap,
    neg_moment,
    neg_moment_bruteforce,
    neg_moment_c1,
    neg_moment_c2,
    stratum_variances,
    variance_difference,
)

from .conftest import populations, strata_specs


def exact_neg_moment(c, n, p):
    """Rational-arithmetic E[1/(c + A)], A ~ Bin(n, p)."""
    p = Fraction(p)
    q = 1 - p
    return sum(math.comb(n, a) * p**a * q ** (n - a) / (c + a) for a in range(n + 1))


def enumerated_stratum(s):
    """Mean/variance of both stratum contrasts by enumerating the treated count."""
    n = s.n_total - 2
    a = np.arange(n + 1)
    pmf = np.array([math.comb(n, k) * s.p**k * (1 - s.p) ** (n - k) for k in a])
    n1 = 1 + a
    n0 = s.n_total - n1
    big_n = s.n_total
    # true-PS contrast is S1/(N p) - S0/(N q)
    m_true = n1 * s.mu1 / (big_n * s.p) - n0 * s.mu0 / (big_n * (1 - s.p))
    v_true = n1 * s.var1 / (big_n * s.p) ** 2 + n0 * s.var0 / (big_n * (1 - s.p)) ** 2
    mean_true = pmf @ m_true
    var_true = pmf @ (m_true - mean_true) ** 2 + pmf @ v_true
    var_est = pmf @ (s.var1 / n1 + s.var0 / n0)
    return mean_true, var_true, var_est


class TestNegativeMoments:
    def test_trivial_values(self):
        assert neg_moment_c1(0, 0.5) == 1.0
        assert neg_moment_c1(1, 0.5) == 0.75
        assert neg_moment_c2(0, 0.5) == pytest.approx(0.5, rel=1e-15)
        assert neg_moment_c2(1, 0.5) == pytest.approx(0.5 * 0.5 + 0.5 / 3, rel=1e-15)
        assert neg_moment_bruteforce(1, 0, 0.3) == 1.0
        assert neg_moment_bruteforce(1, 1, 0.5) == 0.75

    def test_frozen_sums(self):
        # Values from exact rational summation.
        assert neg_moment_bruteforce(2, 4, 0.25) == pytest.approx(2777 / 7680, rel=1e-15)
        assert neg_moment_c2(4, 0.25) == pytest.approx(2777 / 7680, rel=1e-14)
        assert neg_moment_c1(15, 0.3) == pytest.approx(0.20764098061313332, rel=1e-14)
        assert neg_moment_c2(30, 0.3) == pytest.approx(0.09632628857836853, rel=1e-13)

    @pytest.mark.parametrize("n", [0, 1, 2, 5, 13, 40])
    @pytest.mark.parametrize("p", ["1/100", "1/7", "1/2", "9/10", "99/100"])
    def test_against_rational_oracle(self, n, p):
        p = Fraction(p)
        for c, fn in ((1, neg_moment_c1), (2, neg_moment_c2)):
            want = float(exact_neg_moment(c, n, p))
            assert fn(n, float(p)) == pytest.approx(want, rel=1e-12)
            assert neg_moment_bruteforce(c, n, float(p)) == pytest.approx(want, rel=1e-13)

    def test_bruteforce_general_offset(self):
        assert neg_moment_bruteforce(3, 6, 0.4) == pytest.approx(float(exact_neg_moment(3, 6, Fraction(2, 5))), rel=1e-13)
        assert neg_moment(3, 6, 0.4) == neg_moment_bruteforce(3, 6, 0.4)

    def test_ranges(self):
        n = np.arange(0, 201)[:, None]
        p = np.linspace(0.01, 0.99, 99)[None, :]
        c1 = neg_moment_c1(n, p)
        c2 = neg_moment_c2(n, p)
        assert np.all((c1 > 0) & (c1 <= 1))
        assert np.all((c2 > 0) & (c2 <= 0.5))

    def test_large_n_bruteforce(self):
        assert neg_moment_bruteforce(1, 100_000, 0.3) == pytest.approx(neg_moment_c1(100_000, 0.3), rel=1e-12)

    @pytest.mark.parametrize("fn", [neg_moment_c1, neg_moment_c2])
    @pytest.mark.parametrize("n, p", [(-1, 0.5), (3, 0.0), (3, 1.0), (3, 1.2)])
    def test_domain_errors(self, fn, n, p):
        with pytest.raises(ValueError):
            fn(n, p)

    def test_bruteforce_guards(self):
        with pytest.raises(ValueError):
            neg_moment_bruteforce(1, 10**6 + 1, 0.5)
        with pytest.raises(ValueError):
            neg_moment_bruteforce(0, 5, 0.5)


def spec(p=0.5, mu1=0.0, mu0=0.0, var1=4.0, var0=16.0, n_total=17, label="x"):
    return StratumSpec(label, p, mu1, mu0, var1, var0, n_total)


class TestStratumVariances:
    def test_degenerate_outcomes(self):
        sv = stratum_variances(spec(var1=0.0, var0=0.0))
        assert sv.v_true == 0.0 and sv.v_est == 0.0

    def test_right_panel_true_ps_worse(self):
        sv = stratum_variances(spec(mu1=1.0, mu0=3.0))
        assert sv.v_true - sv.v_est > 0

    @settings(max_examples=200, deadline=None)
    @given(strata_specs())
    def test_matches_enumeration(self, s):
        mean_true, var_true, var_est = enumerated_stratum(s)
        sv = stratum_variances(s)
        scale = 1.0 + abs(s.mu1) / s.p + abs(s.mu0) / (1 - s.p)
        assert sv.mean_true == pytest.approx(mean_true, rel=1e-10, abs=1e-12 * scale)
        assert sv.v_true == pytest.approx(var_true, rel=1e-10, abs=1e-12 * scale**2)
        assert sv.v_est == pytest.approx(var_est, rel=1e-10, abs=1e-14)
        assert sv.mean_est == s.mu1 - s.mu0

    @settings(max_examples=100, deadline=None)
    @given(strata_specs(), st.floats(-100, 100), st.floats(-100, 100))
    def test_v_est_ignores_means(self, s, mu1, mu0):
        assert stratum_variances(replace(s, mu1=mu1, mu0=mu0)).v_est == stratum_variances(s).v_est

    def test_v_true_grows_with_shift(self):
        base = spec(p=0.3, mu1=1.0, mu0=3.0)
        values = [stratum_variances(replace(base, mu1=base.mu1 + d, mu0=base.mu0 + d)).v_true for d in (10, 100, 1000)]
        assert values[0] < values[1] < values[2]

    def test_two_unit_cell(self):
        sv = stratum_variances(spec(n_total=2, mu1=5.0))
        assert sv.v_est == pytest.approx(4.0 + 16.0)
        assert sv.v_true == pytest.approx(4.0 / (4 * 0.25) + 16.0 / (4 * 0.25))

    def test_invalid(self):
        with pytest.raises(ValueError):
            stratum_variances(spec(p=1.0))


class TestVarianceDifference:
    def test_zero(self):
        pop = PopulationSpec([spec(var1=0.0, var0=0.0, label="a"), spec(p=0.2, var1=0.0, var0=0.0, label="b")])
        assert variance_difference(pop).total == 0.0

    @settings(max_examples=200, deadline=None)
    @given(populations())
    def test_equals_per_stratum_sum(self, pop):
        got = variance_difference(pop)
        want = math.fsum(stratum_variances(s).difference for s in pop.strata)
        scale = math.fsum(stratum_variances(s).v_true + stratum_variances(s).v_est for s in pop.strata)
        assert abs(got.total - want) <= 1e-12 * max(scale, 1e-300) + 1e-300
        for row, s in zip(got.per_stratum, pop.strata):
            sv = stratum_variances(s)
            assert row.total == pytest.approx(sv.difference, rel=1e-12, abs=1e-12 * (sv.v_true + sv.v_est))

    def test_left_panel_changes_sign(self):
        diffs = [variance_difference(PopulationSpec([spec(p=i / 50)])).total for i in range(1, 50)]
        assert min(diffs) < 0 < max(diffs)

    def test_right_panel_positive(self):
        diffs = [variance_difference(PopulationSpec([spec(p=i / 50, mu1=1.0, mu0=3.0)])).total for i in range(1, 50)]
        assert min(diffs) > 0


class TestAggregateVariance:
    def test_single_stratum(self):
        s = spec(mu1=1.0)
        pop = PopulationSpec([s])
        sv = stratum_variances(s)
        assert aggregate_variance(pop, "true") == sv.v_true
        assert aggregate_variance(pop, "estimated") == sv.v_est
        assert aggregate_variance(pop, "hybrid") == sv.v_est

    def test_weights(self):
        a, b = spec(label="a", n_total=10), spec(label="b", p=0.3, n_total=30)
        pop = PopulationSpec([a, b])
        want = (10 / 40) ** 2 * stratum_variances(a).v_est + (30 / 40) ** 2 * stratum_variances(b).v_est
        assert aggregate_variance(pop, WeightingScheme.ESTIMATED) == pytest.approx(want, rel=1e-15)

    @pytest.mark.parametrize("p", [0.05, 0.2, 0.5, 0.8, 0.95])
    def test_hybrid_smaller_for_identical_strata(self, p):
        pop = PopulationSpec([spec(p=p, label="a"), spec(p=p, label="b")])
        est = aggregate_variance(pop, "estimated")
        hyb = aggregate_variance(pop, "hybrid")
        assert hyb < est
        # Uncollapsed minus collapsed reduces to the per-arm merge gaps.
        gap = 4.0 * collapsed_pair_gap(15, p) + 16.0 * collapsed_pair_gap(15, 1 - p)
        assert est - hyb == pytest.approx(gap, rel=1e-9)

    def test_hybrid_equals_estimated_when_nothing_collapses(self):
        pop = PopulationSpec([spec(p=0.3, label="a"), spec(p=0.7, label="b", mu1=2.0, var1=1.0)])
        assert aggregate_variance(pop, "hybrid") == aggregate_variance(pop, "estimated")

    def test_three_identical_strata_use_offset_three(self):
        pop = PopulationSpec([spec(p=0.4, label=c, n_total=6) for c in "abc"])
        want = 4.0 * neg_moment_bruteforce(3, 12, 0.4) + 16.0 * neg_moment_bruteforce(3, 12, 0.6)
        assert aggregate_variance(pop, "hybrid") == pytest.approx(want, rel=1e-13)
        assert collapsed_group_moments(pop.strata)[1] == pytest.approx(want, rel=1e-12)


class TestCollapsedGroupMoments:
    def test_single_member_matches_stratum(self):
        s = spec(p=0.35, mu1=1.0, mu0=-2.0)
        mean, var = collapsed_group_moments([s])
        assert mean == pytest.approx(s.mu1 - s.mu0, rel=1e-13)
        assert var == pytest.approx(stratum_variances(s).v_est, rel=1e-12)

    @pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
    def test_identical_pair_matches_closed_form(self, p):
        a = spec(p=p, label="a")
        _, var = collapsed_group_moments([a, replace(a, label="b")])
        assert var == pytest.approx(4.0 * neg_moment_c2(30, p) + 16.0 * neg_moment_c2(30, 1 - p), rel=1e-12)

    def test_heterogeneous_means_add_variance(self):
        a = spec(p=0.4, label="a", mu1=0.0)
        b = spec(p=0.4, label="b", mu1=5.0)
        _, hom = collapsed_group_moments([a, replace(b, mu1=0.0)])
        _, het = collapsed_group_moments([a, b])
        assert het > hom

    def test_guards(self):
        with pytest.raises(ValueError):
            collapsed_group_moments([spec(p=0.4, label="a"), spec(p=0.5, label="b")])
        big = [spec(p=0.4, label=str(i), n_total=200) for i in range(3)]
        with pytest.raises(ValueError):
            collapsed_group_moments(big)


class TestCollapsedPairGap:
    def test_double_enumeration(self):
        # Exact rational double sum over (A, B) in {0..15}^2.
        assert collapsed_pair_gap(15, 0.5) == pytest.approx(2146467839 / 1065151889408, rel=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 7, 50, 200])
    @pytest.mark.parametrize("p", [0.005, 0.1, 0.5, 0.77, 0.995])
    def test_definition(self, n, p):
        want = neg_moment_c1(n, p) / 2 - neg_moment_c2(2 * n, p)
        assert collapsed_pair_gap(n, p) == pytest.approx(want, rel=1e-12, abs=0)

    @pytest.mark.parametrize("n", [1, 3, 10, 100])
    def test_numerator_form(self, n):
        # gap = q * g1 / (2 (n+1) (2n+1) p^2)
        p = np.linspace(0.05, 0.95, 19)
        g1 = appendix_polynomial_chain(n, p).g1
        want = (1 - p) * g1 / (2 * (n + 1) * (2 * n + 1) * p**2)
        np.testing.assert_allclose(collapsed_pair_gap(n, p), want, rtol=1e-8, atol=1e-15)

    @pytest.mark.parametrize("n", [1, 10, 200])
    def test_vanishes_at_endpoints(self, n):
        assert collapsed_pair_gap(n, 0.001) >= -1e-15
        assert collapsed_pair_gap(n, 0.999) >= -1e-15
        towards_zero = [collapsed_pair_gap(n, 10.0**-k) for k in range(3, 8)]
        towards_one = [collapsed_pair_gap(n, 1 - 10.0**-k) for k in range(3, 8)]
        assert all(a > b >= 0 for a, b in zip(towards_zero, towards_zero[1:]))
        assert all(a > b >= 0 for a, b in zip(towards_one, towards_one[1:]))
        assert towards_zero[-1] < 1e-4 and towards_one[-1] < 1e-4

    def test_requires_n_at_least_one(self):
        with pytest.raises(ValueError):
            collapsed_pair_gap(0, 0.5)


class TestAppendixChain:
    @pytest.mark.parametrize("n", [1, 2, 5, 30, 200])
    def test_endpoints(self, n):
        at0 = appendix_polynomial_chain(n, 0.0)
        at1 = appendix_polynomial_chain(n, 1.0)
        assert at0.g1 == 0.0
        assert at1.g1 == 1.0
        assert at0.g2 == 0.0
        assert at1.g2 == n

    @pytest.mark.parametrize("n", [1, 2, 4, 17, 60])
    def test_derivative_chain(self, n):
        # Central differences: d g1/dp = (2n+1) q^(n-1) g2 and d g2/dp = g3.
        p = np.linspace(0.02, 0.98, 49)
        h = 1e-6
        up = appendix_polynomial_chain(n, p + h)
        down = appendix_polynomial_chain(n, p - h)
        mid = appendix_polynomial_chain(n, p)
        d_g1 = (up.g1 - down.g1) / (2 * h)
        d_g2 = (up.g2 - down.g2) / (2 * h)
        np.testing.assert_allclose(d_g1, (2 * n + 1) * (1 - p) ** (n - 1) * mid.g2, rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(d_g2, mid.g3, rtol=1e-5, atol=1e-7)

    def test_signs_on_grid(self):
        n = np.arange(1, 201)[:, None]
        p = np.linspace(0, 1, 401)[None, :]
        chain = appendix_polynomial_chain(n, p)
        assert np.all(chain.g3 >= 0)
        assert np.all(chain.g1 >= -1e-12)
        assert np.all(np.diff(chain.g2, axis=1) >= -1e-12)
