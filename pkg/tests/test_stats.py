import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chbell.stats import (
    METHODS,
    CountTable,
    UndefinedEstimateError,
    j_estimate,
    j_standard_error,
    log_binom_cdf,
    log_binom_sf,
    pvalue,
    pvalue_from_counts,
    sigma_equivalent,
    win_bound,
)

from oracles import exact_binom_sf, log_of_fraction

# q values: fair, the baseline epsilon, and two clearly biased ones
Q_VALUES = [Fraction(1, 2), Fraction(1, 2) + 2 * Fraction(24, 100000), Fraction(3, 5), Fraction(9, 10)]


def _table(**cells):
    counts = np.zeros((2, 2, 4), dtype=np.int64)
    names = {"++": 0, "+0": 1, "0+": 2, "00": 3}
    for key, n in cells.items():
        pair, outcome = key.split("_")
        i, j = int(pair[1]) - 1, int(pair[3]) - 1
        counts[i, j, names[{"pp": "++", "p0": "+0", "0p": "0+", "00": "00"}[outcome]]] = n
    return CountTable(counts)


def _mp_log_sf(k, n, q, terms=4000):
    mpmath.mp.dps = 50
    q = mpmath.mpf(q)
    head = (mpmath.loggamma(n + 1) - mpmath.loggamma(k + 1) - mpmath.loggamma(n - k + 1)
            + k * mpmath.log(q) + (n - k) * mpmath.log(1 - q))
    total, term = mpmath.mpf(1), mpmath.mpf(1)
    for j in range(min(terms, n - k)):
        term *= mpmath.mpf(n - k - j) / (k + j + 1) * q / (1 - q)
        total += term
    return float(head + mpmath.log(total))


# --- count tables --------------------------------------------------------------------

def test_count_table_basics():
    t = _table(a1b1_pp=3, a1b1_00=7, a1b2_p0=2, a2b1_0p=1, a2b2_pp=4, a2b2_00=1)
    assert t.wins == 3 and t.losses == 7 and t.total == 18
    assert t.n(1, 1, "++") == 3
    assert CountTable.from_dict(t.to_dict()) == t
    assert (t + t).total == 36
    with pytest.raises(ValueError):
        CountTable(-np.ones((2, 2, 4)))
    with pytest.raises(ValueError):
        CountTable(np.zeros((2, 4)))


def test_from_trials_matches_manual_count():
    rng = np.random.default_rng(1)
    sa, sb = rng.integers(1, 3, 1000), rng.integers(1, 3, 1000)
    oa, ob = rng.random(1000) < 0.3, rng.random(1000) < 0.4
    t = CountTable.from_trials(sa, sb, oa, ob)
    assert t.n(2, 1, "0+") == int(np.sum((sa == 2) & (sb == 1) & ~oa & ob))
    assert t.n(1, 2, "++") == int(np.sum((sa == 1) & (sb == 2) & oa & ob))
    assert t.total == 1000


# --- J estimate ----------------------------------------------------------------------

def test_j_estimate_examples():
    t = _table(a1b1_pp=1, a1b1_00=9, a1b2_00=10, a2b1_00=10, a2b2_00=10)
    assert j_estimate(t) == pytest.approx(0.1, abs=1e-15)
    # "always +" on both sides: p++(a1b1) = p++(a2b2) = 1 and the other terms vanish
    always = _table(a1b1_pp=25, a1b2_pp=25, a2b1_pp=25, a2b2_pp=25)
    assert j_estimate(always) == 0.0


def test_j_estimate_undefined():
    with pytest.raises(UndefinedEstimateError):
        j_estimate(_table(a1b1_pp=1, a1b2_00=1, a2b1_00=1))


def test_j_standard_error_binomial():
    t = _table(a1b1_pp=10, a1b1_00=90, a1b2_00=100, a2b1_00=100, a2b2_00=100)
    assert j_standard_error(t) == pytest.approx(math.sqrt(0.1 * 0.9 / 100))


# --- log-space binomial tail ----------------------------------------------------------

@pytest.mark.parametrize("q", Q_VALUES)
def test_log_tail_matches_rational_brute_force(q):
    worst = 0.0
    for n in range(0, 31):
        for k in range(0, n + 1):
            exact = log_of_fraction(exact_binom_sf(k, n, q))
            got = log_binom_sf(k, n, float(q))
            if exact == 0.0:
                assert abs(got) <= 1e-15
            else:
                worst = max(worst, abs(got - exact) / abs(exact))
    assert worst <= 1e-12


def test_log_tail_edges():
    assert log_binom_sf(0, 10, 0.3) == 0.0
    assert log_binom_sf(11, 10, 0.3) == -math.inf
    assert log_binom_sf(3, 10, 0.0) == -math.inf
    assert log_binom_sf(3, 10, 1.0) == 0.0
    assert log_binom_sf(10, 10, 0.5) == pytest.approx(10 * math.log(0.5), rel=1e-14)
    with pytest.raises(ValueError):
        log_binom_sf(1, 10, 1.5)


@pytest.mark.parametrize("k,n,q", [
    (3000, 5000, 0.5),        # betainc path
    (60000, 100000, 0.5),     # deep tail, series path
    (600000, 1000000, 0.5),
    (510000, 1000000, 0.50048),
    (2600, 5000, 0.5),        # moderate tail
])
def test_log_tail_large_n_against_mpmath(k, n, q):
    assert log_binom_sf(k, n, q) == pytest.approx(_mp_log_sf(k, n, q), rel=1e-9)


def test_log_tail_upper_half_uses_complement():
    # P[X >= 2400] for X ~ Bin(5000, 0.5) is close to 1
    got = log_binom_sf(2400, 5000, 0.5)
    mpmath.mp.dps = 50
    lower = sum(mpmath.binomial(5000, m) for m in range(2400)) / mpmath.mpf(2) ** 5000
    assert got == pytest.approx(float(mpmath.log1p(-lower)), rel=1e-9)


def test_no_underflow_at_1e12():
    n = 10 ** 12
    value = log_binom_sf(n // 2 + 10 ** 8, n, 0.5)
    assert math.isfinite(value) and value < -1e4
    assert log_binom_sf(n, n, 0.5) == pytest.approx(n * math.log(0.5), rel=1e-12)


def test_log_cdf_symmetry():
    for k, n, q in [(3, 10, Fraction(3, 10)), (10, 30, Fraction(1, 2)), (400, 2500, Fraction(1, 5))]:
        direct = log_of_fraction(1 - exact_binom_sf(k + 1, n, q))
        assert log_binom_cdf(k, n, float(q)) == pytest.approx(direct, rel=1e-12)


# --- p-values ------------------------------------------------------------------------

def test_win_bound():
    assert win_bound(0.0) == 0.5
    assert win_bound(2.4e-4) == pytest.approx(0.50048)
    # conservative against the exact two-sided composition
    for eps in (1e-4, 0.01, 0.1, 0.2):
        exact = (0.5 + eps) ** 2 / ((0.5 + eps) ** 2 + (0.5 - eps) ** 2)
        assert win_bound(eps) >= exact
    with pytest.raises(ValueError):
        win_bound(0.5)
    with pytest.raises(ValueError):
        win_bound(-0.1)


def test_binomial_tail_examples():
    assert pvalue_from_counts(2, 0, 0.0, "binomial_tail").p == pytest.approx(0.25, abs=1e-15)
    for method in METHODS:
        assert pvalue_from_counts(0, 0, 0.01, method, n_trials=100).log10_p == 0.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0, 0.2), st.sampled_from(METHODS))
def test_balanced_counts_not_significant(k, eps, method):
    assert pvalue_from_counts(k, k, eps, method, n_trials=4 * k + 1).p >= 0.5


def test_mixture_matches_numerical_integral():
    mpmath.mp.dps = 30
    for K, L, eps in [(5, 1, 0.0), (30, 10, 0.01), (200, 150, 2.4e-4), (3, 7, 0.0)]:
        q = win_bound(eps)
        integral = mpmath.quad(
            lambda p: (p / q) ** K * ((1 - p) / (1 - q)) ** L, [q, (K / (K + L) if K + L else 1), 1])
        m = (2 * q - 1) + 2 * integral
        want = min(0.0, -float(mpmath.log10(m)))
        got = pvalue_from_counts(K, L, eps, "binomial_supermartingale").log10_p
        assert got == pytest.approx(want, abs=1e-9)


def test_azuma_formula():
    r = pvalue_from_counts(600, 400, 0.0, "azuma", n_trials=4000)
    excess = 0.5 * 600 - 0.5 * 400
    assert r.log10_p == pytest.approx(-2 * excess ** 2 / 4000 / math.log(10))
    with pytest.raises(ValueError):
        pvalue_from_counts(600, 400, 0.0, "azuma")


def test_methods_ordering_on_strong_data():
    # Azuma ignores that events are rare; the conditional tail is the most aggressive
    res = {m: pvalue_from_counts(6000, 4000, 2.4e-4, m, n_trials=10 ** 6).log10_p for m in METHODS}
    assert res["binomial_tail"] < res["binomial_supermartingale"] < res["azuma"] < 0


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 5000), st.integers(0, 5000), st.floats(0, 0.1), st.sampled_from(METHODS))
def test_monotone_in_wins(K, L, eps, method):
    n = 10 * (K + L) + 10
    p0 = pvalue_from_counts(K, L, eps, method, n_trials=n).log10_p
    p1 = pvalue_from_counts(K + 1, L, eps, method, n_trials=n).log10_p
    assert p1 <= p0 + 1e-12
    assert p0 <= 0.0


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 5000), st.integers(0, 5000), st.floats(0, 0.1), st.floats(0, 0.1),
       st.sampled_from(METHODS))
def test_monotone_in_epsilon(K, L, e1, e2, method):
    lo, hi = sorted((e1, e2))
    n = 10 * (K + L) + 10
    assert (pvalue_from_counts(K, L, lo, method, n_trials=n).log10_p
            <= pvalue_from_counts(K, L, hi, method, n_trials=n).log10_p + 1e-12)


def test_pvalue_on_table_and_unknown_method():
    t = _table(a1b1_pp=30, a1b1_00=70, a1b2_p0=5, a1b2_00=95, a2b1_0p=5, a2b1_00=95, a2b2_00=100)
    r = pvalue(t, 0.0)
    assert (r.K, r.L, r.n_trials, r.method) == (30, 10, 400, "binomial_supermartingale")
    with pytest.raises(ValueError):
        pvalue(t, 0.0, method="bayes")


def test_no_underflow_pvalue_at_1e12():
    K, L = 5 * 10 ** 11 + 10 ** 8, 5 * 10 ** 11 - 10 ** 8
    for method in METHODS:
        r = pvalue_from_counts(K, L, 2.4e-4, method, n_trials=4 * 10 ** 12)
        assert math.isfinite(r.log10_p) and r.log10_p <= 0


# --- sigma equivalent ----------------------------------------------------------------

def test_sigma_examples():
    assert sigma_equivalent(0.5) == pytest.approx(0.0, abs=1e-15)
    assert sigma_equivalent(0.158655) == pytest.approx(1.0, abs=1e-3)
    assert sigma_equivalent(3.74e-31) == pytest.approx(11.5, abs=0.1)
    assert sigma_equivalent(log10_p=math.log10(3.74e-31)) == pytest.approx(sigma_equivalent(3.74e-31))


@pytest.mark.parametrize("z", [0.5, 3.0, 8.0, 11.5, 20.0, 37.0])
def test_sigma_inverts_gaussian_tail(z):
    mpmath.mp.dps = 50
    log10_p = float(mpmath.log10(mpmath.erfc(z / mpmath.sqrt(2)) / 2))
    assert sigma_equivalent(log10_p=log10_p) == pytest.approx(z, abs=1e-6)


def test_sigma_beyond_float_range():
    # z = 40 corresponds to p ~ 1e-350, below the smallest double
    mpmath.mp.dps = 50
    log10_p = float(mpmath.log10(mpmath.erfc(40 / mpmath.sqrt(2)) / 2))
    assert sigma_equivalent(log10_p=log10_p) == pytest.approx(40.0, abs=1e-3)


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
def test_sigma_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        sigma_equivalent(bad)


def test_sigma_argument_errors():
    with pytest.raises(ValueError):
        sigma_equivalent()
    with pytest.raises(ValueError):
        sigma_equivalent(0.1, log10_p=-1)
    with pytest.raises(ValueError):
        sigma_equivalent(log10_p=0.5)
