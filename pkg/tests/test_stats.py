import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy import integrate, stats as sps

from phaseprobe.stats import (binomial_ci, boxplot_stats, kde, mann_whitney_u, rankdata,
                              silverman_bandwidth, spearman_rho)

reals = st.floats(-1e3, 1e3, allow_nan=False)
samples = st.lists(reals, min_size=1, max_size=30)


def brute_force_p(a, b):
    """Two-sided exact p by enumerating every relabelling of the pooled sample."""
    pooled = list(a) + list(b)
    m, n = len(a), len(b)
    u_obs = sum((x > y) + 0.5 * (x == y) for x in a for y in b)
    extreme = total = 0
    for idx in itertools.combinations(range(m + n), m):
        s = set(idx)
        aa = [pooled[i] for i in idx]
        bb = [pooled[i] for i in range(m + n) if i not in s]
        u = sum((x > y) + 0.5 * (x == y) for x in aa for y in bb)
        total += 1
        extreme += abs(2 * u - m * n) >= abs(2 * u_obs - m * n) - 1e-9
    return extreme / total


@given(st.lists(reals, max_size=40))
def test_rankdata_matches_scipy(x):
    np.testing.assert_array_equal(rankdata(x), sps.rankdata(x))


def test_u_examples():
    r = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert r.U == 0 and r.method == "exact"
    assert r.p == pytest.approx(0.1, abs=1e-15)
    assert r.z < 0
    r = mann_whitney_u([5], [5])
    assert r.z == 0 and r.p == 1


@given(st.lists(st.integers(-50, 50), min_size=1, max_size=6, unique=True).flatmap(
    lambda v: st.tuples(st.just(v), st.integers(0, len(v)))))
def test_exact_p_matches_enumeration(case):
    values, cut = case
    a, b = values[:cut], values[cut:]
    if not a or not b:
        return
    r = mann_whitney_u(a, b)
    assert r.method == "exact"
    assert r.p == brute_force_p(a, b)


@given(st.lists(st.integers(0, 8), min_size=8, max_size=40), st.lists(st.integers(0, 8), min_size=8, max_size=40))
def test_normal_approximation_matches_scipy(a, b):
    r = mann_whitney_u(a, b)
    ref = sps.mannwhitneyu(a, b, use_continuity=True, alternative="two-sided", method="asymptotic")
    assert r.U == ref.statistic
    assert r.p == pytest.approx(ref.pvalue, rel=1e-9, abs=1e-12)


@given(samples, samples)
def test_u_antisymmetry(a, b):
    ab, ba = mann_whitney_u(a, b), mann_whitney_u(b, a)
    assert ab.U + ba.U == len(a) * len(b)
    assert ab.z == -ba.z
    assert ab.p == pytest.approx(ba.p, abs=1e-12)
    assert 0 <= ab.U <= len(a) * len(b) and 0 <= ab.p <= 1


ints = st.lists(st.integers(-1000, 1000), min_size=1, max_size=15)


@given(ints, ints)
def test_u_rank_invariant(a, b):
    f = lambda v: [x ** 3 + 7 * x - 2 for x in v]
    r1, r2 = mann_whitney_u(a, b), mann_whitney_u(f(a), f(b))
    assert (r1.U, r1.p) == pytest.approx((r2.U, r2.p))


def test_u_empty_rejected():
    with pytest.raises(ValueError):
        mann_whitney_u([], [1.0])


@pytest.mark.slow
def test_u_null_calibration():
    rng = np.random.default_rng(123)
    hits = sum(mann_whitney_u(rng.normal(size=200), rng.normal(size=200)).p < 0.05 for _ in range(1000))
    assert abs(hits / 1000 - 0.05) <= 0.02


def test_kde_examples():
    assert kde([0.0], 1.0)(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)
    k = kde([-1.0, 1.0], 0.5)
    x = np.linspace(0, 4, 41)
    np.testing.assert_allclose(k(x), k(-x), atol=1e-12)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=25), st.floats(0.05, 5))
def test_kde_unit_mass(xs, h):
    k = kde(xs, h)
    lo, hi = min(xs) - 10 * h, max(xs) + 10 * h
    pts = sorted(set(xs))
    mass, _ = integrate.quad(k, lo, hi, points=pts if len(pts) < 50 else None, limit=500,
                             epsabs=1e-10, epsrel=1e-10)
    assert abs(mass - 1) <= 1e-6


grid_vals = st.integers(-100_000, 100_000).map(lambda i: i / 1000)


@given(st.lists(grid_vals, min_size=2, max_size=25), st.integers(-400, 400).map(lambda i: i / 8))
def test_kde_translation_equivariant(xs, c):
    assume(np.std(xs) > 1e-3)
    k1, k2 = kde(xs), kde([x + c for x in xs])
    assert k1.bandwidth == pytest.approx(k2.bandwidth, rel=1e-6, abs=1e-9)
    grid = np.linspace(min(xs) - 3, max(xs) + 3, 17)
    np.testing.assert_allclose(k1(grid), kde([x + c for x in xs], k1.bandwidth)(grid + c), rtol=1e-6, atol=1e-12)


def test_silverman_rule():
    x = np.random.default_rng(0).normal(size=500)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    want = 0.9 * min(x.std(ddof=1), iqr / 1.34) * 500 ** -0.2
    assert silverman_bandwidth(x) == pytest.approx(want, rel=1e-12)


def test_zero_spread_fallback(caplog):
    k = kde([2.0, 2.0, 2.0])
    assert k.bandwidth == pytest.approx(2e-3 + 1e-12)
    assert "fall" in caplog.text.lower()


def test_boxplot_examples():
    b = boxplot_stats([1, 2, 3, 4, 5])
    assert (b.median, b.q1, b.q3, b.whisker_low, b.whisker_high) == (3, 2, 4, 1, 5)
    b = boxplot_stats([7])
    assert (b.median, b.q1, b.q3, b.whisker_low, b.whisker_high, b.outliers) == (7, 7, 7, 7, 7, [])
    b = boxplot_stats([1, 2, 3, 4, 100])
    assert b.outliers == [100] and b.whisker_high == 4


@given(samples, st.randoms(use_true_random=False))
def test_boxplot_invariants(xs, rnd):
    b = boxplot_stats(xs)
    assert b.q1 <= b.median <= b.q3
    assert min(xs) <= b.whisker_low <= b.whisker_high <= max(xs)
    ys = list(xs)
    rnd.shuffle(ys)
    assert boxplot_stats(ys) == b


def test_binomial_ci_examples():
    assert binomial_ci(0, 10)[0] == 0
    assert binomial_ci(10, 10)[1] == 1
    lo, hi = binomial_ci(38, 1000)
    assert lo < 0.038 < hi
    cp_lo = sps.beta.ppf(0.025, 38, 963)
    cp_hi = sps.beta.ppf(0.975, 39, 962)
    assert abs((hi - lo) - (cp_hi - cp_lo)) < 0.01


@given(st.integers(1, 2000).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
def test_binomial_ci_contains_estimate(kn):
    k, n = kn
    lo, hi = binomial_ci(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def test_binomial_ci_rejects_bad_counts():
    with pytest.raises(ValueError):
        binomial_ci(3, 2)


@given(st.lists(st.tuples(reals, reals), min_size=2, max_size=30))
def test_spearman_matches_scipy(xy):
    x, y = zip(*xy)
    rho, tied = spearman_rho(x, y)
    if tied:
        assert rho == 0.0
        return
    assert rho == pytest.approx(sps.spearmanr(x, y).statistic, abs=1e-9)
