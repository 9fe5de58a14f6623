import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cylwalk.stats import (bonferroni, chi2_two_sample, chi2_uniform, hoeffding_halfwidth, mean_and_se,
                           nondecreasing_gate, nonincreasing_gate, permutation_test, tv_debiased,
                           tv_from_uniform, tv_noise_floor)


def test_hoeffding_coverage():
    rng = np.random.default_rng(1)
    w = hoeffding_halfwidth(200, 0.9)
    means = rng.integers(0, 2, size=(5000, 200)).mean(axis=1)
    # conservative: miss rate well below 10%
    assert (abs(means - 0.5) > w).mean() < 0.1
    assert hoeffding_halfwidth(0) == math.inf
    assert hoeffding_halfwidth(100, span=2) == pytest.approx(2 * hoeffding_halfwidth(100))


def test_mean_and_se():
    m, se = mean_and_se([1, 2, 3, 4])
    assert m == 2.5 and se == pytest.approx(np.std([1, 2, 3, 4], ddof=1) / 2)
    assert mean_and_se([1])[1] == math.inf


def test_tv_noise_floor_matches_simulation():
    rng = np.random.default_rng(2)
    k, n = 16, 2000
    tvs = [tv_from_uniform(np.bincount(rng.integers(0, k, n), minlength=k)) for _ in range(2000)]
    assert np.mean(tvs) == pytest.approx(tv_noise_floor(k, n), rel=0.05)


def test_tv_examples():
    assert tv_from_uniform([5, 5]) == 0
    assert tv_from_uniform([10, 0]) == 0.5
    assert tv_debiased([50, 50]) == 0
    assert math.isnan(tv_from_uniform([0, 0]))


@given(st.lists(st.integers(0, 50), min_size=2, max_size=20))
def test_tv_bounds(counts):
    if sum(counts):
        t = tv_from_uniform(counts)
        assert 0 <= t <= 1 - 1 / len(counts) + 1e-12
        assert 0 <= tv_debiased(counts) <= t


def test_chi2_calibration():
    rng = np.random.default_rng(3)
    ps = [chi2_two_sample(rng.poisson(3, 300), rng.poisson(3, 300))[1] for _ in range(300)]
    assert 0.02 < np.mean(np.array(ps) < 0.05) < 0.1
    assert chi2_two_sample(rng.poisson(3, 2000), rng.poisson(3.5, 2000))[1] < 1e-3
    assert chi2_uniform([100, 100, 100])[1] == pytest.approx(1.0)


def test_trend_gates():
    assert nonincreasing_gate([3, 2, 2.1], [0.1, 0.1, 0.1]).passed
    g = nonincreasing_gate([3, 2, 2.5], [0.1, 0.1, 0.1])
    assert not g.passed and g.violations == [1]
    assert nondecreasing_gate([1, 2, 1.95], [0.1] * 3).passed
    assert not nondecreasing_gate([1, 2, 1.5], [0.1] * 3).passed


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8))
def test_trend_gate_accepts_monotone(v):
    assert nonincreasing_gate(sorted(v, reverse=True), [0] * len(v)).passed
    assert nondecreasing_gate(sorted(v), [0] * len(v)).passed


def diff_means(x, g):
    return x[g == 1].mean() - x[g == 0].mean()


def test_permutation_test():
    rng = np.random.default_rng(4)
    x = np.r_[rng.normal(0, 1, 100), rng.normal(1, 1, 100)]
    g = np.r_[np.zeros(100, int), np.ones(100, int)]
    assert permutation_test(x, g, diff_means, 500, rng) < 0.01
    null = np.r_[rng.normal(0, 1, 200)]
    assert permutation_test(null, g, diff_means, 200, rng) > 1e-3


def test_permutation_strata_hold_group_sizes():
    # with one-label strata nothing can move, so p is 1
    rng = np.random.default_rng(5)
    x = rng.normal(size=20)
    g = np.r_[np.zeros(10, int), np.ones(10, int)]
    assert permutation_test(x, g, diff_means, 50, rng, strata=g) == 1.0


def test_bonferroni():
    assert bonferroni(0.01, 4) == 0.0025 and bonferroni(0.01, 0) == 0.01
