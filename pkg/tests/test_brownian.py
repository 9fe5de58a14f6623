import math

import numpy as np
import pytest
from scipy import integrate, stats as sps

from cylwalk.brownian import (exact_local_time, laplace_half_normal, reference_functional_A,
                              sample_brownian_local_time, srw_local_times)
from cylwalk.stats import binomial_z


def test_local_time_at_zero_mean():
    x = exact_local_time(0.0, 1.0, 400_000, np.random.default_rng(1))
    assert abs(x.mean() - math.sqrt(2 / math.pi)) < 4 * x.std() / math.sqrt(len(x))


@pytest.mark.parametrize("v", [0.5, 3.0])
def test_zero_atom_is_hitting_probability(v):
    # L(v,1) = 0 exactly when level v is not reached: probability 2 Phi(v) - 1
    x = exact_local_time(v, 1.0, 200_000, np.random.default_rng(2))
    p0 = 2 * sps.norm.cdf(v) - 1
    assert abs(binomial_z(int((x == 0).sum()), len(x), p0)) < 4


def test_brownian_scaling():
    # L(0, 4) has the law of 2 L(0, 1)
    a = exact_local_time(0.0, 4.0, 20_000, np.random.default_rng(3))
    b = 2 * exact_local_time(0.0, 1.0, 20_000, np.random.default_rng(4))
    assert sps.ks_2samp(a, b).pvalue > 0.001


@pytest.mark.parametrize("v", [0.0, 0.5])
def test_srw_matches_exact(v):
    srw = sample_brownian_local_time(v, 1.0, 4000, seed=5, mode="srw", m=10**4).values
    ex = sample_brownian_local_time(v, 1.0, 40_000, seed=6).values
    assert sps.ks_2samp(srw, ex).pvalue > 0.001


def test_sampler_validation():
    with pytest.raises(ValueError):
        sample_brownian_local_time(0, 1, 10, seed=1, mode="srw", m=100)
    with pytest.raises(ValueError):
        sample_brownian_local_time(0, 1, 10, seed=1, mode="bogus")
    with pytest.raises(ValueError):
        exact_local_time(0, 0, 10, np.random.default_rng())


def test_srw_levels_share_paths():
    L = srw_local_times([0.0, 0.0, 0.3], 1.0, 10**4, 64, seed=7)
    assert L.shape == (64, 3) and np.array_equal(L[:, 0], L[:, 1])


@pytest.mark.parametrize("s", [0.0, 0.3, 1.0, 5.0, 40.0])
def test_laplace_closed_form(s):
    ref, _ = integrate.quad(lambda x: math.exp(-s * x) * math.sqrt(2 / math.pi) * math.exp(-x * x / 2),
                            0, math.inf, epsabs=1e-14)
    assert laplace_half_normal(s) == pytest.approx(ref, rel=1e-10)


def test_functional_quadrature_vs_closed_form_and_mc():
    alpha, d, cap, lam = 1.0, 2, 0.66, 0.5
    q = reference_functional_A([0.0], alpha, d, [cap], [lam])
    s = (d + 1) * math.sqrt(alpha / (d + 1)) * (cap + lam)
    assert q.value == pytest.approx(laplace_half_normal(s), rel=1e-9)
    mc = reference_functional_A([0.0], alpha, d, [cap], [lam], method="mc", n=200_000, seed=8)
    assert abs(mc.value - q.value) < mc.error


def test_functional_two_levels_at_same_point_add():
    a = reference_functional_A([0.0, 0.0], 1.0, 2, [0.3, 0.2], [0.0, 0.0], method="mc", n=2000, seed=9)
    b = reference_functional_A([0.0], 1.0, 2, [0.5], [0.0])
    assert abs(a.value - b.value) < a.error + 0.01


def test_functional_trivial_and_monotone():
    assert reference_functional_A([0.0], 1.0, 2, [0.0], [0.0]).value == 1.0
    vals = [reference_functional_A([0.0], 1.0, 2, [0.66], [lam]).value for lam in (0, 0.5, 1, 4)]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        reference_functional_A([0.5], 1.0, 2, [0.66], [0.0])
    with pytest.raises(ValueError):
        reference_functional_A([0.0], -1.0, 2, [0.66], [0.0])
