import math

import numpy as np
import pytest

from cylwalk.constants import CAP_ORIGIN_Z3
from cylwalk.interlacements import choose_kill_factor, sample_vacant, vacancy_probability_closed_form
from cylwalk.lattice import parse_pattern
from cylwalk.potential import capacity_extrapolated

BLOCK = parse_pattern("[(0,0,0),(1,0,0),(0,1,0),(1,1,0)]")
PAIR = parse_pattern("[(0,0,0),(1,0,0)]")


@pytest.fixture(scope="module")
def block_sample():
    return sample_vacant([0.5, 1.0, 2.0], BLOCK, 20_000, seed=3)


def test_closed_form():
    assert vacancy_probability_closed_form(0, 5.0) == 1.0
    assert vacancy_probability_closed_form(2, CAP_ORIGIN_Z3) == pytest.approx(math.exp(-2 * 0.65947))
    vals = [vacancy_probability_closed_form(u, 1.0) for u in (0.5, 1, 2)]
    assert vals[0] > vals[1] > vals[2]
    caps = [capacity_extrapolated(K, 4).capacity for K in (parse_pattern("[(0,0,0)]"), PAIR, BLOCK)]
    assert caps[0] < caps[1] < caps[2]
    with pytest.raises(ValueError):
        vacancy_probability_closed_form(-1, 1.0)


def test_level_zero_all_vacant():
    s = sample_vacant(0.0, BLOCK, 500, seed=1)
    assert s.bits.all() and s.n_traj.sum() == 0


def test_negative_level_rejected():
    with pytest.raises(ValueError):
        sample_vacant(-0.5, BLOCK, 10, seed=1)


def test_void_probability_of_trajectory_count(block_sample):
    s = block_sample
    for j, u in enumerate(s.levels):
        none = float(np.mean(s.n_traj[:, j] == 0))
        ref = math.exp(-u * s.cap_B)
        assert abs(none - ref) < 3 * math.sqrt(ref * (1 - ref) / len(s.n_traj))


def test_vacancy_law_on_subpatterns(block_sample):
    s = block_sample
    for K in (parse_pattern("[(0,0,0)]"), PAIR, BLOCK):
        cap = capacity_extrapolated(K, 8).capacity
        for u in s.levels:
            p, se = s.frequency(K, u)
            bias = s.truncation["bias_bound"][str(u)]
            assert abs(p - vacancy_probability_closed_form(u, cap)) <= 3 * se + bias


def test_translation_invariance(block_sample):
    s = block_sample
    for u in s.levels:
        freqs = [s.frequency([tuple(x)], u) for x in s.sites.tolist()]
        ps = np.array([f[0] for f in freqs])
        se = max(f[1] for f in freqs)
        assert ps.max() - ps.min() < 3 * math.sqrt(2) * se


def test_monotone_coupling(block_sample):
    b = block_sample.bits
    assert np.all(b[:, 1, :] <= b[:, 0, :]) and np.all(b[:, 2, :] <= b[:, 1, :])


def test_deterministic_and_thread_independent():
    a = sample_vacant([1.0], PAIR, 3000, seed=8, threads=1, batch=512)
    b = sample_vacant([1.0], PAIR, 3000, seed=8, threads=3, batch=512)
    assert np.array_equal(a.bits, b.bits) and a.to_json() == b.to_json()


def test_unknown_site_rejected(block_sample):
    with pytest.raises(ValueError):
        block_sample.frequency([(5, 5, 5)], 1.0)


def test_kill_factor_rule():
    small = choose_kill_factor([1.0], 1.4, 1, 3, 100, reentry=False)
    big = choose_kill_factor([1.0], 1.4, 1, 3, 10**6, reentry=False)
    assert small <= big
    assert choose_kill_factor([1.0], 1.4, 1, 3, 10**6, reentry=True) <= big
