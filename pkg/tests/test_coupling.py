import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats as sps

from cylwalk.coupling import (ConditionalExcursionSpec, CouplingConfig, acceptance_rate, homogenization_test,
                              resampled_excursion_comparison, sample_conditional_excursion)
from cylwalk.excursions import ExcursionDetector, GridSpec, build_grid, compute_schedule
from cylwalk.lattice import TorusParams
from cylwalk.rng import WordStream, replica_rng
from cylwalk.stats import binomial_z, chi2_independence, chi2_two_sample, chi2_uniform
from cylwalk.walk import ExitInterval, LazyWalkParams, LocalTimeObserver, Start, WalkConfig, run_lazy_walk, run_walk

P = TorusParams(6, 2)
GRID = build_grid(GridSpec(10**6, 8, 2, (0,), strict=False))


def test_spec_validation():
    ConditionalExcursionSpec(1, 8, GRID, P)
    with pytest.raises(ValueError, match="not in C"):
        ConditionalExcursionSpec(5, 8, GRID, P)
    with pytest.raises(ValueError, match="endpoint"):
        ConditionalExcursionSpec(1, 7, GRID, P)


def test_central_acceptance_half():
    p, se = acceptance_rate(ConditionalExcursionSpec(0, 8, GRID, P), 4000, seed=1)
    assert abs(p - 0.5) < 3 * se


def sample_many(spec, n, seed):
    stream, aux = WordStream(replica_rng(seed, 0, 0)), replica_rng(seed, 0, 1)
    return [sample_conditional_excursion(spec, stream, aux) for _ in range(n)]


def test_accepted_excursions_have_the_right_law():
    spec = ConditionalExcursionSpec(2, -8, GRID, P)
    exc = sample_many(spec, 3000, seed=2)
    assert all(e.exit_point[2] == -8 for e in exc)
    # start torus coordinate is uniform
    cells = np.array([e.start[0] + 6 * e.start[1] for e in exc])
    assert chi2_uniform(np.bincount(cells, minlength=36))[1] > 0.001
    # vertical marginal against the lazy walk with the same rejection
    dur, occ = [], []
    r = 0
    while len(dur) < 3000:
        lo = LocalTimeObserver([2])
        t = run_lazy_walk(LazyWalkParams(Fraction(1, 3)), 2, ExitInterval(-8, 8), 3, replica=r, observers=[lo])
        r += 1
        if t.final == -8:
            dur.append(t.steps)
            occ.append(lo.table[2])
    qs = np.quantile(dur, np.linspace(0, 1, 11)[1:-1])
    a = np.digitize([e.duration for e in exc], qs)
    b = np.digitize(dur, qs)
    assert chi2_two_sample(a, b)[1] > 0.001
    assert chi2_two_sample(np.minimum([e.start_visits for e in exc], 15), np.minimum(occ, 15))[1] > 0.001


def test_low_acceptance_warns():
    # exit on the far side from distance 1 has probability 1/(2h)
    grid = build_grid(GridSpec(10**8, 2000, 1999, (0,), strict=False))
    spec = ConditionalExcursionSpec(-1999, 2000, grid, P)
    with pytest.warns(UserWarning, match="acceptance"):
        p, _ = acceptance_rate(spec, 1000, seed=1)
    assert p < 1e-3


def test_homogenization_premise():
    grid = build_grid(GridSpec(10**6, 10, 2, (0,), strict=False))
    with pytest.raises(ValueError, match="start already in C"):
        homogenization_test(4, 2, grid, 1, 100, seed=1)
    with pytest.raises(ValueError, match="h/2"):
        homogenization_test(4, 2, grid, 5, 100, seed=1)


def test_homogenization_report_and_calibration():
    grid = build_grid(GridSpec(10**6, 8, 3, (0,), strict=False))
    pvals = []
    for s in range(30):
        rep = homogenization_test(4, 2, grid, 8, 512, seed=100 + s)
        assert 0 <= rep.tv <= 1 and rep.tv_debiased <= rep.tv
        pvals.extend(v for v in rep.chi2_pvalues.values())
    # p-values of a near-uniform law are close to uniform
    assert sps.kstest(pvals, "uniform").pvalue > 0.001


def test_homogenization_flags_short_samples():
    grid = build_grid(GridSpec(10**6, 8, 3, (0,), strict=False))
    rep = homogenization_test(4, 2, grid, 8, 40, seed=1)
    assert rep.flagged and rep.samples == 80


def test_torus_coordinate_uniform_at_departure():
    # at tau = D_k*, Y is uniform and independent of Z (start uniform on level 0)
    N, n = 4, 6000
    params = TorusParams(N, 2)
    grid = build_grid(GridSpec(10**6, 4, 1, (0,), strict=False))
    ys, zs = [], []
    for r in range(n):
        det = ExcursionDetector(grid, capacity=64, stop_k=3)
        res = run_walk(WalkConfig(params, Start.level(0), 11, 10**6, replica=r), stop=det)
        assert res.stopped
        ys.append(res.final.y[0] + N * res.final.y[1])
        zs.append(res.final.z)
    ys, zs = np.array(ys), np.array(zs)
    assert chi2_uniform(np.bincount(ys, minlength=N * N))[1] > 0.001
    table = np.array([np.bincount(ys[zs == z], minlength=N * N) for z in np.unique(zs)])
    assert chi2_independence(table)[1] > 0.001


def small_coupling(**kw):
    base = dict(N=8, d=2, h_N=16, d_N=4, alpha=1.0, sites=((0, 0, 0), (4, 4, 2)), replicas=300, seed=5)
    base.update(kw)
    return CouplingConfig(**base)


def test_coupling_pipelines_agree_small():
    rep = resampled_excursion_comparison(small_coupling(), n_perm=300)
    assert rep.max_abs_z < 4
    assert 0.3 < rep.acceptance < 0.7
    assert rep.k_star == compute_schedule(small_coupling().grid().spec, Fraction(1, 3), 1).k_star


def test_coupling_degenerate_window():
    rep = resampled_excursion_comparison(small_coupling(sites=((0, 0, 900),), replicas=50), n_perm=50)
    assert rep.freq_A == [1.0] and rep.freq_B == [1.0]


def test_coupling_thread_independent():
    a = resampled_excursion_comparison(small_coupling(replicas=60), threads=1, n_perm=50)
    b = resampled_excursion_comparison(small_coupling(replicas=60), threads=3, n_perm=50)
    assert a.to_json() == b.to_json()
