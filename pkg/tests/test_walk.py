import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from cylwalk.lattice import CylinderPoint, Pattern, TorusParams, Window
from cylwalk.stats import binomial_z, chi2_two_sample
from cylwalk.walk import (ExitInterval, Horizon, LazyWalkParams, LocalTimeObserver, PathObserver,
                          SkeletonObserver, Start, TraceObserver, WalkConfig, WindowObserver, run_lazy_walk,
                          run_walk, vacant_window_snapshot, vertical_skeleton)

P = TorusParams(8, 2)
X0 = CylinderPoint((3, 4), 5, 8)


def cylinder_z_path(n, seed=1, params=P):
    po = PathObserver()
    run_walk(WalkConfig(params, Start.at(CylinderPoint((0,) * params.d, 0, params.N)), seed, n), [po])
    return po.path()


def lazy_z_path(gamma, n, seed=1):
    po = PathObserver()
    run_lazy_walk(LazyWalkParams(gamma), 0, Horizon(n), seed, observers=[po])
    return po.path()


def block_increments(z, n):
    z = z[: (len(z) // n) * n]
    ends = np.append(z[n::n], z[-1]) if len(z) % n else z[n::n]
    return ends - z[0:len(ends) * n:n]


def test_empty_walk():
    lo = LocalTimeObserver([5, 6])
    res = run_walk(WalkConfig(P, Start.at(X0), 3, 0), [lo])
    assert res.final == X0 and res.steps == 0
    assert lo.table.counts == {5: 0, 6: 0}


def test_time_zero_visit_counts():
    lo = LocalTimeObserver([5])
    run_walk(WalkConfig(P, Start.at(X0), 3, 1), [lo])
    assert lo.table[5] == 1


def test_vertical_move_fraction():
    z = cylinder_z_path(1_000_000, seed=11)
    moves = int(np.count_nonzero(np.diff(z)))
    assert abs(binomial_z(moves, len(z) - 1, 1 / 3)) < 3


def test_every_step_is_a_neighbour_move():
    tr = TraceObserver(max_rows=5000)
    run_walk(WalkConfig(P, Start.at(X0), 5, 4999), [tr])
    arr = tr.array()[:, 1:]
    diff = np.diff(arr, axis=0)
    diff[:, :2] = (diff[:, :2] + 4) % 8 - 4
    assert np.all(np.abs(diff).sum(axis=1) == 1)
    assert tr.to_csv().startswith("step,y1,y2,z\r\n")


def test_snapshot_examples():
    ws = [Window(X0, Pattern.of([(0, 0, 0)]), P), Window(X0, Pattern.of([(0, 0, 40)]), P),
          Window(X0, Pattern.empty(), P)]
    wo = WindowObserver(ws)
    run_walk(WalkConfig(P, Start.at(X0), 2, 1), [wo])
    snap = vacant_window_snapshot(wo, 0)
    assert snap[0].bits == (0,)
    assert snap[1].bits == (1,)
    assert snap[2].bits == ()
    with pytest.raises(ValueError):
        wo.snapshot(2)


def test_wrapped_window_rejected():
    w = Window(CylinderPoint((0, 0), 0, 4), Pattern.of([(0, 0, 0), (4, 0, 0)]), TorusParams(4, 2))
    with pytest.raises(ValueError, match="wraps"):
        run_walk(WalkConfig(TorusParams(4, 2), Start.level(0), 1, 10), [WindowObserver([w])])


def test_closed_horizon_includes_final_site():
    # brute-force first visit times from a trace, then compare with the tracker
    box = Pattern.box((-1, -1, -1), (1, 1, 1))
    w = Window(X0, box, P)
    wo, tr = WindowObserver([w]), TraceObserver(10_000)
    n = 300
    run_walk(WalkConfig(P, Start.at(X0), 9, n), [wo, tr])
    rows = [tuple(r) for r in tr.array()[:, 1:].tolist()]
    assert len(rows) == n + 1
    for m in (0, 1, 17, n):
        expect = tuple(int(s.as_tuple() not in set(rows[: m + 1])) for s in w.sites)
        assert wo.snapshot(m)[0].bits == expect


def test_determinism_and_replica_independence():
    def run(seed, r):
        lo = LocalTimeObserver(all_heights=True)
        return run_walk(WalkConfig(P, Start.level(0), seed, 20000, replica=r), [lo]).dumps()

    assert run(4, 0) == run(4, 0)
    assert run(4, 0) != run(4, 1)
    assert run(4, 0) != run(5, 0)


@given(st.integers(1, 20000), st.integers(0, 2**32))
def test_local_time_additivity_and_conservation(n, seed):
    total = 20000
    po, lo = PathObserver(), LocalTimeObserver(all_heights=True)
    run_walk(WalkConfig(P, Start.level(0), seed, total), [po, lo])
    z = po.path()
    # the path covers the closed horizon 0..total, local times the half-open one
    assert len(z) == total + 1
    assert sum(lo.table.counts.values()) == total
    pre = LocalTimeObserver(all_heights=True)
    run_walk(WalkConfig(P, Start.level(0), seed, n), [pre])
    suffix = dict(zip(*np.unique(z[n:total], return_counts=True)))
    for h, c in lo.table.counts.items():
        assert c == pre.table[h] + int(suffix.get(h, 0))


def test_tracked_heights_match_all_heights():
    a, b = LocalTimeObserver([-3, 0, 2, 7]), LocalTimeObserver(all_heights=True)
    run_walk(WalkConfig(P, Start.level(0), 8, 50000), [a, b])
    for h in (-3, 0, 2, 7):
        assert a.table[h] == b.table[h]


def test_vacancy_monotone_in_horizon():
    w = Window(X0, Pattern.box((-2, -2, -2), (2, 2, 2)), P)
    wo = WindowObserver([w])
    run_walk(WalkConfig(P, Start.level(5), 3, 4000), [wo])
    prev = None
    for m in range(0, 4001, 50):
        bits = np.array(wo.snapshot(m)[0].bits)
        if prev is not None:
            assert np.all(bits <= prev)
        prev = bits


def test_stop_outside_interval():
    res = run_walk(WalkConfig(P, Start.level(0), 2, 10**7, stop_outside=(-10, 10)))
    assert res.stopped and abs(res.final.z) == 10


def test_lazy_two_step_return():
    z = lazy_z_path(1, 400_000, seed=3)
    inc = block_increments(z, 2)
    assert abs(binomial_z(int(np.count_nonzero(inc == 0)), len(inc), 0.5)) < 3


def test_lazy_hold_probability():
    z = lazy_z_path("1/3", 300_000, seed=4)
    assert abs(binomial_z(int(np.count_nonzero(np.diff(z) == 0)), len(z) - 1, 2 / 3)) < 3


def test_lazy_exit_symmetry():
    h, n = 7, 3000
    up = sum(run_lazy_walk(LazyWalkParams(1), 0, ExitInterval(-h, h), 5, replica=r).final == h
             for r in range(n))
    assert abs(binomial_z(up, n, 0.5)) < 3


def test_lazy_gamma_validation():
    with pytest.raises(ValueError):
        LazyWalkParams(0)
    with pytest.raises(ValueError):
        LazyWalkParams(1.5)


def test_skeleton_examples():
    s = vertical_skeleton([0, 0, 1, 1, 2])
    assert s.values.tolist() == [0, 1, 2] and s.taus.tolist() == [0, 2, 4]
    s = vertical_skeleton([3, 3, 3])
    assert s.values.tolist() == [3]


def test_skeleton_is_fair_coin():
    so = SkeletonObserver()
    run_walk(WalkConfig(P, Start.level(0), 6, 600_000), [so])
    inc = so.state().increments()
    assert len(inc) > 100_000
    assert np.all(np.abs(inc) == 1)
    assert abs(binomial_z(int(np.count_nonzero(inc == 1)), len(inc), 0.5)) < 3


@pytest.mark.parametrize("n", [1, 4, 25])
def test_vertical_component_matches_lazy_walk(n):
    a = block_increments(cylinder_z_path(200_000, seed=21), n)
    b = block_increments(lazy_z_path("1/3", 200_000, seed=22), n)
    _, p = chi2_two_sample(a, b)
    assert p > 0.001


def lazy_return_probability(n, gamma):
    k = np.arange(0, n + 1, 2)
    return float(np.sum(sps.binom.pmf(k, n, gamma) * sps.binom.pmf(k // 2, k, 0.5)))


@pytest.mark.parametrize("gamma", [1 / 3, 1.0])
def test_heat_kernel_decay(gamma):
    vals = [math.sqrt(n) * lazy_return_probability(n, gamma) for n in (100, 1000, 10_000, 100_000)]
    assert max(vals) < 1.0 and min(vals) > 0.3
    z = lazy_z_path("1/3" if gamma < 1 else 1, 2_000_000, seed=7)
    inc = block_increments(z, 100)
    assert abs(binomial_z(int(np.count_nonzero(inc == 0)), len(inc), lazy_return_probability(100, gamma))) < 3
