"""Conditional excursions on the cylinder and the experiments built on them.

An excursion starts uniformly on a level ``T x {z}`` with ``z`` in ``C`` and
runs until the vertical component leaves the large interval around ``z``.
Conditioning on the exit height is done by rejection.

``homogenization_test`` measures how uniform the torus coordinate is when
the walk first reaches ``C`` from afar; ``resampled_excursion_comparison``
compares the vacant windows of a genuine walk with windows rebuilt from
independent conditional excursions sharing its entrance/exit heights.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .excursions import ExcursionDetector, Grid, GridSpec, build_grid, compute_schedule
from .lattice import CylinderPoint, Pattern, TorusParams, Window
from .rng import WordStream, map_replicas, replica_rng
from .stats import (chi2_uniform, permutation_test, tv_debiased, tv_from_uniform,
                    tv_noise_floor)
from .walk import (INT_MIN, Start, WalkConfig, WindowObserver, _cyl_advance,
                   run_walk, window_site_arrays)

_STEP_CHUNK = 1 << 15
MIN_ACCEPTANCE = 1e-3


@dataclass(frozen=True)
class ConditionalExcursionSpec:
    z: int
    z_exit: int
    grid: Grid
    params: TorusParams

    def __post_init__(self):
        c = self.grid.center(self.z)
        if c is None or not self.grid.in_C(self.z):
            raise ValueError(f"start height {self.z} is not in C")
        if self.z_exit not in (c - self.grid.h, c + self.grid.h):
            raise ValueError(f"exit height {self.z_exit} is not an endpoint of the interval around {c}")

    @property
    def interval(self) -> tuple[int, int]:
        c = self.grid.center(self.z)
        return c - self.grid.h, c + self.grid.h


@dataclass
class Excursion:
    start: np.ndarray
    exit_point: np.ndarray
    duration: int
    start_visits: int
    attempts: int
    first_visit: np.ndarray

    @property
    def hit_sites(self) -> np.ndarray:
        return self.first_visit >= 0


class _Sites:
    """Window site arrays in the layout the walk kernel expects."""

    def __init__(self, windows: Sequence[Window], params: TorusParams):
        self.site_y, self.site_z, self.lo, self.hi = window_site_arrays(windows, params)

    @property
    def n(self) -> int:
        return self.site_z.shape[0]


_EMPTY_Z = np.zeros(0, np.int64)


def _run_to_exit(stream: WordStream, pos: np.ndarray, params: TorusParams, lo: int, hi: int,
                 sites: _Sites, first_visit: np.ndarray, count_height: int) -> tuple[int, int]:
    """Advance ``pos`` until its height leaves (lo, hi); returns (steps, visits to count_height)."""
    d, N = params.d, params.N
    lt = np.zeros(1, np.int64)
    pbuf = np.zeros((0, d + 1), np.int64)
    t = 0
    while True:
        buf, idx = stream.ensure(_STEP_CHUNK + _STEP_CHUNK // 8 + 64)
        done, stream.idx, stopped = _cyl_advance(buf, idx, _STEP_CHUNK, t, pos, N, d, lo, hi,
                                                 count_height, lt, sites.site_y, sites.site_z,
                                                 first_visit, sites.lo, sites.hi, _EMPTY_Z, pbuf)
        t += done
        if stopped:
            return t, int(lt[0])


def sample_conditional_excursion(spec: ConditionalExcursionSpec, stream: WordStream,
                                 aux: np.random.Generator, sites: _Sites | None = None,
                                 max_attempts: int = 100_000) -> Excursion:
    """One excursion under ``P_{z,z'}``: uniform start on level z, rejection on the exit height."""
    params = spec.params
    sites = sites or _Sites((), params)
    lo, hi = spec.interval
    for attempt in range(1, max_attempts + 1):
        y = aux.integers(0, params.N, size=params.d)
        pos = np.array([*y, spec.z], dtype=np.int64)
        start = pos.copy()
        fv = np.full(sites.n, -1, np.int64)
        steps, visits = _run_to_exit(stream, pos, params, lo, hi, sites, fv, spec.z)
        if pos[params.d] == spec.z_exit:
            return Excursion(start, pos.copy(), steps, visits, attempt, fv)
        if attempt == 1000:
            warnings.warn(f"conditional excursion acceptance below {MIN_ACCEPTANCE}: "
                          f"no success in 1000 attempts from z={spec.z} to z'={spec.z_exit}")
    raise RuntimeError("conditional excursion sampler exhausted its attempts")


def acceptance_rate(spec: ConditionalExcursionSpec, trials: int, seed: int) -> tuple[float, float]:
    """Fraction of unconditioned excursions that exit at ``z_exit``, with its standard error."""
    stream = WordStream(replica_rng(seed, 0, 0))
    aux = replica_rng(seed, 0, 1)
    sites = _Sites((), spec.params)
    lo, hi = spec.interval
    ok = 0
    for _ in range(trials):
        y = aux.integers(0, spec.params.N, size=spec.params.d)
        pos = np.array([*y, spec.z], dtype=np.int64)
        _run_to_exit(stream, pos, spec.params, lo, hi, sites, np.zeros(0, np.int64), spec.z)
        ok += pos[spec.params.d] == spec.z_exit
    p = ok / trials
    if trials >= 100 and p < MIN_ACCEPTANCE:
        warnings.warn(f"measured acceptance rate {p:.2e} is below {MIN_ACCEPTANCE}")
    return p, math.sqrt(p * (1 - p) / trials)


# --------------------------------------------------------------------------
# homogenization


@dataclass
class HomogenizationReport:
    N: int
    d: int
    h_N: int
    d_N: int
    start_z: int
    samples: int
    per_exit: dict
    tv: float
    tv_debiased: float
    tv_floor: float
    chi2_pvalues: dict
    flagged: bool = False

    def to_json(self):
        return {
            "N": self.N, "d": self.d, "h_N": self.h_N, "d_N": self.d_N, "start_z": self.start_z,
            "samples": self.samples, "per_exit": self.per_exit, "tv": self.tv,
            "tv_debiased": self.tv_debiased, "tv_floor": self.tv_floor,
            "chi2_pvalues": self.chi2_pvalues, "flagged": self.flagged,
        }


def _gap_around(grid: Grid, z: int) -> tuple[int, int]:
    """The open interval of heights around z (outside C) bounded by C."""
    pts = grid.points(z - 4 * grid.h, z + 4 * grid.h)
    below = max(g for g in pts if g <= z)
    above = min(g for g in pts if g >= z)
    return below + grid.dN, above - grid.dN


def _first_return_positions(params: TorusParams, start: np.ndarray, lo: int, hi: int,
                            n: int, seed: int, threads: int | None, batch: int = 512):
    nb = -(-n // batch)
    sites = _Sites((), params)
    d = params.d

    def one(b):
        k = min(batch, n - b * batch)
        stream = WordStream(replica_rng(seed, b))
        ys = np.zeros(k, np.int64)
        zs = np.zeros(k, np.int64)
        for i in range(k):
            pos = start.copy()
            _run_to_exit(stream, pos, params, lo, hi, sites, np.zeros(0, np.int64), INT_MIN)
            f = 0
            for c in range(d):
                f += int(pos[c]) * params.N ** c
            ys[i] = f
            zs[i] = pos[d]
        return ys, zs

    parts = map_replicas(one, nb, threads)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def homogenization_test(N: int, d: int, grid: Grid, start_z: int, replicas: int, seed: int,
                        start_y: Sequence[int] | None = None, threads: int | None = None,
                        min_per_cell: float = 5.0) -> HomogenizationReport:
    """Law of the torus coordinate at the first return to C, per return height.

    The walk starts at ``(start_y, start_z)`` (default ``y = 0``), which must
    lie at vertical distance at least ``h/2`` from C.  If some return height
    collects fewer than ``min_per_cell * N^d`` samples the run is repeated
    once with twice the replicas, and flagged if still short.
    """
    params = TorusParams(N, d)
    if grid.in_C(start_z):
        raise ValueError("start already in C: the first return is at time 0, outside the test premise")
    lo, hi = _gap_around(grid, start_z)
    if min(start_z - lo, hi - start_z) < grid.h / 2:
        raise ValueError(f"start height {start_z} is closer than h/2 to C")
    y0 = np.zeros(d, np.int64) if start_y is None else np.asarray(start_y, np.int64) % N
    start = np.array([*y0, start_z], dtype=np.int64)
    cells = N ** d
    n = replicas
    flagged = False
    for attempt in range(2):
        ys, zs = _first_return_positions(params, start, lo, hi, n, seed + attempt, threads)
        short = any(np.count_nonzero(zs == z) < min_per_cell * cells for z in (lo, hi))
        if not short:
            break
        if attempt == 0:
            n *= 2
        else:
            flagged = True
    per_exit, pvals = {}, {}
    tv_w = tvd_w = floor_w = 0.0
    for z in (lo, hi):
        sel = ys[zs == z]
        counts = np.bincount(sel, minlength=cells)
        tv = tv_from_uniform(counts) if len(sel) else float("nan")
        fl = tv_noise_floor(cells, len(sel)) if len(sel) else float("nan")
        per_exit[str(z)] = {"samples": int(len(sel)), "tv": tv, "tv_floor": fl,
                            "tv_debiased": tv_debiased(counts) if len(sel) else float("nan")}
        pvals[str(z)] = chi2_uniform(counts)[1] if len(sel) else float("nan")
        w = len(sel) / len(ys)
        if len(sel):
            tv_w += w * tv
            tvd_w += w * per_exit[str(z)]["tv_debiased"]
            floor_w += w * fl
    return HomogenizationReport(N, d, grid.h, grid.dN, start_z, int(len(ys)), per_exit,
                                tv_w, tvd_w, floor_w, pvals, flagged)


# --------------------------------------------------------------------------
# pipeline comparison


@dataclass(frozen=True)
class CouplingConfig:
    N: int
    d: int
    h_N: int
    d_N: int
    alpha: float
    sites: tuple[tuple[int, ...], ...]
    replicas: int
    seed: int
    max_steps: int = 10**9

    def params(self) -> TorusParams:
        return TorusParams(self.N, self.d)

    def grid(self) -> Grid:
        return build_grid(GridSpec(self.N ** self.d, self.h_N, self.d_N, (0,), strict=False))

    def windows(self) -> list[Window]:
        p = self.params()
        return [Window(CylinderPoint(s[:-1], s[-1], self.N), Pattern.of([(0,) * (self.d + 1)]), p)
                for s in self.sites]


@dataclass
class CouplingReport:
    k_star: int
    replicas: int
    freq_A: list[float]
    freq_B: list[float]
    z_scores: list[float]
    max_abs_z: float
    exchangeability_p: float
    excursions_in_window_component: float
    acceptance: float
    meta: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "k_star": self.k_star, "replicas": self.replicas, "freq_A": self.freq_A,
            "freq_B": self.freq_B, "z_scores": self.z_scores, "max_abs_z": self.max_abs_z,
            "exchangeability_p": self.exchangeability_p,
            "excursions_in_window_component": self.excursions_in_window_component,
            "acceptance": self.acceptance, "meta": self.meta,
        }


def _one_replica(cfg: CouplingConfig, r: int, k_star: int, grid: Grid, windows, sites: _Sites):
    params = cfg.params()
    d = cfg.d
    det = ExcursionDetector(grid, capacity=4 * k_star + 16, stop_k=k_star)
    wobs = WindowObserver(windows)
    res = run_walk(WalkConfig(params, Start.level(0), cfg.seed, cfg.max_steps, replica=r), [wobs], stop=det)
    if not res.stopped:
        raise RuntimeError(f"replica {r} did not reach D_k* within {cfg.max_steps} steps")
    vac_A = np.array([b for w in wobs.snapshot(res.steps) for b in w.bits], dtype=np.uint8)
    log = det.log()
    comp = grid.I(0)
    stream = WordStream(replica_rng(cfg.seed, r, 1))
    aux = replica_rng(cfg.seed, r, 2)
    hit_B = np.zeros(sites.n, bool)
    per_exc = []
    attempts = 0
    for k in range(k_star):
        zr, zd = int(log.ZR[k]), int(log.ZD[k])
        if not (comp[0] <= zr <= comp[1]):
            continue
        ex = sample_conditional_excursion(ConditionalExcursionSpec(zr, zd, grid, params), stream, aux, sites)
        attempts += ex.attempts
        hit_B |= ex.hit_sites
        per_exc.append((k, bool(ex.hit_sites.any()), zr, zd))
    return vac_A, (~hit_B).astype(np.uint8), per_exc, attempts


def resampled_excursion_comparison(cfg: CouplingConfig, threads: int | None = None,
                                   n_perm: int = 2000) -> CouplingReport:
    """Pipeline A: the walk's single-site vacancies at ``D_{k_*}``.  Pipeline B:
    the same sites after replacing each excursion that starts in the window
    component by an independent excursion with the same entrance and exit
    heights."""
    grid = cfg.grid()
    sched = compute_schedule(grid.spec, Fraction(1, cfg.d + 1), cfg.alpha)
    k_star = sched.k_star
    if k_star < 1:
        raise ValueError("schedule gives k_* < 1; increase alpha")
    windows = cfg.windows()
    sites = _Sites(windows, cfg.params())
    outs = map_replicas(lambda r: _one_replica(cfg, r, k_star, grid, windows, sites), cfg.replicas, threads)
    A = np.stack([o[0] for o in outs]).astype(float)
    B = np.stack([o[1] for o in outs]).astype(float)
    n = cfg.replicas
    pA, pB = A.mean(axis=0), B.mean(axis=0)
    se = np.sqrt(pA * (1 - pA) / n + pB * (1 - pB) / n)
    z = np.where(se > 0, (pA - pB) / np.where(se > 0, se, 1), 0.0)
    # exchangeability: first versus second half of each replica's resampled excursions
    hits, half, strata = [], [], []
    for o in outs:
        m = len(o[2])
        for j, (_, hit, zr, zd) in enumerate(o[2]):
            hits.append(hit)
            half.append(int(j >= m / 2))
            strata.append(zr * 1_000_003 + zd)
    hits = np.array(hits, float)
    half = np.array(half)
    stat = lambda x, g: x[g == 0].mean() - x[g == 1].mean() if (g == 0).any() and (g == 1).any() else 0.0
    p_ex = permutation_test(hits, half, stat, n_perm, replica_rng(cfg.seed, 0, 3), strata) if len(hits) else 1.0
    n_exc = sum(len(o[2]) for o in outs)
    acc = n_exc / max(sum(o[3] for o in outs), 1)
    return CouplingReport(k_star, n, pA.tolist(), pB.tolist(), z.tolist(), float(np.abs(z).max()),
                          float(p_ex), n_exc / n, acc,
                          meta={"schedule": sched.to_json(), "grid": grid.spec.to_json(),
                                "sites": [list(s) for s in cfg.sites]})

