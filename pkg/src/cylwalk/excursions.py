"""Inhomogeneous grids on Z and the return/departure excursion schedule.

A grid is ``G = G* u G0`` where ``G*`` holds a few special heights and
``G0`` the multiples of ``2h`` at distance at least ``2h`` from all of them.
Around every grid point sit a small interval ``I_z = z + [-dN, dN]`` and a
large one ``I~_z = z + (-h, h)``; their unions are ``C`` and ``O``.  The
vertical walk's returns to ``C`` (``R_k``) and departures from ``O``
(``D_k``) cut its path into excursions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numba
import numpy as np

from .walk import Observer

NO_CENTER = np.iinfo(np.int64).min


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Scales and special points of a grid.

    With ``strict=True`` the large-N inequalities ``20(dN+1) < h``,
    ``100 h < a`` and ``|z*_l - z*_l'| >= 100 h`` are enforced.  Desk-scale
    experiments use ``strict=False``, which only keeps what the interval
    geometry needs: ``0 <= dN < h`` and special points ``8h`` apart (closer
    specials can leave a gap of ``4h`` or more between grid neighbours).
    """

    a_N: int
    h_N: int
    d_N: int
    special_points: tuple[int, ...]
    strict: bool = True

    def __post_init__(self):
        pts = tuple(sorted(int(z) for z in self.special_points))
        object.__setattr__(self, "special_points", pts)
        if len(set(pts)) != len(pts):
            raise GridError("special points must be distinct")
        if not pts:
            raise GridError("at least one special point is required")
        h, dn, a = self.h_N, self.d_N, self.a_N
        if h < 1 or dn < 0:
            raise GridError(f"need h_N >= 1 and d_N >= 0, got h_N={h}, d_N={dn}")
        gaps = [b - a_ for a_, b in zip(pts, pts[1:])]
        if self.strict:
            if not 20 * (dn + 1) < h:
                raise GridError(f"violates 20(d_N+1) < h_N: 20*({dn}+1)={20 * (dn + 1)} >= {h}")
            if not 100 * h < a:
                raise GridError(f"violates 100 h_N < a_N: 100*{h}={100 * h} >= {a}")
            if gaps and min(gaps) < 100 * h:
                raise GridError(
                    f"violates |z*_l - z*_l'| >= 100 h_N: special points {min(gaps)} apart, need {100 * h}"
                )
        else:
            if not dn < h:
                raise GridError(f"violates d_N < h_N: {dn} >= {h}")
            if gaps and min(gaps) < 8 * h:
                raise GridError(f"special points {min(gaps)} apart, need at least 8 h_N = {8 * h}")

    def to_json(self):
        return {"a_N": self.a_N, "h_N": self.h_N, "d_N": self.d_N,
                "special_points": list(self.special_points), "strict": self.strict}

    @classmethod
    def from_json(cls, obj) -> "GridSpec":
        return cls(int(obj["a_N"]), int(obj["h_N"]), int(obj["d_N"]),
                   tuple(obj["special_points"]), bool(obj.get("strict", True)))


@numba.njit(nogil=True, cache=True)
def _center_of(z, h, specials):
    """Grid point whose open interval (g-h, g+h) contains z, or NO_CENTER."""
    for s in specials:
        if abs(z - s) < h:
            return s
    two_h = 2 * h
    # nearest multiple of 2h (floor division rounds toward -inf)
    g = ((z + h) // two_h) * two_h
    if abs(z - g) >= h:
        return NO_CENTER
    for s in specials:
        if abs(g - s) < two_h:
            return NO_CENTER
    return g


@dataclass(frozen=True)
class Grid:
    spec: GridSpec
    specials: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "specials", np.array(self.spec.special_points, dtype=np.int64))

    @property
    def h(self) -> int:
        return self.spec.h_N

    @property
    def dN(self) -> int:
        return self.spec.d_N

    def center(self, z: int) -> int | None:
        """Grid point of the component of O containing ``z`` (None if z is not in O)."""
        c = _center_of(int(z), self.h, self.specials)
        return None if c == NO_CENTER else int(c)

    def in_O(self, z: int) -> bool:
        return self.center(z) is not None

    def in_C(self, z: int) -> bool:
        c = self.center(z)
        return c is not None and abs(z - c) <= self.dN

    def is_grid_point(self, z: int) -> bool:
        return self.center(z) == z

    def points(self, lo: int, hi: int) -> list[int]:
        """Grid points in [lo, hi]."""
        h2 = 2 * self.h
        out = {s for s in self.spec.special_points if lo <= s <= hi}
        k0 = -((-lo) // h2)
        for k in range(k0, hi // h2 + 1):
            g = k * h2
            if all(abs(g - s) >= h2 for s in self.spec.special_points):
                out.add(g)
        return sorted(out)

    def I(self, z: int) -> tuple[int, int]:
        """Closed small interval around grid point z."""
        return (z - self.dN, z + self.dN)

    def I_tilde(self, z: int) -> tuple[int, int]:
        """Open large interval around grid point z, as (lo, hi) exclusive bounds."""
        return (z - self.h, z + self.h)


def build_grid(spec: GridSpec) -> Grid:
    return Grid(spec)


# --------------------------------------------------------------------------
# grids adapted to points of the cylinder


def default_h(N: int) -> int:
    return math.ceil(N * math.log(N) ** 2)


def adapt_grid_to_points(heights: Sequence[int], limits: Sequence[float], N: int, d: int,
                         h_N: int | None = None, d_N: int | None = None) -> GridSpec:
    """Grid whose special points are the highest height of each group of
    points sharing the same rescaled limit ``v_i``.

    Defaults: ``a_N = N^d``, ``h_N = ceil(N (ln N)^2)`` and
    ``d_N = ceil(max(sqrt(h_N), 2 (1 + spread)))`` where ``spread`` is the
    largest height difference within a group.  Raises :class:`GridError`
    naming the first admissible N when the large-N constraints cannot hold.
    """
    if len(heights) != len(limits) or not heights:
        raise GridError("need one limit value per height, and at least one point")
    groups: dict[float, list[int]] = {}
    for z, v in zip(heights, limits):
        groups.setdefault(float(v), []).append(int(z))
    a = N ** d
    specials = [max(g) for _, g in sorted(groups.items())]
    spread = max(max(g) - min(g) for g in groups.values())
    h = default_h(N) if h_N is None else int(h_N)
    dn = math.ceil(max(math.sqrt(h), 2 * (1 + spread))) if d_N is None else int(d_N)
    for g, zstar in zip((g for _, g in sorted(groups.items())), specials):
        if 2 * max(abs(z - zstar) for z in g) > dn:
            raise GridError(f"violates 2 max|z_i - z*_l| <= d_N for group with z*={zstar}, d_N={dn}")
    try:
        return GridSpec(a, h, dn, tuple(specials), strict=True)
    except GridError as exc:
        if h_N is None and len(set(specials)) == len(specials):
            n_min = minimal_admissible_N(d, spread, len(specials))
            raise GridError(f"{exc}; with the default sequences N must be at least {n_min}") from exc
        raise


def minimal_admissible_N(d: int, spread: int = 0, L: int = 1, n_max: int = 10**6) -> int:
    """Smallest N for which the default h_N, d_N satisfy the scale inequalities."""
    for n in range(2, n_max):
        h = default_h(n)
        dn = math.ceil(max(math.sqrt(h), 2 * (1 + spread)))
        if 20 * (dn + 1) < h and 100 * h < n ** d:
            return n
    raise GridError("no admissible N below search limit")


# --------------------------------------------------------------------------
# schedule parameters


def floor_three_quarter_power(sigma: int) -> int:
    """floor(sigma^(3/4)) in exact integer arithmetic."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return math.isqrt(math.isqrt(sigma ** 3))


@dataclass(frozen=True)
class ScheduleParams:
    gamma: Fraction
    rho: Fraction
    t_N: Fraction
    T: int
    sigma: int
    k_star: int
    k_upper_star: int

    def to_json(self):
        return {"gamma": str(self.gamma), "rho": str(self.rho), "t_N": str(self.t_N),
                "T": self.T, "sigma": self.sigma, "k_star": self.k_star,
                "k_upper_star": self.k_upper_star}


def mean_excursion_time(h: int, dn: int, gamma) -> Fraction:
    """``t_N = [(h-dN)^2 + h^2 - dN^2] / gamma``: mean time between departures."""
    g = Fraction(gamma)
    return Fraction((h - dn) ** 2 + h * h - dn * dn) / g


def compute_schedule(spec: GridSpec, gamma, rho) -> ScheduleParams:
    g = Fraction(gamma)
    r = Fraction(rho)
    t_N = mean_excursion_time(spec.h_N, spec.d_N, g)
    if t_N == 0:
        raise GridError("t_N vanishes; check h_N > d_N")
    a2 = spec.a_N ** 2
    T = math.floor(r * a2)
    sigma = math.floor(r * a2 / t_N)
    q = floor_three_quarter_power(sigma)
    return ScheduleParams(g, r, t_N, T, sigma, sigma - q, sigma + q)


# --------------------------------------------------------------------------
# exact one-dimensional formulas


def expected_exit_local_time(z: int, z0: int, h: int, gamma) -> Fraction:
    """Expected number of visits to ``z`` before leaving ``(z0-h, z0+h)`` when
    starting from ``z``, for the walk holding with probability 1-gamma."""
    if not (z0 - h < z < z0 + h):
        raise ValueError(f"z={z} lies outside ({z0 - h}, {z0 + h})")
    g = Fraction(gamma)
    inv = Fraction(1, h - z + z0) + Fraction(1, h + z - z0)
    return 2 / g / inv


def hit_before_exit(start: int, target: int, z0: int, h: int) -> Fraction:
    """Gambler's ruin: probability of reaching ``target`` before leaving
    ``(z0-h, z0+h)`` from ``start``; holding does not change it."""
    lo, hi = z0 - h, z0 + h
    if not (lo < target < hi):
        raise ValueError("target outside interval")
    if start <= lo or start >= hi:
        return Fraction(0)
    if start == target:
        return Fraction(1)
    if start < target:
        return Fraction(start - lo, target - lo)
    return Fraction(hi - start, hi - target)


# --------------------------------------------------------------------------
# online excursion detection


@numba.njit(nogil=True, cache=True)
def _scan(t0, zs, n, h, dn, specials, state, R, D, ZR, ZD,
          track, lt, ltD, snap_times, ltS, stop_k, stop_after):
    """Feed times t0..t0+n-1.  ``state`` = [phase, center, count, nsnap_done].

    Returns the chunk index at which the stop rule (``count >= stop_k`` and
    ``t >= stop_after``) first holds, or -1.
    """
    cap = R.shape[0]
    ntr = track.shape[0]
    nsnap = snap_times.shape[0]
    for i in range(n):
        t = t0 + i
        z = zs[i]
        # snapshots of local time at fixed times count visits at times < t
        while state[3] < nsnap and snap_times[state[3]] == t:
            for j in range(ntr):
                ltS[state[3], j] = lt[j]
            state[3] += 1
        if state[0] == 0:
            c = _center_of(z, h, specials)
            if c != NO_CENTER and abs(z - c) <= dn:
                k = state[2]
                if k < cap:
                    R[k] = t
                    ZR[k] = z
                state[0] = 1
                state[1] = c
        else:
            if abs(z - state[1]) >= h:
                k = state[2]
                if k < cap:
                    D[k] = t
                    ZD[k] = z
                    for j in range(ntr):
                        ltD[k, j] = lt[j]
                state[2] = k + 1
                state[0] = 0
        for j in range(ntr):
            if track[j] == z:
                lt[j] += 1
        if stop_k > 0 and state[2] >= stop_k and t >= stop_after:
            return i
    return -1


@dataclass
class ExcursionLog:
    """Completed excursions ``(R_k, D_k, Z_{R_k}, Z_{D_k})`` plus, when heights
    are tracked, the local times ``L^z_{D_k}`` and at fixed snapshot times."""

    R: np.ndarray
    D: np.ndarray
    ZR: np.ndarray
    ZD: np.ndarray
    open_R: int | None = None
    open_ZR: int | None = None
    tracked: tuple[int, ...] = ()
    lt_at_D: np.ndarray | None = None
    snapshot_times: tuple[int, ...] = ()
    lt_at_snapshots: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.R.shape[0])

    def returns_to(self, interval: tuple[int, int], k_limit: int | None = None) -> int:
        lo, hi = interval
        zr = self.ZR if k_limit is None else self.ZR[:k_limit]
        return int(np.count_nonzero((zr >= lo) & (zr <= hi)))

    def departures_before(self, t: int) -> int:
        return int(np.searchsorted(self.D, t, side="right"))

    def summary(self, grid: Grid | None = None, k_star: int | None = None,
                k_upper: int | None = None) -> dict:
        out = {"excursions": len(self)}
        if grid is not None and len(self):
            centers = [grid.center(int(z)) for z in self.ZR]
            counts: dict[str, int] = {}
            for c in centers:
                counts[str(c)] = counts.get(str(c), 0) + 1
            out["returns_per_component"] = dict(sorted(counts.items(), key=lambda kv: int(kv[0])))
        for name, k in (("D_k_star", k_star), ("D_k_upper_star", k_upper)):
            if k is not None:
                out[name] = int(self.D[k - 1]) if 0 < k <= len(self) else None
        return out


class ExcursionDetector(Observer):
    """Online detector of the excursion schedule for a stream of heights.

    Works as a walk observer (``needs_z``) and as a stopping rule for
    :func:`cylwalk.walk.run_lazy_walk`: with ``stop_k`` set the run ends at
    the first time ``t >= stop_after`` by which ``stop_k`` departures have
    happened.
    """

    name = "excursions"
    needs_z = True

    def __init__(self, grid: Grid, track_heights: Iterable[int] = (), snapshot_times: Iterable[int] = (),
                 capacity: int = 1 << 16, stop_k: int = 0, stop_after: int = 0,
                 max_steps: int = 10**13):
        self.grid = grid
        self.track = np.array(sorted({int(z) for z in track_heights}), dtype=np.int64)
        self.snap_times = np.array(sorted({int(t) for t in snapshot_times}), dtype=np.int64)
        self.capacity = capacity
        self.R = np.zeros(capacity, np.int64)
        self.D = np.zeros(capacity, np.int64)
        self.ZR = np.zeros(capacity, np.int64)
        self.ZD = np.zeros(capacity, np.int64)
        self.lt = np.zeros(self.track.shape[0], np.int64)
        self.ltD = np.zeros((capacity, self.track.shape[0]), np.int64)
        self.ltS = np.zeros((self.snap_times.shape[0], self.track.shape[0]), np.int64)
        self.state = np.zeros(4, np.int64)
        self.stop_k = stop_k
        self.stop_after = stop_after
        self.max_steps = max_steps

    def scan(self, t0: int, z: np.ndarray) -> int:
        k = _scan(t0, z, len(z), self.grid.h, self.grid.dN, self.grid.specials, self.state,
                  self.R, self.D, self.ZR, self.ZD, self.track, self.lt, self.ltD,
                  self.snap_times, self.ltS, self.stop_k, self.stop_after)
        if self.state[2] > self.capacity:
            raise RuntimeError(f"excursion log overflow (capacity {self.capacity})")
        return int(k)

    def on_chunk(self, t0, z, pos):
        if z is not None and len(z):
            _scan(t0, z, len(z), self.grid.h, self.grid.dN, self.grid.specials, self.state,
                  self.R, self.D, self.ZR, self.ZD, self.track, self.lt, self.ltD,
                  self.snap_times, self.ltS, 0, 0)
            if self.state[2] > self.capacity:
                raise RuntimeError(f"excursion log overflow (capacity {self.capacity})")

    def log(self) -> ExcursionLog:
        k = int(self.state[2])
        open_ = bool(self.state[0] == 1)
        return ExcursionLog(
            self.R[:k].copy(), self.D[:k].copy(), self.ZR[:k].copy(), self.ZD[:k].copy(),
            int(self.R[k]) if open_ and k < self.capacity else None,
            int(self.ZR[k]) if open_ and k < self.capacity else None,
            tuple(self.track.tolist()),
            self.ltD[:k].copy() if self.track.size else None,
            tuple(self.snap_times.tolist()),
            self.ltS.copy() if self.track.size else None,
        )

    def payload(self):
        return self.log().summary(self.grid)


def detect_excursions(z_path: Sequence[int], grid: Grid, **kw) -> ExcursionLog:
    """Excursion log of a stored height sequence (times 0..len-1)."""
    det = ExcursionDetector(grid, capacity=max(16, len(z_path) // 2 + 2), **kw)
    det.on_chunk(0, np.asarray(z_path, dtype=np.int64), None)
    return det.log()


def local_time_proxy(log: ExcursionLog, interval: tuple[int, int], h: int, gamma, k_limit: int) -> Fraction:
    """``(h/gamma) * #{k <= k_limit : Z_{R_k} in I}``."""
    if k_limit > len(log):
        raise ValueError(f"k_limit={k_limit} exceeds the {len(log)} recorded excursions")
    return Fraction(h) / Fraction(gamma) * log.returns_to(interval, k_limit)
