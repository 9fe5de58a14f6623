"""Streaming simple random walk on the cylinder and lazy walks on Z.

The engine never keeps the full trace.  Observers declare up front what they
want to see (tracked heights, vacant windows, or the raw vertical/position
stream in chunks) and the numba kernels feed them.

Horizon conventions follow the definitions exactly: local times
``L^z_n`` count times ``0 <= m < n`` while vacant windows count visits at
times ``0 <= m <= n``.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numba
import numpy as np

from .lattice import CylinderPoint, TorusParams, Window
from .rng import WordStream, replica_rng

INT_MIN = np.iinfo(np.int64).min
INT_MAX = np.iinfo(np.int64).max
CHUNK = 1 << 16

WALK_SCHEMA = "cylwalk.walk/1"


# --------------------------------------------------------------------------
# kernels


@numba.njit(nogil=True, cache=True)
def _flat_y(pos, N, d):
    f = 0
    s = 1
    for c in range(d):
        f += pos[c] * s
        s *= N
    return f


@numba.njit(nogil=True, cache=True)
def _cyl_observe(t, pos, N, d, site_y, site_z, first_visit, wz_lo, wz_hi):
    z = pos[d]
    if z < wz_lo or z > wz_hi:
        return
    yf = _flat_y(pos, N, d)
    for s in range(site_z.shape[0]):
        if site_z[s] == z and site_y[s] == yf and first_visit[s] < 0:
            first_visit[s] = t


@numba.njit(nogil=True, cache=True)
def _cyl_advance(buf, idx, n_max, t0, pos, N, d, exit_lo, exit_hi,
                 lt_lo, lt_counts, site_y, site_z, first_visit, wz_lo, wz_hi,
                 zbuf, pbuf):
    """Run up to ``n_max`` steps from time ``t0`` using words ``buf[idx:]``.

    Returns (steps done, new idx, stopped) where ``stopped`` means the
    position at time ``t0 + steps`` lies outside the open interval
    (exit_lo, exit_hi).  Returns early if the word buffer runs dry.
    """
    m = np.uint64(2 * (d + 1))
    mask = np.uint64(0xFFFFFFFF)
    thresh = np.uint64((1 << 32) % (2 * (d + 1)))
    nbuf = buf.shape[0]
    n_lt = lt_counts.shape[0]
    rec_z = zbuf.shape[0] > 0
    rec_p = pbuf.shape[0] > 0
    i = 0
    while i < n_max:
        z = pos[d]
        if z <= exit_lo or z >= exit_hi:
            return i, idx, True
        # uniform direction in [0, 2(d+1)), exact (multiply-shift with rejection)
        if idx >= nbuf:
            return i, idx, False
        p = np.uint64(buf[idx]) * m
        idx += 1
        if (p & mask) < thresh:
            continue
        k = np.int64(p >> np.uint64(32))
        if rec_z:
            zbuf[i] = z
        if rec_p:
            for c in range(d + 1):
                pbuf[i, c] = pos[c]
        j = z - lt_lo
        if j >= 0 and j < n_lt:
            lt_counts[j] += 1
        # distance-to-interest shortcut: no window at this height
        if z >= wz_lo and z <= wz_hi:
            _cyl_observe(t0 + i, pos, N, d, site_y, site_z, first_visit, wz_lo, wz_hi)
        c = k >> 1
        if c == d:
            pos[d] = z + 2 * (k & 1) - 1
        else:
            v = pos[c] + 2 * (k & 1) - 1
            if v == N:
                v = 0
            elif v < 0:
                v = N - 1
            pos[c] = v
        i += 1
    return n_max, idx, False


@numba.njit(nogil=True, cache=True)
def _lazy_advance(buf, idx, n_max, z, num, den, exit_lo, exit_hi, zbuf):
    """Lazy walk with gamma = num/den: draw k uniform in [0, 2 den);
    k < num steps down, num <= k < 2 num steps up, otherwise stay."""
    m = np.uint64(2 * den)
    mask = np.uint64(0xFFFFFFFF)
    thresh = np.uint64((1 << 32) % (2 * den))
    nbuf = buf.shape[0]
    i = 0
    while i < n_max:
        if z <= exit_lo or z >= exit_hi:
            return i, idx, z, True
        if idx >= nbuf:
            return i, idx, z, False
        p = np.uint64(buf[idx]) * m
        idx += 1
        if (p & mask) < thresh:
            continue
        k = np.int64(p >> np.uint64(32))
        zbuf[i] = z
        if k < num:
            z -= 1
        elif k < 2 * num:
            z += 1
        i += 1
    return n_max, idx, z, False


@numba.njit(nogil=True, cache=True)
def _count_heights(zbuf, n, lo, counts, sign=1):
    k = counts.shape[0]
    for i in range(n):
        j = zbuf[i] - lo
        if j >= 0 and j < k:
            counts[j] += sign


@numba.njit(nogil=True, cache=True)
def _skeleton_chunk(t0, zbuf, n, last_z, taus, zs, count):
    # appends jump times; returns (new count, last z); stops if buffers full
    cap = taus.shape[0]
    for i in range(n):
        z = zbuf[i]
        if z != last_z:
            if count < cap:
                taus[count] = t0 + i
                zs[count] = z
            count += 1
            last_z = z
    return count, last_z


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Start:
    """Initial law: a fixed point, or uniform on a level ``T x {z}``."""

    kind: str
    point: CylinderPoint | None = None
    z: int = 0

    @classmethod
    def at(cls, x: CylinderPoint) -> "Start":
        return cls("point", x, x.z)

    @classmethod
    def level(cls, z: int) -> "Start":
        return cls("level", None, int(z))

    @classmethod
    def uniform_level0(cls) -> "Start":
        return cls("level", None, 0)

    def sample(self, params: TorusParams, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "point":
            return np.array([*self.point.y, self.point.z], dtype=np.int64)
        if self.kind == "level":
            y = rng.integers(0, params.N, size=params.d)
            return np.array([*y, self.z], dtype=np.int64)
        raise ValueError(f"unknown start kind {self.kind!r}")

    def to_json(self):
        if self.kind == "point":
            return {"kind": "point", "point": list(self.point.as_tuple())}
        return {"kind": "level", "z": self.z}


@dataclass(frozen=True)
class WalkConfig:
    params: TorusParams
    start: Start
    seed: int
    max_steps: int
    replica: int = 0
    # optional exact stopping rule: stop once Z leaves the open interval
    stop_outside: tuple[int, int] | None = None

    def __post_init__(self):
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")


@dataclass(frozen=True)
class LazyWalkParams:
    gamma: Fraction

    def __post_init__(self):
        g = Fraction(self.gamma).limit_denominator(10**9)
        if not (0 < g <= 1):
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        object.__setattr__(self, "gamma", g)


# --------------------------------------------------------------------------
# observers


class Observer:
    """Base observer.  Subclasses override the hooks they need."""

    name = "observer"
    needs_z = False
    needs_positions = False

    def heights(self) -> Sequence[int]:
        return ()

    def windows(self) -> Sequence[Window]:
        return ()

    def on_chunk(self, t0: int, z: np.ndarray | None, pos: np.ndarray | None) -> None:
        pass

    def on_final(self, t: int, z: np.ndarray | None, pos: np.ndarray | None) -> None:
        """The position at the final time; defaults to a one-point chunk."""
        self.on_chunk(t, z, pos)

    def on_local_times(self, table: dict[int, int]) -> None:
        pass

    def on_first_visits(self, first_visit: np.ndarray) -> None:
        pass

    def payload(self):
        return None


@dataclass
class LocalTimeTable:
    """Running counts ``L^z_n`` for tracked heights at horizon ``n``."""

    n: int
    counts: dict[int, int] = field(default_factory=dict)

    def __getitem__(self, z: int) -> int:
        return self.counts.get(int(z), 0)

    def total(self) -> int:
        return sum(self.counts.values())

    def to_json(self):
        return {"n": self.n, "counts": {str(k): int(v) for k, v in sorted(self.counts.items())}}


class LocalTimeObserver(Observer):
    """Vertical local times at declared heights, or at every visited height."""

    name = "local_time"

    def __init__(self, heights: Iterable[int] = (), all_heights: bool = False, name: str | None = None):
        self._heights = tuple(sorted({int(z) for z in heights}))
        self.all_heights = all_heights
        self.needs_z = all_heights
        self.table = LocalTimeTable(0, {z: 0 for z in self._heights})
        if name:
            self.name = name

    def heights(self):
        return () if self.all_heights else self._heights

    def on_chunk(self, t0, z, pos):
        if not self.all_heights or z is None or len(z) == 0:
            return
        vals, cnt = np.unique(z, return_counts=True)
        for v, c in zip(vals.tolist(), cnt.tolist()):
            self.table.counts[v] = self.table.counts.get(v, 0) + c

    def on_final(self, t, z, pos):
        # half-open horizon: the final position is not counted
        pass

    def on_local_times(self, table):
        if not self.all_heights:
            self.table.counts = {z: int(table.get(z, 0)) for z in self._heights}

    def payload(self):
        return self.table.to_json()


@dataclass
class VacantWindow:
    window: Window
    bits: tuple[int, ...]
    n: int

    def all_vacant(self) -> bool:
        return all(self.bits)

    def to_json(self):
        return {
            "base": list(self.window.base.as_tuple()),
            "pattern": [list(o) for o in self.window.pattern],
            "n": self.n,
            "bits": list(self.bits),
        }


class WindowObserver(Observer):
    """First-visit times of the sites of each declared window."""

    name = "windows"

    def __init__(self, windows: Sequence[Window], name: str | None = None):
        self._windows = tuple(windows)
        self.first_visit: np.ndarray | None = None
        self.horizon = 0
        if name:
            self.name = name

    def windows(self):
        return self._windows

    def on_first_visits(self, first_visit):
        self.first_visit = first_visit

    def snapshot(self, n: int | None = None) -> list[VacantWindow]:
        return vacant_window_snapshot(self, self.horizon if n is None else n)

    def payload(self):
        return [w.to_json() for w in self.snapshot()]


def vacant_window_snapshot(tracker: WindowObserver, n: int) -> list[VacantWindow]:
    """Vacancy bits at horizon ``n`` (visits at times ``0..n`` inclusive)."""
    if n > tracker.horizon:
        raise ValueError(f"horizon {n} exceeds steps performed ({tracker.horizon})")
    out = []
    off = 0
    for w in tracker._windows:
        k = len(w.pattern)
        fv = tracker.first_visit[off:off + k] if tracker.first_visit is not None else np.full(k, -1)
        bits = tuple(int(v < 0 or v > n) for v in fv.tolist())
        out.append(VacantWindow(w, bits, n))
        off += k
    return out


@dataclass
class SkeletonState:
    taus: np.ndarray
    values: np.ndarray

    def increments(self) -> np.ndarray:
        return np.diff(self.values)


def vertical_skeleton(z_path: Sequence[int]) -> SkeletonState:
    """Heights of the walk at the successive times its vertical part moves."""
    z = np.asarray(z_path, dtype=np.int64)
    if z.size == 0:
        return SkeletonState(np.zeros(0, np.int64), np.zeros(0, np.int64))
    jumps = np.flatnonzero(np.diff(z)) + 1
    taus = np.concatenate([[0], jumps]).astype(np.int64)
    return SkeletonState(taus, z[taus])


class SkeletonObserver(Observer):
    name = "skeleton"
    needs_z = True

    def __init__(self, max_records: int = 1 << 22):
        self.taus = np.zeros(max_records, np.int64)
        self.vals = np.zeros(max_records, np.int64)
        self.count = 0
        self.last = None

    def on_chunk(self, t0, z, pos):
        if z is None or len(z) == 0:
            return
        if self.last is None:
            self.taus[0] = t0
            self.vals[0] = z[0]
            self.count = 1
            self.last = int(z[0])
        self.count, self.last = _skeleton_chunk(t0, z, len(z), self.last, self.taus, self.vals, self.count)

    @property
    def truncated(self) -> bool:
        return self.count > self.taus.shape[0]

    def state(self) -> SkeletonState:
        k = min(self.count, self.taus.shape[0])
        return SkeletonState(self.taus[:k].copy(), self.vals[:k].copy())

    def payload(self):
        st = self.state()
        inc = st.increments()
        return {"jumps": int(max(self.count - 1, 0)), "truncated": self.truncated,
                "mean_increment": float(inc.mean()) if inc.size else 0.0}


class TraceObserver(Observer):
    """Capped dump of the raw trajectory, for debugging."""

    name = "trace"
    needs_positions = True

    def __init__(self, max_rows: int = 10_000):
        self.max_rows = max_rows
        self.rows: list[np.ndarray] = []
        self.n = 0

    def on_chunk(self, t0, z, pos):
        if pos is None or self.n >= self.max_rows:
            return
        take = pos[: self.max_rows - self.n]
        steps = np.arange(t0, t0 + len(take), dtype=np.int64)[:, None]
        self.rows.append(np.hstack([steps, take]))
        self.n += len(take)

    def array(self) -> np.ndarray:
        if not self.rows:
            return np.zeros((0, 0), np.int64)
        return np.vstack(self.rows)

    def to_csv(self) -> str:
        arr = self.array()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        dim = arr.shape[1] - 2 if arr.size else 0
        w.writerow(["step", *[f"y{i + 1}" for i in range(dim)], "z"])
        w.writerows(arr.tolist())
        return buf.getvalue()

    def payload(self):
        return {"rows": self.n, "capped": self.n >= self.max_rows}


class CallbackObserver(Observer):
    """Calls ``fn(step, position)`` for every time step.  Slow; tests only."""

    name = "callback"
    needs_positions = True

    def __init__(self, fn: Callable[[int, tuple], None]):
        self.fn = fn

    def on_chunk(self, t0, z, pos):
        if pos is None:
            return
        for i, row in enumerate(pos.tolist()):
            self.fn(t0 + i, tuple(row))


# --------------------------------------------------------------------------
# engines


@dataclass
class WalkResult:
    config: WalkConfig
    final: CylinderPoint
    steps: int
    stopped: bool
    observers: list[Observer]

    def output(self, name: str):
        for o in self.observers:
            if o.name == name:
                return o
        raise KeyError(name)

    def to_json(self) -> dict:
        cfg = self.config
        return {
            "schema": WALK_SCHEMA,
            "params": {"N": cfg.params.N, "d": cfg.params.d},
            "start": cfg.start.to_json(),
            "seed": cfg.seed,
            "replica": cfg.replica,
            "max_steps": cfg.max_steps,
            "steps": self.steps,
            "stopped_by_exit": self.stopped,
            "final": list(self.final.as_tuple()),
            "observers": {o.name: o.payload() for o in self.observers},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def window_site_arrays(windows: Sequence[Window], params: TorusParams):
    """Flattened site coordinates of unwrapped windows and their height range."""
    site_y, site_z = [], []
    for w in windows:
        if w.wrapped:
            raise ValueError(
                f"window at {w.base.as_tuple()} wraps around the torus (N={params.N}); "
                "its pattern is not injectively embedded"
            )
        for s in w.sites:
            yf = 0
            for c, v in enumerate(s.y):
                yf += v * params.N ** c
            site_y.append(yf)
            site_z.append(s.z)
    site_y = np.array(site_y, dtype=np.int64)
    site_z = np.array(site_z, dtype=np.int64)
    if site_z.size:
        lo, hi = int(site_z.min()), int(site_z.max())
    else:
        lo, hi = 1, 0
    return site_y, site_z, lo, hi


def _window_arrays(observers: Sequence[Observer], params: TorusParams):
    return window_site_arrays([w for o in observers for w in o.windows()], params)


def _height_range(observers: Sequence[Observer]):
    hs = sorted({h for o in observers for h in o.heights()})
    if not hs:
        return 0, np.zeros(0, np.int64), hs
    lo, hi = hs[0], hs[-1]
    if hi - lo > 50_000_000:
        raise ValueError("tracked heights span too wide a range; use all_heights tracking")
    return lo, np.zeros(hi - lo + 1, np.int64), hs


def run_walk(cfg: WalkConfig, observers: Sequence[Observer] = (), chunk: int = CHUNK,
             stop=None) -> WalkResult:
    """Simple random walk on the cylinder for ``cfg.max_steps`` steps.

    Every observer sees each time ``0..T`` exactly once, where ``T`` is the
    number of steps performed (``max_steps`` unless the optional exit rule
    or ``stop`` fired first).  ``stop`` has the scanner interface described
    in :func:`run_lazy_walk`.  Identical configs give bit-identical results.
    """
    params = cfg.params
    d, N = params.d, params.N
    observers = list(observers)
    site_y, site_z, wz_lo, wz_hi = _window_arrays(observers, params)
    first_visit = np.full(site_z.shape[0], -1, dtype=np.int64)
    lt_lo, lt_counts, tracked = _height_range(observers)

    rng = replica_rng(cfg.seed, cfg.replica)
    pos = cfg.start.sample(params, rng)
    stream = WordStream(rng)
    exit_lo, exit_hi = (INT_MIN, INT_MAX) if cfg.stop_outside is None else cfg.stop_outside

    need_z = any(o.needs_z for o in observers) or stop is not None
    need_p = any(o.needs_positions for o in observers) or stop is not None
    csize = max(1, min(chunk, cfg.max_steps)) if cfg.max_steps else 1
    zbuf = np.zeros(csize if need_z else 0, np.int64)
    pbuf = np.zeros((csize if need_p else 0, d + 1), np.int64)

    t = 0
    stopped = False
    while t < cfg.max_steps and not stopped:
        n = min(csize, cfg.max_steps - t)
        buf, idx = stream.ensure(n + n // 8 + 64)
        done, stream.idx, stopped = _cyl_advance(buf, idx, n, t, pos, N, d, exit_lo, exit_hi,
                                                 lt_lo, lt_counts, site_y, site_z, first_visit,
                                                 wz_lo, wz_hi, zbuf, pbuf)
        if stop is not None:
            k = stop.scan(t, zbuf[:done])
            if k >= 0:
                # roll back everything recorded after time t + k
                pos[:] = pbuf[k]
                first_visit[first_visit > t + k] = -1
                _count_heights(zbuf[k:done], done - k, lt_lo, lt_counts, -1)
                done = k
                stopped = True
        if need_z or need_p:
            zc = zbuf[:done] if need_z else None
            pc = pbuf[:done] if need_p else None
            for o in observers:
                o.on_chunk(t, zc, pc)
        t += done
    # the closed horizon includes the final position
    _cyl_observe(t, pos, N, d, site_y, site_z, first_visit, wz_lo, wz_hi)
    for o in observers:
        o.on_final(t, np.array([pos[d]], np.int64) if need_z else None,
                   pos[None, :].copy() if need_p else None)
    table = {z: int(lt_counts[z - lt_lo]) for z in tracked}
    off = 0
    for o in observers:
        k = sum(len(w.pattern) for w in o.windows())
        o.on_local_times(table)
        o.on_first_visits(first_visit[off:off + k].copy())
        off += k
        if isinstance(o, WindowObserver):
            o.horizon = t
        if isinstance(o, LocalTimeObserver):
            o.table.n = t
    final = CylinderPoint(tuple(int(v) for v in pos[:d]), int(pos[d]), N)
    return WalkResult(cfg, final, t, stopped, observers)


# lazy walk ---------------------------------------------------------------


@dataclass(frozen=True)
class Horizon:
    n: int


@dataclass(frozen=True)
class ExitInterval:
    """Stop at the first time Z leaves the open interval (lo, hi)."""

    lo: int
    hi: int
    max_steps: int = 10**12


@dataclass
class LazyTrajectory:
    params: LazyWalkParams
    start: int
    steps: int
    final: int
    stopped_by: str
    observers: list[Observer]

    def output(self, name):
        for o in self.observers:
            if o.name == name:
                return o
        raise KeyError(name)

    def to_json(self):
        return {
            "schema": "cylwalk.lazy/1",
            "gamma": str(self.params.gamma),
            "start": self.start,
            "steps": self.steps,
            "final": self.final,
            "stopped_by": self.stopped_by,
            "observers": {o.name: o.payload() for o in self.observers},
        }


class PathObserver(Observer):
    """Keeps the whole vertical path (short runs only)."""

    name = "path"
    needs_z = True

    def __init__(self):
        self.parts = []

    def on_chunk(self, t0, z, pos):
        if z is not None:
            self.parts.append(z.copy())

    def path(self) -> np.ndarray:
        return np.concatenate(self.parts) if self.parts else np.zeros(0, np.int64)


def run_lazy_walk(params: LazyWalkParams, z0: int, stop, seed: int, replica: int = 0,
                  observers: Sequence[Observer] = (), chunk: int = CHUNK,
                  rng: np.random.Generator | None = None) -> LazyTrajectory:
    """Walk on Z under Q^gamma from ``z0`` until the stopping rule fires.

    ``stop`` is a :class:`Horizon`, an :class:`ExitInterval`, or any object
    with ``max_steps`` and ``scan(t0, zchunk) -> index | -1`` (e.g. the
    excursion schedule of :mod:`cylwalk.excursions`), where the returned
    index is the first position in the chunk at which the rule fires.
    """
    observers = list(observers)
    num, den = params.gamma.numerator, params.gamma.denominator
    if 2 * den >= 1 << 32:
        raise ValueError("gamma denominator too large for the 32-bit sampler")
    rng = replica_rng(seed, replica) if rng is None else rng
    stream = WordStream(rng)
    lt_lo, lt_counts, tracked = _height_range(observers)
    if isinstance(stop, Horizon):
        max_steps, lo, hi, scanner = stop.n, INT_MIN, INT_MAX, None
    elif isinstance(stop, ExitInterval):
        max_steps, lo, hi, scanner = stop.max_steps, stop.lo, stop.hi, None
    else:
        max_steps, lo, hi, scanner = stop.max_steps, INT_MIN, INT_MAX, stop
    csize = max(1, min(chunk, max_steps))
    zbuf = np.zeros(csize, np.int64)
    z = int(z0)
    t = 0
    stopped_by = "horizon"
    while t < max_steps:
        n = min(csize, max_steps - t)
        buf, idx = stream.ensure(n + n // 8 + 64)
        done, stream.idx, z_new, hit = _lazy_advance(buf, idx, n, z, num, den, lo, hi, zbuf)
        zc = zbuf[:done]
        if scanner is not None:
            k = scanner.scan(t, zc)
            if k >= 0:
                # the rule fired at time t + k; X at that time is zc[k]
                zc = zc[:k]
                z_new = int(zbuf[k])
                done = k
                hit = True
                stopped_by = "schedule"
        if len(zc):
            _count_heights(zc, len(zc), lt_lo, lt_counts)
            for o in observers:
                o.on_chunk(t, zc, None)
        t += done
        z = int(z_new)
        if hit:
            if stopped_by != "schedule":
                stopped_by = "exit"
            break
    for o in observers:
        o.on_final(t, np.array([z], np.int64), None)
    table = {h: int(lt_counts[h - lt_lo]) for h in tracked}
    for o in observers:
        o.on_local_times(table)
        if isinstance(o, LocalTimeObserver):
            o.table.n = t
    return LazyTrajectory(params, int(z0), t, z, stopped_by, observers)
