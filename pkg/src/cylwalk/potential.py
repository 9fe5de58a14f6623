"""Discrete potential theory for simple random walk.

Everything here is built on one linear problem: for ``K`` inside a finite
ambient set ``U``, the hitting probability ``h(x) = P_x[H_K < T_U]`` is
harmonic on ``U \\ K``, equals 1 on ``K`` and 0 off ``U``.  Escape
probabilities follow after one forced step,

    e_{K,U}(x) = 1 - sum_y p(x, y) h(y),     x in K,

and ``cap_U(K)`` is their sum.  Ambient sets live either in Z^D or on the
cylinder (Z/NZ)^d x Z, whose first ``d`` coordinates are periodic.

Linear systems below 5000 unknowns are solved densely; larger ones with
conjugate gradients (``I - P_U`` is symmetric positive definite) to a
relative residual of 1e-12.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import Pattern
from .rng import WordStream, map_replicas, replica_rng

DENSE_LIMIT = 5000
CG_RTOL = 1e-12


class SolverError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# ambient sets


@dataclass(frozen=True, eq=False)
class AmbientSet:
    """A finite set of sites with an index map.

    ``periodic`` coordinates (the leading ones) are taken mod ``N``.
    """

    sites: np.ndarray
    N: int = 0
    periodic: int = 0
    _keys: np.ndarray = field(repr=False, default=None)
    _order: np.ndarray = field(repr=False, default=None)
    _lo: np.ndarray = field(repr=False, default=None)
    _span: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        s = np.ascontiguousarray(np.asarray(self.sites, dtype=np.int64).reshape(len(self.sites), -1))
        if self.periodic:
            s[:, : self.periodic] %= self.N
        if len(s) and len(np.unique(s, axis=0)) != len(s):
            raise ValueError("ambient set has duplicate sites")
        object.__setattr__(self, "sites", s)
        lo = s.min(axis=0) if len(s) else np.zeros(s.shape[1], np.int64)
        hi = s.max(axis=0) if len(s) else np.zeros(s.shape[1], np.int64)
        # pad by one so neighbours of sites have valid keys
        lo = lo - 1
        span = hi - lo + 2
        keys = self._encode(s, lo, span)
        order = np.argsort(keys, kind="stable")
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_span", span)
        object.__setattr__(self, "_keys", keys[order])
        object.__setattr__(self, "_order", order)

    @staticmethod
    def _encode(pts, lo, span):
        key = np.zeros(len(pts), np.int64)
        for c in range(pts.shape[1]):
            key = key * span[c] + (pts[:, c] - lo[c])
        return key

    # constructors -----------------------------------------------------------

    @classmethod
    def box(cls, radius: int, dim: int, center: Sequence[int] | None = None) -> "AmbientSet":
        """The cube ``center + [-radius, radius]^dim`` in Z^dim."""
        ax = np.arange(-radius, radius + 1, dtype=np.int64)
        grid = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
        if center is not None:
            grid = grid + np.asarray(center, dtype=np.int64)
        return cls(grid)

    @classmethod
    def slab(cls, N: int, d: int, z_lo: int, z_hi: int) -> "AmbientSet":
        """``T x [z_lo, z_hi]`` on the cylinder with torus side N."""
        axes = [np.arange(N, dtype=np.int64)] * d + [np.arange(z_lo, z_hi + 1, dtype=np.int64)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d + 1)
        return cls(grid, N=N, periodic=d)

    @classmethod
    def of(cls, sites: Sequence[Sequence[int]], N: int = 0, periodic: int = 0) -> "AmbientSet":
        return cls(np.asarray(list(sites), dtype=np.int64), N=N, periodic=periodic)

    # queries ----------------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.sites.shape[1]

    def __len__(self) -> int:
        return self.sites.shape[0]

    def normalize(self, pts) -> np.ndarray:
        p = np.array(pts, dtype=np.int64, ndmin=2, copy=True)
        if self.periodic:
            p[:, : self.periodic] %= self.N
        return p

    def index(self, pts) -> np.ndarray:
        """Indices of ``pts`` in the set, -1 where absent."""
        p = self.normalize(pts)
        inside = np.all((p >= self._lo) & (p < self._lo + self._span), axis=1)
        keys = self._encode(np.where(inside[:, None], p, self._lo), self._lo, self._span)
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1) if len(self._keys) else pos
        found = inside & (len(self._keys) > 0)
        if len(self._keys):
            found &= self._keys[pos] == keys
        out = np.full(len(p), -1, np.int64)
        out[found] = self._order[pos[found]]
        return out

    def contains(self, pt) -> bool:
        return bool(self.index([pt])[0] >= 0)

    def steps(self) -> np.ndarray:
        e = np.eye(self.dim, dtype=np.int64)
        return np.concatenate([-e, e])

    def neighbour_index(self) -> np.ndarray:
        """(n, 2D) array of neighbour indices, -1 for neighbours outside."""
        nb = np.empty((len(self), 2 * self.dim), np.int64)
        for j, s in enumerate(self.steps()):
            nb[:, j] = self.index(self.sites + s)
        return nb

    def transition_matrix(self) -> sp.csr_matrix:
        """The walk restricted to the set, killed on exit (substochastic)."""
        n = len(self)
        nb = self.neighbour_index()
        rows = np.repeat(np.arange(n), nb.shape[1])
        cols = nb.ravel()
        keep = cols >= 0
        vals = np.full(keep.sum(), 1.0 / nb.shape[1])
        return sp.csr_matrix((vals, (rows[keep], cols[keep])), shape=(n, n))

    def is_connected(self) -> bool:
        if len(self) == 0:
            return True
        from scipy.sparse.csgraph import connected_components
        ncomp, _ = connected_components(self.transition_matrix(), directed=False)
        return ncomp == 1


# --------------------------------------------------------------------------
# linear algebra


@dataclass
class SolveInfo:
    method: str
    unknowns: int
    iterations: int = 0
    residual: float = 0.0

    def to_json(self):
        return {"method": self.method, "unknowns": self.unknowns,
                "iterations": self.iterations, "residual": self.residual}


def solve_spd(A: sp.spmatrix, b: np.ndarray) -> tuple[np.ndarray, SolveInfo]:
    """Solve ``A x = b`` for the SPD matrix ``I - P``; ``b`` may have several columns."""
    n = A.shape[0]
    if n == 0:
        return np.zeros_like(b, dtype=float), SolveInfo("empty", 0)
    if n < DENSE_LIMIT:
        x = scipy.linalg.solve(A.toarray(), b, assume_a="pos")
        res = float(np.max(np.abs(A @ x - b))) if b.size else 0.0
        return x, SolveInfo("dense", n, 0, res)
    cols = b if b.ndim == 2 else b[:, None]
    out = np.empty(cols.shape)
    iters = 0
    worst = 0.0
    for j in range(cols.shape[1]):
        count = [0]

        def cb(_):
            count[0] += 1

        # Jacobi preconditioning is trivial here: the diagonal of I - P is 1
        x, info = spla.cg(A, cols[:, j], rtol=CG_RTOL, atol=0.0, maxiter=50 * n, callback=cb)
        if info != 0:
            raise SolverError(f"conjugate gradients did not converge (info={info})")
        out[:, j] = x
        iters = max(iters, count[0])
        nb = np.linalg.norm(cols[:, j])
        worst = max(worst, float(np.linalg.norm(A @ x - cols[:, j]) / nb) if nb else 0.0)
    return (out if b.ndim == 2 else out[:, 0]), SolveInfo("cg", n, iters, worst)


def _identity_minus_P(U: AmbientSet) -> sp.csr_matrix:
    return (sp.identity(len(U), format="csr") - U.transition_matrix()).tocsr()


# --------------------------------------------------------------------------
# Green function and hitting probabilities


def green_function(U: AmbientSet, x, x2) -> float:
    """``g_U(x, x2)``, the expected number of visits to x2 before leaving U (0 off U)."""
    i, j = U.index([x, x2])
    if i < 0 or j < 0:
        return 0.0
    b = np.zeros(len(U))
    b[j] = 1.0
    g, _ = solve_spd(_identity_minus_P(U), b)
    return float(g[i])


def green_table(U: AmbientSet) -> np.ndarray:
    """Full matrix of ``g_U``; only sensible for small U."""
    A = _identity_minus_P(U)
    if len(U) >= DENSE_LIMIT:
        raise ValueError("green_table is limited to small ambient sets")
    return np.linalg.inv(A.toarray())


def _check_inside(K: AmbientSet | np.ndarray, U: AmbientSet) -> np.ndarray:
    pts = K.sites if isinstance(K, AmbientSet) else np.asarray(K, dtype=np.int64).reshape(-1, U.dim)
    idx = U.index(pts) if len(pts) else np.zeros(0, np.int64)
    if np.any(idx < 0):
        bad = pts[np.argmax(idx < 0)]
        raise ValueError(f"K is not contained in U (site {tuple(bad)} missing)")
    return np.unique(idx)


@dataclass
class HittingSolution:
    U: AmbientSet
    K_index: np.ndarray
    h: np.ndarray
    info: SolveInfo


def hitting_probabilities(K, U: AmbientSet) -> HittingSolution:
    """``h(x) = P_x[H_K < T_U]`` for every x in U."""
    kidx = _check_inside(K, U)
    n = len(U)
    free = np.ones(n, bool)
    free[kidx] = False
    P = U.transition_matrix()
    fidx = np.flatnonzero(free)
    h = np.zeros(n)
    h[kidx] = 1.0
    info = SolveInfo("trivial", 0)
    if len(fidx) and len(kidx):
        Pf = P[fidx][:, fidx]
        b = np.asarray(P[fidx][:, kidx].sum(axis=1)).ravel()
        A = (sp.identity(len(fidx), format="csr") - Pf).tocsr()
        h[fidx], info = solve_spd(A, b)
    return HittingSolution(U, kidx, h, info)


@dataclass
class CapacityReport:
    """Equilibrium measure and capacity of ``K`` relative to an ambient set."""

    sites: np.ndarray
    equilibrium: np.ndarray
    capacity: float
    method: str
    error: float = 0.0
    flagged: bool = False
    meta: dict = field(default_factory=dict)

    def to_json(self):
        return {
            "sites": [list(map(int, s)) for s in self.sites],
            "equilibrium": [float(v) for v in self.equilibrium],
            "capacity": float(self.capacity),
            "method": self.method,
            "error": float(self.error),
            "flagged": bool(self.flagged),
            "meta": self.meta,
        }


def _escape_from_h(sol: HittingSolution) -> np.ndarray:
    U = sol.U
    nb = U.neighbour_index()[sol.K_index]
    hv = np.where(nb >= 0, sol.h[np.maximum(nb, 0)], 0.0)
    e = 1.0 - hv.mean(axis=1)
    return np.clip(e, 0.0, 1.0)


def escape_probabilities(K, U: AmbientSet) -> tuple[np.ndarray, np.ndarray]:
    """``P_x[H~_K > T_U]`` for x in K; returns (sites of K, values)."""
    sol = hitting_probabilities(K, U)
    return U.sites[sol.K_index], _escape_from_h(sol)


def relative_capacity(K, U: AmbientSet) -> CapacityReport:
    sol = hitting_probabilities(K, U)
    e = _escape_from_h(sol)
    return CapacityReport(U.sites[sol.K_index], e, float(e.sum()), "exact-solve",
                          meta={"solver": sol.info.to_json(), "ambient_size": len(U)})


def last_exit_hitting(K, U: AmbientSet) -> np.ndarray:
    """``sum_x' g_U(x, x') e_{K,U}(x')`` for all x in U (equals P_x[H_K < T_U])."""
    sol = hitting_probabilities(K, U)
    e = _escape_from_h(sol)
    b = np.zeros(len(U))
    b[sol.K_index] = e
    # g_U is symmetric, so the row sum against e is one solve
    g_e, _ = solve_spd(_identity_minus_P(U), b)
    return g_e


# --------------------------------------------------------------------------
# Monte Carlo walks on Z^D and on cylinders

OUT_OF_WORDS = -1


@numba.njit(nogil=True, cache=True)
def _run_walkers(buf, idx, starts, nper, N, lo_b, hi_b, klo, kshape, kmask,
                 stop_on_hit, visited, status, exitpos, steps):
    """Run one walker per row of ``starts``.

    A walker stops when it leaves the box ``lo_b <= x <= hi_b`` (status 0)
    or, with ``stop_on_hit``, when it sits on a marked site after at least
    one step (status 1).  Marked sites it occupies are recorded in
    ``visited[walker]`` when that array is non-empty.  Returns the new word
    index, or -1 if the buffer ran dry (outputs are then incomplete).
    """
    nw, D = starts.shape
    m = np.uint64(2 * D)
    mask32 = np.uint64(0xFFFFFFFF)
    thresh = np.uint64((1 << 32) % (2 * D))
    nbuf = buf.shape[0]
    track = visited.shape[0] > 0
    pos = np.empty(D, np.int64)
    for w in range(nw):
        for c in range(D):
            pos[c] = starts[w, c]
        n = 0
        while True:
            out = False
            for c in range(nper, D):
                if pos[c] < lo_b[c] or pos[c] > hi_b[c]:
                    out = True
            if out:
                status[w] = 0
                break
            # marked-site lookup in the bounding box of the marks
            f = 0
            inb = True
            for c in range(D):
                o = pos[c] - klo[c]
                if o < 0 or o >= kshape[c]:
                    inb = False
                    break
                f = f * kshape[c] + o
            if inb and kmask[f]:
                if track:
                    visited[w, f] = 1
                if stop_on_hit and n > 0:
                    status[w] = 1
                    break
            while True:
                if idx >= nbuf:
                    return -1
                p = np.uint64(buf[idx]) * m
                idx += 1
                if (p & mask32) >= thresh:
                    break
            k = np.int64(p >> np.uint64(32))
            c = k >> 1
            v = pos[c] + 2 * (k & 1) - 1
            if c < nper:
                if v == N:
                    v = 0
                elif v < 0:
                    v = N - 1
            pos[c] = v
            n += 1
        for c in range(D):
            exitpos[w, c] = pos[c]
        steps[w] = n
    return idx


@dataclass(frozen=True)
class MarkBox:
    """Dense bounding-box mask of a finite site set, as the kernels want it."""

    lo: np.ndarray
    shape: np.ndarray
    mask: np.ndarray

    @classmethod
    def of(cls, pts: np.ndarray) -> "MarkBox":
        pts = np.asarray(pts, dtype=np.int64)
        lo = pts.min(axis=0)
        shape = pts.max(axis=0) - lo + 1
        mask = np.zeros(int(np.prod(shape)), np.uint8)
        mask[cls.flat_of(pts, lo, shape)] = 1
        return cls(lo, shape, mask)

    @staticmethod
    def flat_of(pts, lo, shape) -> np.ndarray:
        f = np.zeros(len(pts), np.int64)
        for c in range(pts.shape[1]):
            f = f * shape[c] + (pts[:, c] - lo[c])
        return f

    def flat(self, pts) -> np.ndarray:
        return self.flat_of(np.asarray(pts, dtype=np.int64), self.lo, self.shape)


def run_walkers(stream: WordStream, starts: np.ndarray, marks: MarkBox, lo_b, hi_b,
                stop_on_hit: bool, track: bool = False, N: int = 0, periodic: int = 0):
    """Run walkers through :func:`_run_walkers`, refilling the word buffer as needed.

    A batch that runs out of words is rerun from the same position of the
    stream with a larger buffer, so results never depend on buffer sizes.
    """
    starts = np.ascontiguousarray(starts, dtype=np.int64)
    nw, D = starts.shape
    lo_b = np.asarray(lo_b, dtype=np.int64)
    hi_b = np.asarray(hi_b, dtype=np.int64)
    guess = max(1 << 16, nw * 64)
    while True:
        buf, idx = stream.ensure(guess)
        status = np.zeros(nw, np.int8)
        exitpos = np.zeros((nw, D), np.int64)
        steps = np.zeros(nw, np.int64)
        visited = np.zeros((nw if track else 0, marks.mask.shape[0]), np.uint8)
        new = _run_walkers(buf, idx, starts, periodic, N, lo_b, hi_b, marks.lo, marks.shape,
                           marks.mask, stop_on_hit, visited, status, exitpos, steps)
        if new >= 0:
            stream.idx = new
            return status, exitpos, steps, visited
        guess = 2 * (buf.shape[0] - idx) + 1


# --------------------------------------------------------------------------
# infinite volume


def green_asymptotic(x: np.ndarray, D: int) -> np.ndarray:
    """Leading-order Green function of SRW on Z^D, ``c_D |x|^{2-D}``."""
    r = np.linalg.norm(np.atleast_2d(x), axis=1)
    c = D / 2 * math.gamma(D / 2 - 1) * math.pi ** (-D / 2)
    return c * r ** (2 - D)


def _pattern_array(K) -> np.ndarray:
    if isinstance(K, Pattern):
        return np.asarray(K.offsets, dtype=np.int64)
    return np.asarray(K, dtype=np.int64).reshape(len(K), -1)


def box_capacity(K, radius: int) -> CapacityReport:
    """``cap_U(K)`` for the cube of the given radius around the bounding box centre of K."""
    pts = _pattern_array(K)
    center = np.floor_divide(pts.min(axis=0) + pts.max(axis=0), 2)
    half = int((pts.max(axis=0) - pts.min(axis=0)).max() + 1) // 2
    U = AmbientSet.box(radius + half, pts.shape[1], center)
    rep = relative_capacity(pts, U)
    rep.meta["radius"] = radius
    return rep


def richardson_three(radii: Sequence[int], values: Sequence[float], D: int) -> tuple[float, float]:
    """Fit ``cap + a/R^(D-2) + b/R^(2(D-2))`` exactly through three points.

    Returns the extrapolated constant and the gap to the two-point fit on the
    two largest radii, used as the error estimate.
    """
    p = D - 2
    R = np.asarray(radii, dtype=float)
    M = np.stack([np.ones(3), R ** -p, R ** (-2 * p)], axis=1)
    coef = np.linalg.solve(M, np.asarray(values, dtype=float))
    M2 = np.stack([np.ones(2), R[1:] ** -p], axis=1)
    c2 = np.linalg.solve(M2, np.asarray(values[1:], dtype=float))
    return float(coef[0]), float(abs(coef[0] - c2[0]))


def capacity_extrapolated(K, radius: int = 8) -> CapacityReport:
    """Infinite-volume capacity from exact box solves at radii R, 2R, 4R."""
    pts = _pattern_array(K)
    D = pts.shape[1]
    if D < 3:
        raise ValueError("capacity in infinite volume needs a transient lattice, D >= 3")
    radii = [radius, 2 * radius, 4 * radius]
    reps = [box_capacity(pts, r) for r in radii]
    caps = [r.capacity for r in reps]
    cap, err = richardson_three(radii, caps, D)
    # spread the extrapolated mass proportionally to the largest box's measure
    e = reps[-1].equilibrium * (cap / caps[-1])
    return CapacityReport(reps[-1].sites, e, cap, "extrapolated", err,
                          meta={"radii": radii, "box_capacities": caps})


def capacity_monte_carlo(K, walkers: int, seed: int, kill_factor: int = 64,
                         threads: int | None = None, batch: int = 4096) -> CapacityReport:
    """Escape-frequency estimate of cap(K) with a far-field return correction.

    Walkers start at each x in K, take a step, and escape if they leave the
    cube of radius ``kill_factor * max(diam K, 1)`` before returning to K.
    Escaped walkers could still come back; for a far exit point ``y`` that
    probability is ``~ g(y) cap(K)``, which gives ``cap = p / (1 + p g_bar)``
    with ``p`` the summed escape frequency and ``g_bar`` the mean far-field
    Green function at exit points.  The raw frequency is also reported.
    """
    pts = _pattern_array(K)
    D = pts.shape[1]
    nK = len(pts)
    diam = int((pts.max(axis=0) - pts.min(axis=0)).max()) if nK > 1 else 0
    R = kill_factor * max(diam, 1)
    center = np.floor_divide(pts.min(axis=0) + pts.max(axis=0), 2)
    lo_b, hi_b = center - R, center + R
    marks = MarkBox.of(pts)
    nbatch = -(-walkers // batch)

    def one(b):
        n = min(batch, walkers - b * batch)
        stream = WordStream(replica_rng(seed, b))
        starts = np.repeat(pts, n, axis=0)
        status, exitpos, _, _ = run_walkers(stream, starts, marks, lo_b, hi_b, stop_on_hit=True)
        esc = (status == 0).reshape(nK, n)
        gbar = np.zeros(nK)
        ex = exitpos.reshape(nK, n, D)
        for i in range(nK):
            if esc[i].any():
                y = ex[i][esc[i]]
                # far-field Green function averaged over K
                g = np.mean([green_asymptotic(y - p, D) for p in pts], axis=0)
                gbar[i] = g.sum()
        return esc.sum(axis=1), gbar

    parts = map_replicas(one, nbatch, threads)
    esc = np.sum([p[0] for p in parts], axis=0)
    gsum = np.sum([p[1] for p in parts], axis=0)
    phat = esc / walkers
    p = float(phat.sum())
    var = float(np.sum(phat * (1 - phat)) / walkers)
    g_bar = float(gsum.sum() / max(esc.sum(), 1))
    cap = p / (1 + p * g_bar)
    # derivative of the correction map is 1/(1 + p g)^2
    se = math.sqrt(var) / (1 + p * g_bar) ** 2
    e = phat / (1 + p * g_bar)
    return CapacityReport(pts, e, cap, "monte-carlo", 3 * se,
                          meta={"walkers_per_site": walkers, "kill_radius": R, "raw_escape": p,
                                "raw_stderr": math.sqrt(var), "mean_exit_green": g_bar,
                                "return_correction": p - cap})


def capacity_infinite(K, radius: int = 8, walkers: int = 0, seed: int = 0,
                      rel_tol: float = 0.01, threads: int | None = None) -> CapacityReport:
    """Extrapolated capacity, cross-validated by Monte Carlo when ``walkers > 0``.

    Disagreement beyond ``rel_tol`` sets ``flagged``.
    """
    rep = capacity_extrapolated(K, radius)
    if walkers > 0:
        mc = capacity_monte_carlo(K, walkers, seed, threads=threads)
        rel = abs(mc.capacity - rep.capacity) / rep.capacity
        rep.meta["monte_carlo"] = mc.to_json()
        rep.meta["relative_gap"] = rel
        rep.error = max(rep.error, abs(mc.capacity - rep.capacity))
        rep.flagged = rel > rel_tol
    return rep


# --------------------------------------------------------------------------
# cylinder slabs

MAX_SLAB_UNKNOWNS = 3_000_000


def slab_for(N: int, d: int, z_center: int, h: int) -> AmbientSet:
    """``T x (z_center - h, z_center + h)``."""
    return AmbientSet.slab(N, d, z_center - h + 1, z_center + h - 1)


def _cyl_sites(C, N: int, d: int) -> np.ndarray:
    pts = _pattern_array(C) if len(C) else np.zeros((0, d + 1), np.int64)
    pts = pts.copy()
    pts[:, :d] %= N
    return np.unique(pts, axis=0) if len(pts) else pts


def cylinder_relative_capacity(C, N: int, d: int, z_center: int, h: int,
                               walkers: int = 20000, seed: int = 0) -> CapacityReport:
    """``cap_{B~}(C)`` for ``B~ = T x (z_center - h, z_center + h)``.

    Exact sparse solve when the slab has at most ``MAX_SLAB_UNKNOWNS``
    sites, escape-frequency Monte Carlo otherwise.
    """
    pts = _cyl_sites(C, N, d)
    if len(pts) == 0:
        return CapacityReport(pts, np.zeros(0), 0.0, "exact-solve")
    if N ** d * (2 * h - 1) <= MAX_SLAB_UNKNOWNS:
        return relative_capacity(pts, slab_for(N, d, z_center, h))
    lo_b = np.full(d + 1, 0, np.int64)
    hi_b = np.full(d + 1, 0, np.int64)
    lo_b[d], hi_b[d] = z_center - h + 1, z_center + h - 1
    stream = WordStream(replica_rng(seed, 0))
    starts = np.repeat(pts, walkers, axis=0)
    status, _, _, _ = run_walkers(stream, starts, MarkBox.of(pts), lo_b, hi_b,
                                  stop_on_hit=True, N=N, periodic=d)
    esc = (status == 0).reshape(len(pts), walkers).mean(axis=1)
    se = math.sqrt(float(np.sum(esc * (1 - esc))) / walkers)
    return CapacityReport(pts, esc, float(esc.sum()), "monte-carlo", 3 * se,
                          meta={"walkers_per_site": walkers})


@dataclass
class UniformStartHitting:
    probability: float
    capacity: float
    ratio: float
    z1: int
    meta: dict = field(default_factory=dict)

    def to_json(self):
        return {"probability": self.probability, "capacity": self.capacity, "ratio": self.ratio,
                "z1": self.z1, "meta": self.meta}


def hitting_probability_uniform_start(C, N: int, d: int, z_center: int, h: int, z1: int) -> UniformStartHitting:
    """``P_{nu_z1}[H_C < T_B~]`` by an exact solve, with the ratio against
    ``(d+1) (h/N^d) cap_B~(C)``.

    One solve gives both numbers: the hitting function averaged over level
    ``z1`` and the escape probabilities read off next to C.
    """
    pts = _cyl_sites(C, N, d)
    if not (z_center - h < z1 < z_center + h):
        raise ValueError("z1 must lie inside the slab")
    if len(pts) == 0:
        return UniformStartHitting(0.0, 0.0, float("nan"), z1)
    U = slab_for(N, d, z_center, h)
    sol = hitting_probabilities(pts, U)
    e = _escape_from_h(sol)
    cap = float(e.sum())
    level = np.flatnonzero(U.sites[:, d] == z1)
    prob = float(sol.h[level].mean())
    ref = (d + 1) * h / N ** d * cap
    return UniformStartHitting(prob, cap, prob / ref if ref else float("nan"), z1,
                               meta={"solver": sol.info.to_json(), "N": N, "d": d, "h": h})
