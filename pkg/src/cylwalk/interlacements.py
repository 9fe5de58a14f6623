"""Vacant set of random interlacements on a finite window of Z^D.

The trajectories that meet a finite box ``B`` form a Poisson process with
mass ``u cap(B)``; each enters ``B`` according to the normalised
equilibrium measure and then moves as simple random walk.  We run each one
forward until it leaves a kill box.  A killed walker at ``y`` would return
to ``B`` with probability ``q(y) = sum_x g(y - x) e_B(x)``; with
``reentry=True`` that return is simulated (entering again through the
equilibrium measure), which removes the leading truncation bias.

All levels requested in one call share a single Poisson clock: each
trajectory carries a uniform label in ``[0, u_max]`` and level ``u`` uses
those with label at most ``u``.  Vacant sets are therefore nested in ``u``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lattice import Pattern
from .potential import CapacityReport, MarkBox, capacity_extrapolated, green_asymptotic, run_walkers
from .rng import WordStream, map_replicas, replica_rng

DEFAULT_KILL_FACTOR = 32
MAX_KILL_FACTOR = 512


def vacancy_probability_closed_form(u: float, cap: float) -> float:
    """``exp(-u cap(K))``."""
    if u < 0:
        raise ValueError("level u must be non-negative")
    return math.exp(-u * cap)


@dataclass
class InterlacementSample:
    """Vacancy bits on the sites of ``B`` for one or more levels.

    ``bits[r, j, s]`` is 1 when site ``s`` is vacant at level ``levels[j]``
    in replica ``r``.
    """

    levels: tuple[float, ...]
    sites: np.ndarray
    bits: np.ndarray
    n_traj: np.ndarray
    cap_B: float
    kill_radius: int
    reentry: bool
    truncation: dict = field(default_factory=dict)

    def site_index(self, pts) -> np.ndarray:
        lookup = {tuple(s): i for i, s in enumerate(self.sites.tolist())}
        try:
            return np.array([lookup[tuple(int(c) for c in p)] for p in pts], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"site {exc.args[0]} is not in the sampled box") from exc

    def vacant(self, K, level: float) -> np.ndarray:
        """Per-replica indicator that every site of K is vacant at ``level``."""
        j = self.levels.index(level)
        idx = self.site_index(_as_points(K))
        return np.all(self.bits[:, j, idx] == 1, axis=1)

    def frequency(self, K, level: float) -> tuple[float, float]:
        """Empirical ``P[K vacant]`` and its standard error."""
        v = self.vacant(K, level)
        p = float(v.mean())
        return p, math.sqrt(max(p * (1 - p), 1e-300) / len(v))

    def to_json(self):
        return {
            "levels": list(self.levels),
            "sites": self.sites.tolist(),
            "replicas": int(self.bits.shape[0]),
            "cap_B": self.cap_B,
            "kill_radius": self.kill_radius,
            "reentry": self.reentry,
            "mean_trajectories": [float(x) for x in self.n_traj.mean(axis=0)],
            "truncation": self.truncation,
        }


def _as_points(K) -> np.ndarray:
    if isinstance(K, Pattern):
        return np.asarray(K.offsets, dtype=np.int64)
    return np.asarray(K, dtype=np.int64).reshape(len(K), -1)


def _return_probability(y: np.ndarray, sites: np.ndarray, e: np.ndarray) -> np.ndarray:
    D = sites.shape[1]
    q = np.zeros(len(y))
    for s, w in zip(sites, e):
        q += w * green_asymptotic(y - s, D)
    return np.minimum(q, 1.0)


def _far_return_estimate(cap: float, R: int, D: int) -> float:
    """Return probability for a walker killed on the cube of radius R."""
    return min(1.0, cap * float(green_asymptotic(np.array([[R] + [0] * (D - 1)]), D)[0]))


def choose_kill_factor(levels: Sequence[float], cap_B: float, diam: int, D: int, replicas: int,
                       reentry: bool, start: int = DEFAULT_KILL_FACTOR) -> int:
    """Double the kill factor until the estimated uncorrected truncation error
    drops below a tenth of the statistical error of a frequency near 1/2,
    stopping at ``MAX_KILL_FACTOR``."""
    budget = 0.1 * 0.5 / math.sqrt(max(replicas, 1))
    f = start
    while f < MAX_KILL_FACTOR:
        R = f * max(diam, 1)
        ret = max(levels) * cap_B * _far_return_estimate(cap_B, R, D)
        if reentry:
            ret *= (diam + 1) / R
        if ret <= budget:
            break
        f *= 2
    return f


def sample_vacant(levels: Sequence[float] | float, B, replicas: int, seed: int,
                  kill_factor: int | None = DEFAULT_KILL_FACTOR, reentry: bool = True,
                  cap_report: CapacityReport | None = None, threads: int | None = None,
                  batch: int = 2048) -> InterlacementSample:
    """Sample the vacancy bits of interlacements on the finite set ``B``.

    ``kill_factor=None`` selects it with :func:`choose_kill_factor`.
    """
    levels = (float(levels),) if np.isscalar(levels) else tuple(float(u) for u in levels)
    if any(u < 0 for u in levels):
        raise ValueError("level u must be non-negative")
    sites = _as_points(B)
    D = sites.shape[1]
    if D < 3:
        raise ValueError("interlacements need a transient lattice, D >= 3")
    rep = cap_report or capacity_extrapolated(sites)
    # order the equilibrium measure like the sites of B
    order = {tuple(s): i for i, s in enumerate(rep.sites.tolist())}
    e = np.array([rep.equilibrium[order[tuple(s)]] for s in sites.tolist()])
    cap = float(e.sum())
    ebar = e / cap
    diam = int((sites.max(axis=0) - sites.min(axis=0)).max()) if len(sites) > 1 else 0
    if kill_factor is None:
        kill_factor = choose_kill_factor(levels, cap, diam, D, replicas, reentry)
    R = kill_factor * max(diam, 1)
    center = np.floor_divide(sites.min(axis=0) + sites.max(axis=0), 2)
    lo_b, hi_b = center - R, center + R
    marks = MarkBox.of(sites)
    flat = marks.flat(sites)
    u_max = max(levels) if levels else 0.0
    nbatch = -(-replicas // batch)

    def one(b):
        r0 = b * batch
        nr = min(batch, replicas - r0)
        words = WordStream(replica_rng(seed, b, 0))
        aux = replica_rng(seed, b, 1)
        counts = aux.poisson(u_max * cap, size=nr) if u_max > 0 else np.zeros(nr, np.int64)
        owner = np.repeat(np.arange(nr), counts)
        labels = aux.uniform(0.0, u_max, size=len(owner)) if u_max > 0 else np.zeros(0)
        start_idx = aux.choice(len(sites), size=len(owner), p=ebar)
        hit = np.zeros((len(owner), len(sites)), bool)
        starts = sites[start_idx]
        active = np.arange(len(owner))
        q_sum = 0.0
        rounds = 0
        while len(active):
            _, exitpos, _, visited = run_walkers(words, starts, marks, lo_b, hi_b,
                                                 stop_on_hit=False, track=True)
            hit[active] |= visited[:, flat].astype(bool)
            q = _return_probability(exitpos, sites, e)
            q_sum += float(q.sum())
            if not reentry:
                break
            back = aux.uniform(size=len(q)) < q
            active = active[back]
            starts = sites[aux.choice(len(sites), size=len(active), p=ebar)]
            rounds += 1
        bits = np.ones((nr, len(levels), len(sites)), np.uint8)
        ntraj = np.zeros((nr, len(levels)), np.int64)
        for j, u in enumerate(levels):
            use = labels <= u
            np.add.at(ntraj[:, j], owner[use], 1)
            touched = np.zeros((nr, len(sites)), bool)
            np.logical_or.at(touched, owner[use], hit[use])
            bits[:, j, :] = ~touched
        return bits, ntraj, q_sum, rounds

    parts = map_replicas(one, nbatch, threads)
    bits = np.concatenate([p[0] for p in parts])
    ntraj = np.concatenate([p[1] for p in parts])
    q_mean = sum(p[2] for p in parts) / replicas
    # first-round q at full level u_max; rescale linearly per level
    uncorrected = {str(u): (q_mean * u / u_max if u_max > 0 else 0.0) for u in levels}
    residual = {k: v * (diam + 1) / R if reentry else v for k, v in uncorrected.items()}
    trunc = {
        "kill_factor": kill_factor,
        "return_probability_per_replica": uncorrected,
        "bias_bound": residual,
        "reentry_rounds_max": max(p[3] for p in parts),
    }
    return InterlacementSample(levels, sites, bits, ntraj, cap, R, reentry, trunc)
