"""Brownian local time: samplers and the limiting Laplace functional.

Two sampling modes:

* ``exact``: by the strong Markov property at the hitting time ``T_v`` of
  level v, ``L(v,t)`` is 0 if ``T_v > t`` and otherwise distributed as
  ``L(0, t - T_v) = |N(0, t - T_v)|``.  ``T_v`` has the law of ``v^2/G^2``.
* ``srw``: the local time of simple random walk, ``L^{[v sqrt m]}_{[t m]} / sqrt m``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
from scipy import integrate, special

from .rng import WordStream, map_replicas, replica_rng


@dataclass
class LocalTimeLawSample:
    v: float
    t: float
    values: np.ndarray
    mode: str
    m: int = 0

    def to_json(self):
        return {"v": self.v, "t": self.t, "mode": self.mode, "m": self.m, "n": int(len(self.values)),
                "mean": float(self.values.mean()) if len(self.values) else None}


def exact_local_time(v: float, t: float, n: int, rng: np.random.Generator) -> np.ndarray:
    if t <= 0:
        raise ValueError("t must be positive")
    if v == 0:
        return np.abs(rng.normal(0.0, math.sqrt(t), size=n))
    g = rng.normal(size=n)
    with np.errstate(divide="ignore"):
        hit = v * v / (g * g)
    rest = np.clip(t - hit, 0.0, None)
    vals = np.abs(rng.normal(size=n)) * np.sqrt(rest)
    return np.where(hit < t, vals, 0.0)


@numba.njit(nogil=True, cache=True)
def _srw_local_times(buf, idx, n_steps, levels, counts):
    """One SRW path from 0 for ``n_steps`` steps, one bit per step.

    ``counts[j]`` gets the number of times ``0 <= k < n_steps`` with
    ``S_k = levels[j]``.  Returns the new word index or -1.
    """
    nb = buf.shape[0]
    lo = levels.min()
    hi = levels.max()
    s = 0
    k = 0
    while k < n_steps:
        if idx >= nb:
            return -1
        w = np.uint32(buf[idx])
        idx += 1
        take = min(32, n_steps - k)
        for b in range(take):
            if s >= lo and s <= hi:
                for j in range(levels.shape[0]):
                    if levels[j] == s:
                        counts[j] += 1
            s += 2 * np.int64((w >> np.uint32(b)) & np.uint32(1)) - 1
        k += take
    return idx


def srw_local_times(levels: Sequence[float], t: float, m: int, n: int, seed: int,
                    threads: int | None = None, batch: int = 256) -> np.ndarray:
    """Scaled SRW local times at several levels from shared paths, shape (n, len(levels))."""
    if m < 1:
        raise ValueError("fidelity m must be positive")
    lv = np.array([math.floor(v * math.sqrt(m)) for v in levels], dtype=np.int64)
    steps = math.floor(t * m)
    nbatch = -(-n // batch)

    def one(b):
        k = min(batch, n - b * batch)
        stream = WordStream(replica_rng(seed, b), block=max(1 << 16, steps // 32 + 8))
        out = np.zeros((k, len(lv)), np.int64)
        for i in range(k):
            need = steps // 32 + 2
            while True:
                buf, idx = stream.ensure(need)
                c = np.zeros(len(lv), np.int64)
                new = _srw_local_times(buf, idx, steps, lv, c)
                if new >= 0:
                    stream.idx = new
                    out[i] = c
                    break
                need *= 2
        return out

    parts = map_replicas(one, nbatch, threads)
    return np.concatenate(parts).astype(float) / math.sqrt(m)


def sample_brownian_local_time(v: float, t: float, n: int, seed: int, mode: str = "exact",
                               m: int = 10**4, threads: int | None = None) -> LocalTimeLawSample:
    if mode == "exact":
        return LocalTimeLawSample(v, t, exact_local_time(v, t, n, replica_rng(seed, 0)), mode)
    if mode == "srw":
        if m < 10**4:
            raise ValueError("srw mode needs fidelity m >= 10^4")
        vals = srw_local_times([v], t, m, n, seed, threads)[:, 0]
        return LocalTimeLawSample(v, t, vals, mode, m)
    raise ValueError(f"unknown sampling mode {mode!r}")


# --------------------------------------------------------------------------
# the limiting functional


@dataclass
class ReferenceValue:
    value: float
    error: float
    method: str

    def to_json(self):
        return {"value": self.value, "error": self.error, "method": self.method}


def laplace_half_normal(s: float) -> float:
    """``E[exp(-s |G|)]`` for standard normal G, in closed form."""
    return float(special.erfcx(s / math.sqrt(2)))


def reference_functional_A(v: Sequence[float], alpha: float, d: int, caps: Sequence[float],
                           lams: Sequence[float], method: str = "quadrature",
                           n: int = 200_000, seed: int = 0, m: int = 10**4) -> ReferenceValue:
    """``A = E[exp(-sum_i (d+1) L(v_i, alpha/(d+1)) (cap_i + lam_i))]``.

    ``quadrature`` handles one point at v = 0 by integrating against the
    half-normal density; ``mc`` averages over local times sampled at all
    levels from shared SRW paths of fidelity ``m`` (exact sampling when
    there is a single level).
    """
    if not (len(v) == len(caps) == len(lams)) or not v:
        raise ValueError("need matching, non-empty v, caps and lams")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    c = np.asarray(caps, float) + np.asarray(lams, float)
    if np.all(c == 0):
        return ReferenceValue(1.0, 0.0, "trivial")
    t = alpha / (d + 1)
    if method == "quadrature":
        if len(v) != 1 or v[0] != 0:
            raise ValueError("quadrature needs a single point at v = 0")
        s = (d + 1) * math.sqrt(t) * c[0]
        f = lambda x: math.exp(-s * x) * math.sqrt(2 / math.pi) * math.exp(-x * x / 2)
        val, err = integrate.quad(f, 0, math.inf, epsabs=1e-13, epsrel=1e-12)
        return ReferenceValue(val, err, "quadrature")
    if method == "mc":
        if len(v) == 1:
            L = exact_local_time(v[0], t, n, replica_rng(seed, 0))[:, None]
        else:
            L = srw_local_times(v, t, m, n, seed)
        x = np.exp(-(d + 1) * (L @ c))
        return ReferenceValue(float(x.mean()), float(3 * x.std(ddof=1) / math.sqrt(n)), "mc")
    raise ValueError(f"unknown method {method!r}")
