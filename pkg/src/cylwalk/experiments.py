"""Experiment definitions and their runners.

Each experiment kind has a config dataclass (defaults are the full-scale
settings) and a runner returning a :class:`~cylwalk.results.RunResult`
with estimates, pass/fail gates, tables and plots.
"""
from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, ClassVar

import numpy as np

from . import brownian, coupling, potential
from .excursions import (ExcursionDetector, GridSpec, build_grid, compute_schedule,
                         expected_exit_local_time, hit_before_exit)
from .interlacements import sample_vacant, vacancy_probability_closed_form
from .lattice import CylinderPoint, Pattern, TorusParams, Window, linf_distance, parse_pattern
from .results import Gate, RunResult, Table, ladder_plot
from .rng import default_threads, derive_seed, map_replicas
from .stats import (binomial_z, hoeffding_halfwidth, ks_two_sample, mean_and_se,
                    nondecreasing_gate, nonincreasing_gate)
from .walk import (LazyWalkParams, LocalTimeObserver, Start, WalkConfig, WindowObserver,
                   run_lazy_walk, run_walk)


class ExperimentError(ValueError):
    pass


# --------------------------------------------------------------------------
# configs


def _coerce(default, value):
    if isinstance(default, bool):
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes", "on")
        return bool(value)
    if isinstance(default, int) and not isinstance(value, bool):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return _tuplify(value)
    if isinstance(default, str):
        return str(value)
    return value


def _tuplify(v):
    if isinstance(v, (list, tuple)):
        return tuple(_tuplify(x) for x in v)
    return v


@dataclass(frozen=True)
class ConfigBase:
    kind: ClassVar[str] = ""

    @classmethod
    def from_dict(cls, values: dict) -> "ConfigBase":
        names = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for k, v in values.items():
            if k in ("schema_version", "kind"):
                continue
            if k not in names:
                raise ExperimentError(f"unknown key {k!r} for experiment kind {cls.kind!r}")
            kw[k] = _coerce(names[k].default, v)
        return cls(**kw)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **dataclasses.asdict(self)}


@dataclass(frozen=True)
class TheoremConfig(ConfigBase):
    kind: ClassVar[str] = "theorem01"
    d: int = 2
    ladder: tuple = (8, 12, 16, 24)
    alpha: float = 1.0
    v: tuple = (0.0,)
    patterns: tuple = ("[(0,0,0)]",)
    lambda_sets: tuple = ((0.0,), (1.0,))
    replicas: int = 20000
    seed: int = 20240601
    cap_radius: int = 8
    oracle_samples: int = 1_000_000
    ci_level: float = 0.99
    gate_abs: float = 0.05
    gate_ks: float = 0.05
    step_budget: int = 0


@dataclass(frozen=True)
class Prop21Config(ConfigBase):
    kind: ClassVar[str] = "prop21"
    gammas: tuple = ("1", "1/3")
    a_ladder: tuple = (300, 1000, 3000)
    h_exponent: float = 0.25
    d_N: int = 0
    rho: float = 1.0
    replicas: int = 400
    seed: int = 20240602
    bound_215: float = 2.0
    gate_213: float = 0.9
    gate_216: float = 0.1
    martingale_d: int = 2
    martingale_k: int = 200
    martingale_replicas: int = 2000


@dataclass(frozen=True)
class Lemma31Config(ConfigBase):
    kind: ClassVar[str] = "lemma31"
    d: int = 2
    ladder: tuple = (6, 10, 14)
    replica_factor: float = 2.0
    # fixed per-rung count; 0 means replica_factor * N^(2d)
    replicas: int = 0
    seed: int = 20240603
    gate_tv: float = 0.05


@dataclass(frozen=True)
class Lemma42Config(ConfigBase):
    kind: ClassVar[str] = "lemma42"
    d: int = 2
    ladder: tuple = ((16, 8, 2), (24, 16, 2), (40, 32, 2))
    pattern: str = "[(0,0,0)]"
    ratio_factor: float = 5.0
    cap_tol: float = 0.05
    cap_radius: int = 8
    seed: int = 20240604


@dataclass(frozen=True)
class CouplingExperimentConfig(ConfigBase):
    kind: ClassVar[str] = "coupling"
    N: int = 16
    d: int = 2
    h_N: int = 64
    d_N: int = 16
    alpha: float = 4.0
    sites: tuple = ((0, 0, 0), (8, 8, 0), (4, 12, 8), (12, 4, -8))
    replicas: int = 10000
    seed: int = 20240605
    z_gate: float = 3.0
    p_gate: float = 0.01
    permutations: int = 2000


@dataclass(frozen=True)
class CapacityConfig(ConfigBase):
    kind: ClassVar[str] = "capacity"
    pattern: str = "[(0,0,0)]"
    radius: int = 8
    walkers: int = 400_000
    seed: int = 20240606
    rel_tol: float = 0.01
    ambient_radius: int = 0


@dataclass(frozen=True)
class InterlaceConfig(ConfigBase):
    kind: ClassVar[str] = "interlace"
    levels: tuple = (0.5, 1.0, 2.0)
    box: str = "[(0,0,0),(1,0,0),(0,1,0),(1,1,0)]"
    patterns: tuple = ("[(0,0,0)]", "[(0,0,0),(1,0,0)]", "[(0,0,0),(1,0,0),(0,1,0),(1,1,0)]")
    replicas: int = 100_000
    seed: int = 20240607
    kill_factor: int = 32
    reentry: bool = True
    cap_radius: int = 8


@dataclass(frozen=True)
class SimulateConfig(ConfigBase):
    kind: ClassVar[str] = "simulate"
    N: int = 8
    d: int = 2
    steps: int = 4096
    start_z: int = 0
    heights: tuple = (0,)
    windows: tuple = ()
    replicas: int = 4
    seed: int = 1


CONFIGS: dict[str, type[ConfigBase]] = {
    c.kind: c for c in (TheoremConfig, Prop21Config, Lemma31Config, Lemma42Config,
                        CouplingExperimentConfig, CapacityConfig, InterlaceConfig, SimulateConfig)
}


def config_from_dict(values: dict) -> ConfigBase:
    kind = values.get("kind")
    if kind not in CONFIGS:
        raise ExperimentError(f"unknown experiment kind {kind!r}; expected one of {sorted(CONFIGS)}")
    return CONFIGS[kind].from_dict(values)


def _pattern(text) -> Pattern:
    return text if isinstance(text, Pattern) else parse_pattern(text)


# --------------------------------------------------------------------------
# theorem: Laplace functional and local time law


def _theorem_windows(cfg: TheoremConfig, N: int):
    params = TorusParams(N, cfg.d)
    M = len(cfg.v)
    heights, windows = [], []
    for i, (v, ptext) in enumerate(zip(cfg.v, cfg.patterns)):
        y = tuple([(i * N) // M] * cfg.d)
        z = math.floor(v * N ** cfg.d)
        w = Window(CylinderPoint(y, z, N), _pattern(ptext), params)
        if w.wrapped:
            raise ExperimentError(f"window {i} wraps around the torus at N={N}")
        windows.append(w)
        heights.append(z)
    for i in range(M):
        for j in range(i + 1, M):
            sep = min(linf_distance(a, b, params) for a in windows[i].sites for b in windows[j].sites)
            if sep < N / 4:
                raise ExperimentError(f"windows {i} and {j} are {sep} apart at N={N}, need at least N/4")
    return params, windows, heights


def estimate_theorem_functional(cfg: TheoremConfig, threads: int | None = None) -> RunResult:
    t_start = time.perf_counter()
    M = len(cfg.v)
    if not (len(cfg.patterns) == M and all(len(ls) == M for ls in cfg.lambda_sets)):
        raise ExperimentError("v, patterns and every lambda set need one entry per window")
    if cfg.alpha <= 0:
        raise ExperimentError("alpha must be positive")
    caps = [potential.capacity_extrapolated(_pattern(p), cfg.cap_radius).capacity for p in cfg.patterns]
    t_lim = cfg.alpha / (cfg.d + 1)
    refs = []
    for lams in cfg.lambda_sets:
        method = "quadrature" if M == 1 and cfg.v[0] == 0 else "mc"
        refs.append(brownian.reference_functional_A(list(cfg.v), cfg.alpha, cfg.d, caps, list(lams),
                                                    method=method, seed=derive_seed(cfg.seed, 99)))
    oracle = [(cfg.d + 1) * brownian.exact_local_time(v, t_lim, cfg.oracle_samples,
                                                       np.random.default_rng(derive_seed(cfg.seed, 98, i)))
              for i, v in enumerate(cfg.v)]
    rungs, skipped = [], []
    for N in cfg.ladder:
        params, windows, heights = _theorem_windows(cfg, N)
        T = math.floor(cfg.alpha * N ** (2 * cfg.d))
        if cfg.step_budget and T * cfg.replicas > cfg.step_budget:
            skipped.append({"N": N, "reason": f"needs {T * cfg.replicas} steps, budget {cfg.step_budget}"})
            continue
        seed_N = derive_seed(cfg.seed, N)
        scale = N ** cfg.d

        def one(r, params=params, windows=windows, heights=heights, T=T, seed_N=seed_N):
            wo = WindowObserver(windows)
            lo = LocalTimeObserver(heights)
            res = run_walk(WalkConfig(params, Start.uniform_level0(), seed_N, T, replica=r), [wo, lo])
            snap = wo.snapshot(res.steps)
            return [w.all_vacant() for w in snap], [lo.table[z] for z in heights]

        outs = map_replicas(one, cfg.replicas, threads)
        avoid = np.array([o[0] for o in outs], dtype=float)
        L = np.array([o[1] for o in outs], dtype=float) / scale
        n = cfg.replicas
        hw = hoeffding_halfwidth(n, cfg.ci_level)
        rung = {"N": N, "T_N": T, "replicas": n, "hoeffding_halfwidth": hw, "functionals": []}
        for lams, ref in zip(cfg.lambda_sets, refs):
            stat = avoid.prod(axis=1) * np.exp(-(L @ np.asarray(lams, float)))
            a_hat = float(stat.mean())
            rung["functionals"].append({"lambdas": list(lams), "A_hat": a_hat, "A": ref.value,
                                        "abs_error": abs(a_hat - ref.value),
                                        "stderr": float(stat.std(ddof=1) / math.sqrt(n))})
        rung["local_time"] = []
        for i, v in enumerate(cfg.v):
            ks, p = ks_two_sample(L[:, i], oracle[i])
            m = len(oracle[i])
            band = 1.36 * math.sqrt((n + m) / (n * m))
            lim_mean = float(oracle[i].mean()) if v != 0 else (cfg.d + 1) * math.sqrt(2 * t_lim / math.pi)
            rung["local_time"].append({"height": heights[i], "ks": ks, "ks_pvalue": p, "ks_band": band,
                                       "mean": float(L[:, i].mean()), "limit_mean": lim_mean,
                                       "mean_ratio": float(L[:, i].mean()) / lim_mean})
        if M >= 2:
            rung["conditional_covariance"] = _binned_covariance(avoid[:, 0], avoid[:, 1], L[:, 0])
        rungs.append(rung)

    gates = {}
    Ns = [r["N"] for r in rungs]
    tables = {"functional": Table(["N", "lambdas", "A_hat", "A", "abs_error", "hoeffding_halfwidth", "stderr"], []),
              "local_time": Table(["N", "window", "ks", "ks_band", "mean", "limit_mean", "mean_ratio"], [])}
    plots = []
    series_f = {}
    for j, lams in enumerate(cfg.lambda_sets):
        errs = [r["functionals"][j]["abs_error"] for r in rungs]
        hws = [r["hoeffding_halfwidth"] for r in rungs]
        tag = ",".join(f"{x:g}" for x in lams)
        if rungs:
            gates[f"abs_error_trend[lambda={tag}]"] = Gate(nonincreasing_gate(errs, hws).passed,
                                                            nonincreasing_gate(errs, hws).to_json())
            gates[f"abs_error_top[lambda={tag}]"] = Gate(errs[-1] <= cfg.gate_abs,
                                                          {"N": Ns[-1], "value": errs[-1], "limit": cfg.gate_abs})
        series_f[f"lambda={tag}"] = (errs, hws)
        for r in rungs:
            f = r["functionals"][j]
            tables["functional"].rows.append([r["N"], tag, f["A_hat"], f["A"], f["abs_error"],
                                              r["hoeffding_halfwidth"], f["stderr"]])
    series_k = {}
    for i in range(M):
        ks = [r["local_time"][i]["ks"] for r in rungs]
        bands = [r["local_time"][i]["ks_band"] for r in rungs]
        if rungs:
            g = nonincreasing_gate(ks, bands)
            gates[f"ks_trend[window={i}]"] = Gate(g.passed, g.to_json())
            gates[f"ks_top[window={i}]"] = Gate(ks[-1] <= cfg.gate_ks, {"N": Ns[-1], "value": ks[-1],
                                                                         "limit": cfg.gate_ks})
        series_k[f"window {i}"] = (ks, bands)
        for r in rungs:
            lt = r["local_time"][i]
            tables["local_time"].rows.append([r["N"], i, lt["ks"], lt["ks_band"], lt["mean"],
                                              lt["limit_mean"], lt["mean_ratio"]])
    if rungs:
        plots.append(ladder_plot("functional_error", "N", "|A_N - A|", Ns, series_f))
        plots.append(ladder_plot("local_time_ks", "N", "KS distance", Ns, series_k))
    est = {"caps": caps, "reference": [r.to_json() for r in refs], "rungs": rungs, "skipped": skipped}
    return RunResult("theorem01", cfg.to_dict(), cfg.seed, est, gates, tables, plots,
                     {"seconds": time.perf_counter() - t_start, "threads": threads or default_threads()})


def _binned_covariance(a, b, level, bins: int = 4) -> dict:
    qs = np.quantile(level, np.linspace(0, 1, bins + 1))
    idx = np.clip(np.searchsorted(qs, level, side="right") - 1, 0, bins - 1)
    covs, weights = [], []
    for k in range(bins):
        sel = idx == k
        if sel.sum() > 2:
            covs.append(float(np.cov(a[sel], b[sel])[0, 1]))
            weights.append(int(sel.sum()))
    avg = float(np.average(covs, weights=weights)) if covs else float("nan")
    return {"per_bin": covs, "weights": weights, "weighted": avg}


def local_time_distribution_check(cfg: TheoremConfig, threads: int | None = None) -> RunResult:
    """The local-time part of the theorem run (KS per rung); same simulation."""
    res = estimate_theorem_functional(cfg, threads)
    res.gates = {k: g for k, g in res.gates.items() if k.startswith("ks_")}
    return res


# --------------------------------------------------------------------------
# excursions and local time under Q^gamma


def _prop21_grid(cfg: Prop21Config, a: int, d_N: int) -> GridSpec:
    h = max(2, math.ceil(a ** cfg.h_exponent))
    return GridSpec(a, h, min(d_N, h - 1), (0,), strict=False)


def _prop21_rung(cfg: Prop21Config, gamma: Fraction, a: int, threads) -> dict:
    spec = _prop21_grid(cfg, a, cfg.d_N)
    grid = build_grid(spec)
    sched = compute_schedule(spec, gamma, Fraction(cfg.rho).limit_denominator(10**6))
    h, dn = spec.h_N, spec.d_N
    centers = [-2 * h, 0, 2 * h]
    track = sorted({g + o for g in centers for o in (-dn, 0, dn)})
    seed = derive_seed(cfg.seed, a, gamma.numerator, gamma.denominator)
    ks, kS, T = sched.k_star, sched.k_upper_star, sched.T
    if ks < 1:
        raise ExperimentError(f"k_* = {ks} < 1 at a_N={a}")

    def one(r):
        det = ExcursionDetector(grid, track_heights=track, snapshot_times=[T],
                                capacity=2 * kS + 1024, stop_k=ks, stop_after=T)
        run_lazy_walk(LazyWalkParams(gamma), 0, det, seed, replica=r)
        log = det.log()
        ev = bool(log.D[ks - 1] <= T and int(np.count_nonzero(log.D < T)) < kS)
        LT = log.lt_at_snapshots[0]
        LD = log.lt_at_D[ks - 1]
        e214 = np.minimum(np.abs(LT - LD) / a, 1.0)
        n_ret = [log.returns_to(grid.I(g), ks) for g in centers]
        e216 = []
        for j, z in enumerate(log.tracked):
            g = grid.center(z)
            proxy = float(Fraction(h) / gamma) * n_ret[centers.index(g)]
            e216.append(abs(LD[j] - proxy) / a)
        return ev, e214, np.array(n_ret, float) * h / a, np.array(e216)

    outs = map_replicas(one, cfg.replicas, threads)
    n = cfg.replicas
    ev = np.array([o[0] for o in outs], float)
    e214 = np.stack([o[1] for o in outs]).mean(axis=0)
    e214_se = np.stack([o[1] for o in outs]).std(axis=0, ddof=1) / math.sqrt(n)
    s215 = np.stack([o[2] for o in outs]).mean(axis=0)
    e216_all = np.stack([o[3] for o in outs])
    e216 = e216_all.mean(axis=0)
    e216_se = e216_all.std(axis=0, ddof=1) / math.sqrt(n)
    j214 = int(np.argmax(e214))
    j216 = int(np.argmax(e216))
    p = float(ev.mean())
    return {
        "a_N": a, "grid": spec.to_json(), "schedule": sched.to_json(), "replicas": n,
        "tracked": track,
        "p_213": p, "p_213_se": math.sqrt(max(p * (1 - p), 1 / n) / n),
        "e_214": e214.tolist(), "e_214_max": float(e214[j214]), "e_214_max_se": float(e214_se[j214]),
        "s_215": s215.tolist(), "s_215_max": float(s215.max()),
        "e_216": e216.tolist(), "e_216_max": float(e216[j216]), "e_216_max_se": float(e216_se[j216]),
        "martingale": _martingale_check(cfg, gamma, a, threads),
    }


def _martingale_check(cfg: Prop21Config, gamma: Fraction, a: int, threads) -> dict:
    """Increments of ``L^z_{D_k}`` minus the exact compensator have mean 0."""
    spec = _prop21_grid(cfg, a, cfg.martingale_d)
    grid = build_grid(spec)
    h, dn = spec.h_N, spec.d_N
    sched = compute_schedule(spec, gamma, Fraction(cfg.rho).limit_denominator(10**6))
    K = max(1, min(sched.k_star, cfg.martingale_k))
    heights = sorted({0, dn})
    comp = {z: {zr: float(hit_before_exit(zr, z, 0, h) * expected_exit_local_time(z, 0, h, gamma))
                for zr in range(-dn, dn + 1)} for z in heights}
    seed = derive_seed(cfg.seed, a, gamma.numerator, gamma.denominator, 7)
    lo, hi = grid.I(0)

    def one(r):
        det = ExcursionDetector(grid, track_heights=heights, capacity=K + 16, stop_k=K)
        run_lazy_walk(LazyWalkParams(gamma), 0, det, seed, replica=r)
        log = det.log()
        inc = np.diff(np.vstack([np.zeros((1, len(heights))), log.lt_at_D[:K]]), axis=0)
        for k in range(K):
            zr = int(log.ZR[k])
            if lo <= zr <= hi:
                for j, z in enumerate(log.tracked):
                    inc[k, j] -= comp[z][zr]
        return inc

    incs = np.concatenate(map_replicas(one, cfg.martingale_replicas, threads))
    out = {"grid": spec.to_json(), "k_range": [1, K], "heights": heights, "per_height": []}
    for j, z in enumerate(heights):
        m, se = mean_and_se(incs[:, j])
        out["per_height"].append({"z": z, "mean": m, "stderr": se, "z_score": m / se if se > 0 else 0.0})
    return out


def verify_prop21(cfg: Prop21Config, threads: int | None = None) -> RunResult:
    t_start = time.perf_counter()
    results, gates = {}, {}
    tables = {"prop21": Table(["gamma", "a_N", "h_N", "d_N", "T", "k_star", "k_upper_star", "p_213",
                               "e_214_max", "s_215_max", "e_216_max"], [])}
    plots = []
    for gtext in cfg.gammas:
        gamma = Fraction(str(gtext))
        rungs = [_prop21_rung(cfg, gamma, a, threads) for a in cfg.a_ladder]
        results[str(gamma)] = rungs
        tag = f"gamma={gamma}"
        p = [r["p_213"] for r in rungs]
        pse = [3 * r["p_213_se"] for r in rungs]
        g = nondecreasing_gate(p, pse)
        gates[f"p213_trend[{tag}]"] = Gate(g.passed, g.to_json())
        gates[f"p213_top[{tag}]"] = Gate(p[-1] >= cfg.gate_213, {"value": p[-1], "limit": cfg.gate_213})
        e214 = [r["e_214_max"] for r in rungs]
        e216 = [r["e_216_max"] for r in rungs]
        g = nonincreasing_gate(e216, [3 * r["e_216_max_se"] for r in rungs])
        gates[f"e216_trend[{tag}]"] = Gate(g.passed, g.to_json())
        gates[f"e216_top[{tag}]"] = Gate(e216[-1] <= cfg.gate_216, {"value": e216[-1], "limit": cfg.gate_216})
        s215 = [r["s_215_max"] for r in rungs]
        gates[f"s215_bounded[{tag}]"] = Gate(max(s215) <= cfg.bound_215, {"values": s215, "bound": cfg.bound_215})
        zs = [ph["z_score"] for r in rungs for ph in r["martingale"]["per_height"]]
        gates[f"martingale[{tag}]"] = Gate(all(abs(z) <= 3 for z in zs), {"z_scores": zs})
        for r in rungs:
            tables["prop21"].rows.append([str(gamma), r["a_N"], r["grid"]["h_N"], r["grid"]["d_N"],
                                          r["schedule"]["T"], r["schedule"]["k_star"],
                                          r["schedule"]["k_upper_star"], r["p_213"], r["e_214_max"],
                                          r["s_215_max"], r["e_216_max"]])
        plots.append(ladder_plot(f"prop21_gamma_{gamma.numerator}_{gamma.denominator}", "a_N", "value",
                                 cfg.a_ladder, {"P[D_k* <= T <= D_k^*]": (p, pse),
                                                "local time gap (T vs D_k*)": (e214, None),
                                                "proxy error": (e216, None)}))
    return RunResult("prop21", cfg.to_dict(), cfg.seed, {"gammas": results}, gates, tables, plots,
                     {"seconds": time.perf_counter() - t_start, "threads": threads or default_threads()})


# --------------------------------------------------------------------------
# homogenization


def lemma31_grid(N: int, d: int):
    h = math.ceil(N * math.log(N) ** 2)
    dn = math.ceil(math.sqrt(h))
    return build_grid(GridSpec(N ** d, h, dn, (0,), strict=False))


def verify_lemma31(cfg: Lemma31Config, threads: int | None = None) -> RunResult:
    t_start = time.perf_counter()
    reps = []
    for N in cfg.ladder:
        grid = lemma31_grid(N, cfg.d)
        n = cfg.replicas or math.ceil(cfg.replica_factor * N ** (2 * cfg.d))
        reps.append(coupling.homogenization_test(N, cfg.d, grid, grid.h, n, derive_seed(cfg.seed, N),
                                                 threads=threads))
    tv = [r.tv for r in reps]
    strictly = all(b < a for a, b in zip(tv, tv[1:]))
    gates = {
        "tv_strictly_decreasing": Gate(strictly, {"tv": tv}),
        "tv_top": Gate(tv[-1] <= cfg.gate_tv, {"value": tv[-1], "limit": cfg.gate_tv}),
        "sample_sufficient": Gate(not any(r.flagged for r in reps), {"flagged": [r.flagged for r in reps]}),
    }
    table = Table(["N", "h_N", "d_N", "samples", "tv", "tv_floor", "tv_debiased"],
                  [[r.N, r.h_N, r.d_N, r.samples, r.tv, r.tv_floor, r.tv_debiased] for r in reps])
    plot = ladder_plot("lemma31_tv", "N", "TV distance", cfg.ladder,
                       {"TV": (tv, None), "noise floor": ([r.tv_floor for r in reps], None)})
    return RunResult("lemma31", cfg.to_dict(), cfg.seed, {"rungs": [r.to_json() for r in reps]}, gates,
                     {"lemma31": table}, [plot],
                     {"seconds": time.perf_counter() - t_start, "threads": threads or default_threads()})


# --------------------------------------------------------------------------
# hitting from a uniform level


def verify_lemma42(cfg: Lemma42Config, threads: int | None = None) -> RunResult:
    t_start = time.perf_counter()
    K = _pattern(cfg.pattern)
    cap_inf = potential.capacity_extrapolated(K, cfg.cap_radius).capacity
    rungs = []
    for N, h, dn in cfg.ladder:
        rung = {"N": N, "h_N": h, "d_N": dn, "z1": []}
        for z1 in (dn, -dn):
            r = potential.hitting_probability_uniform_start(K, N, cfg.d, 0, h, z1)
            rung["z1"].append({"z1": z1, "probability": r.probability, "ratio": r.ratio,
                               "ratio_minus_1": r.ratio - 1})
            rung["capacity"] = r.capacity
            rung["solver"] = r.meta["solver"]
        rung["cap_rel_error"] = rung["capacity"] / cap_inf - 1
        rung["ratio_bound"] = cfg.ratio_factor * dn / h
        rung["fitted_c"] = max(abs(z["ratio_minus_1"]) for z in rung["z1"]) * h / dn
        rungs.append(rung)
    gates = {
        "ratio_within_bound": Gate(all(abs(z["ratio_minus_1"]) <= r["ratio_bound"] for r in rungs for z in r["z1"]),
                                   {"ratio_minus_1": [[z["ratio_minus_1"] for z in r["z1"]] for r in rungs],
                                    "bounds": [r["ratio_bound"] for r in rungs]}),
        "capacity_top": Gate(abs(rungs[-1]["cap_rel_error"]) <= cfg.cap_tol,
                             {"value": rungs[-1]["cap_rel_error"], "limit": cfg.cap_tol, "cap_inf": cap_inf}),
    }
    table = Table(["N", "h_N", "d_N", "z1", "probability", "ratio", "capacity", "cap_rel_error"],
                  [[r["N"], r["h_N"], r["d_N"], z["z1"], z["probability"], z["ratio"], r["capacity"],
                    r["cap_rel_error"]] for r in rungs for z in r["z1"]])
    x = [r["d_N"] / r["h_N"] for r in rungs]
    plot = ladder_plot("lemma42_ratio", "d_N / h_N", "|ratio - 1|", x,
                       {"|ratio - 1|": ([abs(r["z1"][0]["ratio_minus_1"]) for r in rungs], None),
                        "5 d_N/h_N": ([r["ratio_bound"] for r in rungs], None)})
    return RunResult("lemma42", cfg.to_dict(), cfg.seed, {"cap_inf": cap_inf, "rungs": rungs}, gates,
                     {"lemma42": table}, [plot],
                     {"seconds": time.perf_counter() - t_start, "threads": threads or default_threads()})


# --------------------------------------------------------------------------
# coupling


def verify_coupling(cfg: CouplingExperimentConfig, threads: int | None = None) -> RunResult:
    t_start = time.perf_counter()
    rep = coupling.resampled_excursion_comparison(
        coupling.CouplingConfig(cfg.N, cfg.d, cfg.h_N, cfg.d_N, cfg.alpha, tuple(map(tuple, cfg.sites)),
                                cfg.replicas, cfg.seed), threads=threads, n_perm=cfg.permutations)
    gates = {
        "vacancy_gap": Gate(rep.max_abs_z <= cfg.z_gate, {"z_scores": rep.z_scores, "limit": cfg.z_gate}),
        "exchangeability": Gate(rep.exchangeability_p > cfg.p_gate,
                                {"p_value": rep.exchangeability_p, "limit": cfg.p_gate}),
    }
    table = Table(["site", "freq_A", "freq_B", "z"],
                  [[str(tuple(s)), a, b, z] for s, a, b, z in zip(cfg.sites, rep.freq_A, rep.freq_B, rep.z_scores)])
    return RunResult("coupling", cfg.to_dict(), cfg.seed, rep.to_json(), gates, {"coupling": table}, [],
                     {"seconds": time.perf_counter() - t_start, "threads": threads or default_threads()})


# --------------------------------------------------------------------------
# capacity and interlacements


def run_capacity(cfg: CapacityConfig, threads: int | None = None) -> RunResult:
    t_start = time.perf_counter()
    K = _pattern(cfg.pattern)
    gates = {}
    if cfg.ambient_radius > 0:
        rep = potential.box_capacity(K, cfg.ambient_radius)
        est = rep.to_json()
        gates["capacity_le_size"] = Gate(rep.capacity <= len(K) + 1e-12, {"capacity": rep.capacity})
    else:
        rep = potential.capacity_infinite(K, cfg.radius, cfg.walkers, cfg.seed, cfg.rel_tol, threads)
        est = rep.to_json()
        if cfg.walkers > 0:
            gates["mc_agreement"] = Gate(not rep.flagged, {"relative_gap": rep.meta["relative_gap"],
                                                           "limit": cfg.rel_tol})
        gates["capacity_le_size"] = Gate(rep.capacity <= len(K) + 1e-12, {"capacity": rep.capacity})
    table = Table(["site", "equilibrium"], [[str(tuple(s)), e] for s, e in zip(rep.sites.tolist(), rep.equilibrium)])
    return RunResult("capacity", cfg.to_dict(), cfg.seed, est, gates, {"equilibrium": table}, [],
                     {"seconds": time.perf_counter() - t_start, "threads": threads or default_threads()})


def run_interlace(cfg: InterlaceConfig, threads: int | None = None) -> RunResult:
    t_start = time.perf_counter()
    B = _pattern(cfg.box)
    cap_B = potential.capacity_extrapolated(B, cfg.cap_radius)
    sample = sample_vacant(list(cfg.levels), B, cfg.replicas, cfg.seed, kill_factor=cfg.kill_factor,
                           reentry=cfg.reentry, cap_report=cap_B, threads=threads)
    rows, gates = [], {}
    for ptext in cfg.patterns:
        K = _pattern(ptext)
        cap_K = potential.capacity_extrapolated(K, cfg.cap_radius).capacity
        for u in sample.levels:
            p, se = sample.frequency(K, u)
            ref = vacancy_probability_closed_form(u, cap_K)
            bias = sample.truncation["bias_bound"][str(u)]
            ok = abs(p - ref) <= 3 * se + bias
            name = f"vacancy[K={K.to_literal()},u={u:g}]"
            gates[name] = Gate(ok, {"frequency": p, "reference": ref, "stderr": se, "bias_bound": bias,
                                    "z": (p - ref) / se if se > 0 else 0.0})
            rows.append([K.to_literal(), u, cap_K, p, ref, se, bias])
    est = {"sample": sample.to_json(), "cap_B": cap_B.capacity}
    return RunResult("interlace", cfg.to_dict(), cfg.seed, est, gates,
                     {"vacancy": Table(["pattern", "u", "cap", "frequency", "reference", "stderr", "bias_bound"], rows)},
                     [], {"seconds": time.perf_counter() - t_start, "threads": threads or default_threads()})


# --------------------------------------------------------------------------
# plain simulation


def run_simulate(cfg: SimulateConfig, threads: int | None = None) -> RunResult:
    t_start = time.perf_counter()
    params = TorusParams(cfg.N, cfg.d)
    windows = []
    for spec in cfg.windows:
        base, ptext = spec
        windows.append(Window(CylinderPoint(tuple(base[:-1]), base[-1], cfg.N), _pattern(ptext), params))

    def one(r):
        wo = WindowObserver(windows)
        lo = LocalTimeObserver(cfg.heights)
        res = run_walk(WalkConfig(params, Start.level(cfg.start_z), cfg.seed, cfg.steps, replica=r), [wo, lo])
        return res.to_json()

    outs = map_replicas(one, cfg.replicas, threads)
    rows = []
    for r, o in enumerate(outs):
        lt = o["observers"]["local_time"]["counts"]
        rows.append([r, *o["final"], *[lt.get(str(z), 0) for z in cfg.heights]])
    header = ["replica", *[f"y{i + 1}" for i in range(cfg.d)], "z", *[f"L_{z}" for z in cfg.heights]]
    return RunResult("simulate", cfg.to_dict(), cfg.seed, {"replicas": outs}, {}, {"replicas": Table(header, rows)}, [],
                     {"seconds": time.perf_counter() - t_start, "threads": threads or default_threads()})


RUNNERS: dict[str, Callable] = {
    "theorem01": estimate_theorem_functional,
    "prop21": verify_prop21,
    "lemma31": verify_lemma31,
    "lemma42": verify_lemma42,
    "coupling": verify_coupling,
    "capacity": run_capacity,
    "interlace": run_interlace,
    "simulate": run_simulate,
}


def run_experiment(cfg: ConfigBase | dict, threads: int | None = None) -> RunResult:
    if isinstance(cfg, dict):
        cfg = config_from_dict(cfg)
    runner = RUNNERS.get(cfg.kind)
    if runner is None:
        raise ExperimentError(f"unknown experiment kind {cfg.kind!r}")
    return runner(cfg, threads)
