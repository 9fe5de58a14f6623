"""Statistical helpers shared by the experiments.

Test statistics come from scipy.stats; this module only adds the bits the
experiments need on top (confidence radii, trend gates, total variation).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats


def hoeffding_halfwidth(n: int, level: float = 0.99, span: float = 1.0) -> float:
    """Half-width of a Hoeffding interval for the mean of n variables in an interval of length ``span``."""
    if n <= 0:
        return float("inf")
    return span * math.sqrt(math.log(2 / (1 - level)) / (2 * n))


def mean_and_se(x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if len(x) < 2:
        return float(x.mean()) if len(x) else float("nan"), float("inf")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def binomial_z(successes: int, n: int, p: float) -> float:
    """Standardised deviation of a binomial count from its mean."""
    sd = math.sqrt(n * p * (1 - p))
    return (successes - n * p) / sd if sd > 0 else 0.0


def binomial_pvalue(successes: int, n: int, p: float) -> float:
    return float(stats.binomtest(int(successes), int(n), p).pvalue)


def ks_two_sample(a, b) -> tuple[float, float]:
    r = stats.ks_2samp(np.asarray(a, float), np.asarray(b, float))
    return float(r.statistic), float(r.pvalue)


def chi2_two_sample(a, b) -> tuple[float, float]:
    """Chi-square homogeneity test on two integer-valued samples.

    Cells with expected counts below 5 are pooled into the tails.
    """
    a = np.asarray(a, np.int64)
    b = np.asarray(b, np.int64)
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    ca = np.bincount(a - lo, minlength=hi - lo + 1)
    cb = np.bincount(b - lo, minlength=hi - lo + 1)
    table = _pool_sparse(np.stack([ca, cb]))
    if table.shape[1] < 2:
        return 0.0, 1.0
    chi2, p, _, _ = stats.chi2_contingency(table, correction=False)
    return float(chi2), float(p)


def _pool_sparse(table: np.ndarray, min_expected: float = 5.0) -> np.ndarray:
    """Merge adjacent columns until every expected count reaches ``min_expected``."""
    cols = [table[:, j].astype(float) for j in range(table.shape[1])]
    total = table.sum()
    rows = table.sum(axis=1) / total
    out = []
    acc = np.zeros(table.shape[0])
    for c in cols:
        acc = acc + c
        if (rows * acc.sum()).min() >= min_expected:
            out.append(acc)
            acc = np.zeros(table.shape[0])
    if acc.sum() > 0:
        if out:
            out[-1] = out[-1] + acc
        else:
            out.append(acc)
    return np.stack(out, axis=1)


def chi2_uniform(counts) -> tuple[float, float]:
    counts = np.asarray(counts, float)
    r = stats.chisquare(counts)
    return float(r.statistic), float(r.pvalue)


def chi2_independence(table) -> tuple[float, float]:
    table = np.asarray(table, float)
    table = table[table.sum(axis=1) > 0][:, table.sum(axis=0) > 0]
    if min(table.shape) < 2:
        return 0.0, 1.0
    chi2, p, _, _ = stats.chi2_contingency(table, correction=False)
    return float(chi2), float(p)


def tv_from_uniform(counts) -> float:
    counts = np.asarray(counts, float)
    n = counts.sum()
    if n == 0:
        return float("nan")
    return 0.5 * float(np.abs(counts / n - 1 / len(counts)).sum())


def tv_noise_floor(k: int, n: int) -> float:
    """Expected empirical TV of n uniform draws on k cells, normal approximation."""
    if n == 0:
        return float("nan")
    p = 1 / k
    return 0.5 * k * math.sqrt(2 * p * (1 - p) / (math.pi * n))


def tv_debiased(counts) -> float:
    """Empirical TV from uniform minus its expected value under exact uniformity (floored at 0)."""
    counts = np.asarray(counts, float)
    return max(0.0, tv_from_uniform(counts) - tv_noise_floor(len(counts), int(counts.sum())))


@dataclass
class TrendGate:
    values: list[float]
    halfwidths: list[float]
    passed: bool
    violations: list[int]

    def to_json(self):
        return {"values": self.values, "halfwidths": self.halfwidths,
                "passed": self.passed, "violations": self.violations}


def nonincreasing_gate(values: Sequence[float], halfwidths: Sequence[float]) -> TrendGate:
    """Passes when ``v[i+1] <= v[i] + w[i] + w[i+1]`` at every step."""
    v = [float(x) for x in values]
    w = [float(x) for x in halfwidths]
    bad = [i for i in range(len(v) - 1) if v[i + 1] > v[i] + w[i] + w[i + 1]]
    return TrendGate(v, w, not bad, bad)


def nondecreasing_gate(values: Sequence[float], halfwidths: Sequence[float]) -> TrendGate:
    g = nonincreasing_gate([-x for x in values], halfwidths)
    return TrendGate([float(x) for x in values], g.halfwidths, g.passed, g.violations)


def permutation_test(x, groups, stat, n_perm: int, rng: np.random.Generator, strata=None) -> float:
    """Two-sided permutation p-value for ``stat(x, groups)``.

    Group labels are shuffled within each stratum when ``strata`` is given.
    """
    x = np.asarray(x)
    groups = np.asarray(groups)
    obs = abs(stat(x, groups))
    if strata is None:
        strata = np.zeros(len(x), np.int64)
    strata = np.asarray(strata)
    blocks = [np.flatnonzero(strata == s) for s in np.unique(strata)]
    hits = 0
    g = groups.copy()
    for _ in range(n_perm):
        for blk in blocks:
            g[blk] = groups[blk][rng.permutation(len(blk))]
        if abs(stat(x, g)) >= obs - 1e-12:
            hits += 1
    return (hits + 1) / (n_perm + 1)


def bonferroni(level: float, m: int) -> float:
    return level / max(m, 1)
