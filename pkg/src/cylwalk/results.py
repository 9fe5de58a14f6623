"""Run results and their on-disk artifacts.

A run directory holds ``result.json``, ``tables/*.csv`` and ``plots/*.svg``.
The determinism hash covers everything in ``result.json`` except the
``timestamp`` and ``runtime`` fields.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

RESULT_SCHEMA = "cylwalk.result/1"
VOLATILE_FIELDS = ("timestamp", "runtime")


@dataclass
class Gate:
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_json(self):
        return {"passed": bool(self.passed), **_clean(self.detail)}


@dataclass
class Table:
    header: list[str]
    rows: list[list]


@dataclass
class Curve:
    label: str
    x: list[float]
    y: list[float]
    halfwidth: list[float] | None = None


@dataclass
class Plot:
    name: str
    xlabel: str
    ylabel: str
    curves: list[Curve]
    hline: float | None = None
    logy: bool = False


@dataclass
class RunResult:
    kind: str
    config: dict
    seed: int
    estimates: dict
    gates: dict[str, Gate] = field(default_factory=dict)
    tables: dict[str, Table] = field(default_factory=dict)
    plots: list[Plot] = field(default_factory=list)
    runtime: dict = field(default_factory=dict)
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))

    @property
    def passed(self) -> bool:
        return all(g.passed for g in self.gates.values())

    def to_json(self) -> dict:
        body = {
            "schema": RESULT_SCHEMA,
            "kind": self.kind,
            "seed": self.seed,
            "config": _clean(self.config),
            "estimates": _clean(self.estimates),
            "gates": {k: g.to_json() for k, g in self.gates.items()},
            "passed": self.passed,
            "timestamp": self.timestamp,
            "runtime": _clean(self.runtime),
        }
        body["determinism_hash"] = determinism_hash(body)
        return body

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True, allow_nan=False)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def determinism_hash(body: dict) -> str:
    stable = {k: v for k, v in body.items() if k not in VOLATILE_FIELDS and k != "determinism_hash"}
    return hashlib.sha256(canonical_json(stable).encode()).hexdigest()


def write_csv(path: Path, table: Table) -> None:
    # csv's default dialect already quotes per RFC 4180 and ends lines with CRLF
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(table.header)
        for row in table.rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_plot(path: Path, plot: Plot) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "cylwalk"
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for c in plot.curves:
        ax.plot(c.x, c.y, marker="o", label=c.label)
        if c.halfwidth is not None:
            lo = [y - w for y, w in zip(c.y, c.halfwidth)]
            hi = [y + w for y, w in zip(c.y, c.halfwidth)]
            ax.fill_between(c.x, lo, hi, alpha=0.2)
    if plot.hline is not None:
        ax.axhline(plot.hline, color="k", lw=0.8, ls="--")
    if plot.logy:
        ax.set_yscale("log")
    ax.set_xlabel(plot.xlabel)
    ax.set_ylabel(plot.ylabel)
    if len(plot.curves) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_run(result: RunResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    (out / "tables").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(result.dumps() + "\n")
    for name, table in result.tables.items():
        write_csv(out / "tables" / f"{name}.csv", table)
    for plot in result.plots:
        write_plot(out / "plots" / f"{plot.name}.svg", plot)
    return out


def load_result(path: str | Path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "result.json"
    return json.loads(p.read_text())


def ladder_plot(name: str, xlabel: str, ylabel: str, x: Sequence, series: dict,
                hline: float | None = None) -> Plot:
    curves = [Curve(label, list(map(float, x)), list(map(float, ys)),
                    None if hw is None else list(map(float, hw)))
              for label, (ys, hw) in series.items()]
    return Plot(name, xlabel, ylabel, curves, hline)
