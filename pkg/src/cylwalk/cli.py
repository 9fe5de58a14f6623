"""Command-line entry point.

    cylwalk verify-theorem --config runs/theorem.cfg --out out/theorem
    cylwalk capacity --set 'pattern="[(0,0,0),(1,0,0)]"' --replicas 100000

Exit status is 0 when every gate passes, 1 when a gate fails and 2 on a
usage or configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

from . import experiments as ex
from .config import ConfigError, load_config, parse_override
from .results import write_run
from .rng import THREADS_ENV

COMMANDS = {
    "simulate": ex.SimulateConfig,
    "capacity": ex.CapacityConfig,
    "interlace": ex.InterlaceConfig,
    "verify-theorem": ex.TheoremConfig,
    "verify-prop21": ex.Prop21Config,
    "verify-lemma31": ex.Lemma31Config,
    "verify-lemma42": ex.Lemma42Config,
    "verify-coupling": ex.CouplingExperimentConfig,
}

# which config key --replicas sets, per kind
REPLICA_KEYS = {"capacity": "walkers"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cylwalk", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, cls in COMMANDS.items():
        s = sub.add_parser(name, help=f"run the {cls.kind} experiment")
        s.add_argument("--config", help="key = value config file")
        s.add_argument("--seed", type=int)
        s.add_argument("--replicas", type=float, help="replica (or walker) count")
        s.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or 1)")
        s.add_argument("--out", help="output directory for result.json, tables and plots")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
    return p


def resolve_config(args) -> ex.ConfigBase:
    cls = COMMANDS[args.command]
    values = load_config(args.config) if args.config else {}
    if values.get("kind", cls.kind) != cls.kind:
        raise ConfigError(f"config kind {values['kind']!r} does not match command {args.command!r}")
    for item in args.set:
        k, v = parse_override(item)
        values[k] = v
    if args.seed is not None:
        values["seed"] = args.seed
    if args.replicas is not None:
        key = REPLICA_KEYS.get(cls.kind, "replicas")
        if key not in {f.name for f in dataclasses.fields(cls)}:
            raise ConfigError(f"{args.command} is an exact computation and takes no --replicas")
        values[key] = int(args.replicas)
    return cls.from_dict(values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        threads = args.threads
        if threads is not None:
            if threads < 1:
                raise ConfigError("--threads must be at least 1")
            os.environ[THREADS_ENV] = str(threads)
        result = ex.run_experiment(cfg, threads)
    except (ConfigError, ex.ExperimentError) as exc:
        print(f"cylwalk: error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        write_run(result, args.out)
    for name, gate in result.gates.items():
        print(f"{'PASS' if gate.passed else 'FAIL'}  {name}")
    print(f"{result.kind}: {'all gates passed' if result.passed else 'gate failure'}"
          f" (hash {result.to_json()['determinism_hash'][:12]})")
    return 0 if result.passed else 1
