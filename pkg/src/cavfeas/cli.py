"""Command-line interface.

Exit codes: 0 success (clean audit, or a feasible plan), 1 bad input or I/O
failure (message on stderr), 2 an unsafe run, a failed audit or an
infeasible plan.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from pathlib import Path

from .cli_io import (
    audit_tracks,
    dumps,
    parse_config,
    read_trajectories,
    write_bundle,
)
from .constraints import OccupancyLedger
from .errors import CavError
from .planner import PlanRequest, plan
from .simulation import Metrics, SimConfig, run, simulate
from .trajectory import EntryState

EXIT_OK, EXIT_INPUT, EXIT_UNSAFE = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which here means "unsafe"
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _load_config(path) -> SimConfig:
    return parse_config(Path(path).read_bytes())[0]


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, rng_seed=args.seed)
    out = simulate(cfg)
    write_bundle(cfg, out, args.out_dir)
    m = out.metrics
    print(
        f"vehicles={m.vehicles_total} cubic={m.vehicles_cubic} fallback={m.vehicles_fallback} "
        f"rejected={m.vehicles_rejected} violations={m.audit_violations}"
    )
    return EXIT_OK if m.audit_violations == 0 else EXIT_UNSAFE


def _cmd_plan(args) -> int:
    cfg = _load_config(args.config)
    ledger = OccupancyLedger()
    if args.occupancy:
        ledger = OccupancyLedger.from_dict(json.loads(Path(args.occupancy).read_text("utf-8")))
    vid = max(ledger.vehicle_path, default=0) + 1
    req = PlanRequest(vid, args.path, EntryState(args.t0, 0.0, args.v0), cfg.limits, cfg.params)
    result = plan(req, ledger, cfg.layout, cfg.scan_step, cfg.planner)
    sys.stdout.write(dumps(result.to_dict()).decode())
    return EXIT_OK if result.ok else EXIT_UNSAFE


def _cmd_audit(args) -> int:
    cfg = _load_config(args.config)
    tracks = read_trajectories(Path(args.trajectories).read_bytes())
    found = audit_tracks(tracks, cfg.layout, cfg.params, cfg.limits, cfg.planner.position_step)
    sys.stdout.write(dumps([v.to_dict() for v in found]).decode())
    print(f"{len(tracks)} vehicles checked, {len(found)} violations", file=sys.stderr)
    return EXIT_OK if not found else EXIT_UNSAFE


def _split(text, conv, what):
    try:
        vals = [conv(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise _UsageError(f"--{what}: cannot parse {text!r}") from None
    if not vals:
        raise _UsageError(f"--{what}: at least one value is required")
    return vals


def _cmd_sweep(args) -> int:
    base = _load_config(args.config)
    rates = _split(args.rates, float, "rates")
    seeds = _split(args.seeds, int, "seeds")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fields = list(Metrics().to_dict(timing=False))
    table, timing = io.StringIO(), io.StringIO()
    w_table = csv.writer(table, lineterminator="\n")
    w_timing = csv.writer(timing, lineterminator="\n")
    w_table.writerow(["rate", "seed", *fields])
    w_timing.writerow(["rate", "seed", *Metrics.TIMING_FIELDS])
    unsafe = False
    # run() per cell rather than sweep() so each row is written as it finishes
    for rate in rates:
        for seed in seeds:
            cfg = dataclasses.replace(base, arrival_rate=rate, rng_seed=seed)
            _, rejected, m = run(cfg)
            unsafe |= m.audit_violations > 0
            row = m.to_dict(timing=False)
            doc = dict(row, rejected=[a.to_dict() for a in rejected])
            (out_dir / f"metrics_rate{rate:g}_seed{seed}.json").write_bytes(dumps(doc))
            w_table.writerow([rate, seed, *(row[k] for k in fields)])
            w_timing.writerow([rate, seed, m.latency_p50, m.latency_p95])
            print(f"rate={rate:g} seed={seed} fallback={m.vehicles_fallback} rejected={m.vehicles_rejected}")
    (out_dir / "sweep.csv").write_text(table.getvalue())
    (out_dir / "sweep_timing.csv").write_text(timing.getvalue())
    return EXIT_UNSAFE if unsafe else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cavfeas", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one simulation and write a run directory")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, help="override rng_seed from the config")
    s.set_defaults(func=_cmd_simulate)

    s = sub.add_parser("plan", help="plan a single vehicle and print the result as JSON")
    s.add_argument("--config", required=True)
    s.add_argument("--path", type=int, required=True)
    s.add_argument("--t0", type=float, required=True)
    s.add_argument("--v0", type=float, required=True)
    s.add_argument("--occupancy", help="ledger.json of already committed vehicles")
    s.set_defaults(func=_cmd_plan)

    s = sub.add_parser("audit", help="re-check an exported trajectories.csv")
    s.add_argument("--trajectories", required=True)
    s.add_argument("--config", required=True)
    s.set_defaults(func=_cmd_audit)

    s = sub.add_parser("sweep", help="run a grid of arrival rates and seeds")
    s.add_argument("--config", required=True)
    s.add_argument("--rates", required=True, help="comma-separated vehicles/s per path")
    s.add_argument("--seeds", required=True, help="comma-separated integers")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=_cmd_sweep)
    return p


def cli_main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (_UsageError, CavError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main():
    sys.exit(cli_main())
