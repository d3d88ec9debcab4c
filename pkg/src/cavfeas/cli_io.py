"""Config parsing, run export and the CSV-based auditor.

JSON is used for configs and reports, CSV for sampled trajectories. All
writers are deterministic: JSON keys are sorted and CSV numbers are printed
with six decimals, so identical inputs give identical bytes.
"""

from __future__ import annotations

import copy
import csv
import io
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Union

import jsonschema
import numpy as np
from referencing import Registry, Resource

from . import __version__
from .constraints import (
    CHECK_TOL,
    OccupancyLedger,
    SafetyParams,
    Violation,
    ViolationKind,
    gap_guarantee_holds,
    lateral_violations,
)
from .errors import ConfigError, LayoutError
from .geometry import DEFAULT_LAYOUT_NAME, IntersectionLayout, four_leg_12path, load_layout
from .planner import PlannerSettings
from .simulation import SimConfig, SimOutcome
from .trajectory import KinematicLimits, sample

CSV_HEADER = ("t", "vehicle_id", "path_id", "position_m", "speed_mps", "accel_mps2", "jerk_mps3")
SCHEMA_NAMES = ("config", "trajectory", "ledger", "plan_result", "violations", "metrics", "timing", "run")
# the CSV carries 6 decimals; sampled checks allow for that rounding
CSV_QUANTUM = 5e-7


# -- schemas ---------------------------------------------------------------

def load_schema(name: str) -> dict:
    text = resources.files("cavfeas.schemas").joinpath(f"{name}.schema.json").read_text("utf-8")
    return json.loads(text)


@lru_cache(maxsize=None)
def _registry() -> Registry:
    pairs = []
    for name in SCHEMA_NAMES:
        schema = load_schema(name)
        res = Resource.from_contents(schema)
        pairs.append((schema["$id"], res))
        pairs.append((f"{name}.schema.json", res))
    return Registry().with_resources(pairs)


def validator(name: str) -> jsonschema.Draft202012Validator:
    return jsonschema.Draft202012Validator(load_schema(name), registry=_registry())


def _pointer(path) -> str:
    return "".join(f"/{p}" for p in path)


def _materialize(doc: dict, schema: dict) -> dict:
    """Fill in schema defaults, recursing into object-valued properties."""
    out = dict(doc)
    for key, sub in schema.get("properties", {}).items():
        if key not in out and "default" in sub:
            out[key] = copy.deepcopy(sub["default"])
        if sub.get("type") == "object" and "properties" in sub:
            out[key] = _materialize(out.get(key, {}), sub)
    return out


# -- config ----------------------------------------------------------------

def parse_config(text: Union[bytes, str]) -> tuple[SimConfig, IntersectionLayout]:
    """Validate a JSON config and build the run configuration.

    Raises ``ConfigError`` whose ``location`` is a JSON pointer into the
    document.
    """
    try:
        if isinstance(text, bytes):
            text = text.decode("utf-8")
        doc = json.loads(text)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError("", f"not valid UTF-8 JSON ({exc})") from None
    err = jsonschema.exceptions.best_match(validator("config").iter_errors(doc))
    if err is not None:
        raise ConfigError(_pointer(err.absolute_path), err.message)
    doc = _materialize(doc, load_schema("config"))

    lim = doc["limits"]
    if not lim["v_min"] > 0:
        raise ConfigError("/limits/v_min", f"must be > 0 (vehicles are not allowed to stop), got {lim['v_min']}")
    if not lim["v_max"] > lim["v_min"]:
        raise ConfigError("/limits/v_max", f"must exceed v_min={lim['v_min']}, got {lim['v_max']}")
    if not lim["u_min"] < 0:
        raise ConfigError("/limits/u_min", f"must be < 0 (maximum deceleration), got {lim['u_min']}")
    if not lim["u_max"] > 0:
        raise ConfigError("/limits/u_max", f"must be > 0 (maximum acceleration), got {lim['u_max']}")
    limits = KinematicLimits(**lim)

    safety = doc["safety"]
    params = SafetyParams(safety["tau_r"], safety["tau_l"])
    if not safety["allow_weak_headways"] and not gap_guarantee_holds(params):
        raise ConfigError(
            "/safety/tau_r",
            f"tau_r={params.tau_r} is below 2*tau_l={2 * params.tau_l}: the rear-end headway "
            "must leave room for a crossing vehicle between two same-path vehicles "
            "(set allow_weak_headways to accept)",
        )

    try:
        layout = load_layout(doc["layout"])
    except LayoutError as exc:
        raise ConfigError("/layout", str(exc)) from None

    rate = doc["arrivals"]["rate"]
    if isinstance(rate, dict):
        rate = {int(k): float(v) for k, v in sorted(rate.items(), key=lambda kv: int(kv[0]))}
    solver = dict(doc["solver"])
    scan_step = solver.pop("scan_step")
    cfg = SimConfig(
        layout=layout,
        limits=limits,
        params=params,
        arrival_rate=rate,
        entry_speed_range=tuple(doc["arrivals"]["entry_speed"]),
        duration=float(doc["duration"]),
        rng_seed=int(doc["rng_seed"]),
        scan_step=float(scan_step),
        sample_dt=float(doc["output"]["sample_dt"]),
        allow_weak_headways=bool(safety["allow_weak_headways"]),
        planner=PlannerSettings(**solver),
    )
    return cfg, layout


def config_to_dict(cfg: SimConfig) -> dict:
    """Fully resolved config document; ``parse_config`` of it rebuilds ``cfg``."""
    rate = cfg.arrival_rate
    if isinstance(rate, dict):
        rate = {str(k): float(v) for k, v in sorted(rate.items())}
    else:
        rate = float(rate)
    s = cfg.planner
    return {
        "layout": DEFAULT_LAYOUT_NAME if cfg.layout == four_leg_12path() else cfg.layout.to_dict(),
        "limits": {
            "v_min": cfg.limits.v_min,
            "v_max": cfg.limits.v_max,
            "u_min": cfg.limits.u_min,
            "u_max": cfg.limits.u_max,
        },
        "safety": {
            "tau_r": cfg.params.tau_r,
            "tau_l": cfg.params.tau_l,
            "allow_weak_headways": cfg.allow_weak_headways,
        },
        "arrivals": {"rate": rate, "entry_speed": list(cfg.entry_speed_range)},
        "duration": cfg.duration,
        "rng_seed": cfg.rng_seed,
        "solver": {
            "scan_step": cfg.scan_step,
            "position_step": s.position_step,
            "max_iterations": s.max_iterations,
            "penalty_weight": s.penalty_weight,
            "tolerance": s.tolerance,
            "ordering_margin": s.ordering_margin,
            "entry_speed_tol": s.entry_speed_tol,
            "screen_budget": s.screen_budget,
            "multi_start": s.multi_start,
        },
        "output": {"sample_dt": cfg.sample_dt},
    }


def dumps(obj: Any) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8")


# -- trajectory CSV --------------------------------------------------------

def sample_times(t_start: float, t_end: float, dt: float) -> np.ndarray:
    """``t_start, t_start + dt, ...`` with the last (possibly short) step clamped to ``t_end``."""
    n = max(0, int(np.ceil((t_end - t_start) / dt - 1e-9)))
    return np.append(t_start + dt * np.arange(n), t_end)


def _fmt(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def export_trajectories(ledger: OccupancyLedger, sample_dt: float) -> bytes:
    """Sampled kinematics of every committed vehicle as CSV bytes, sorted by (vehicle_id, t)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for vid, pid, traj in ledger.trajectories():
        ts = sample_times(traj.t_start, traj.t_end, sample_dt)
        for t, row in zip(ts, sample(traj, ts)):
            w.writerow([_fmt(t), vid, pid, *(_fmt(x) for x in row)])
    return buf.getvalue().encode("ascii")


@dataclass
class SampledTrack:
    vehicle_id: int
    path_id: int
    data: np.ndarray  # columns t, position, speed, accel, jerk

    @property
    def t(self):
        return self.data[:, 0]

    @property
    def position(self):
        return self.data[:, 1]


def read_trajectories(text: Union[bytes, str]) -> list[SampledTrack]:
    """Parse an exported CSV back into per-vehicle sample arrays."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"trajectory CSV must start with header {','.join(CSV_HEADER)}")
    by_vehicle: dict[int, tuple[int, list]] = {}
    for lineno, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        try:
            vid, pid = int(r[1]), int(r[2])
            vals = [float(r[0]), *(float(x) for x in r[3:7])]
        except (ValueError, IndexError):
            raise ValueError(f"line {lineno}: malformed row {r!r}") from None
        entry = by_vehicle.setdefault(vid, (pid, []))
        if entry[0] != pid:
            raise ValueError(f"line {lineno}: vehicle {vid} changes path")
        entry[1].append(vals)
    out = []
    for vid in sorted(by_vehicle):
        pid, vals = by_vehicle[vid]
        data = np.array(vals)
        out.append(SampledTrack(vid, pid, data[np.argsort(data[:, 0], kind="stable")]))
    return out


def audit_tracks(
    tracks: list[SampledTrack],
    layout: IntersectionLayout,
    params: SafetyParams,
    limits: KinematicLimits,
    position_step: float = 0.5,
) -> list[Violation]:
    """Safety check on sampled data only.

    Positions between samples are linearly interpolated, so headway
    thresholds are relaxed by the largest sample spacing found in the data;
    speed and acceleration bounds are checked at the samples with the CSV
    rounding quantum as tolerance.
    """
    tol = CSV_QUANTUM + CHECK_TOL
    slack = max((float(np.max(np.diff(tr.t))) for tr in tracks if len(tr.t) > 1), default=0.0)
    found: list[Violation] = []
    crossings: dict[int, list[tuple[int, int, float]]] = {}
    by_path: dict[int, list[SampledTrack]] = {}
    for tr in tracks:
        t, p, v, a = tr.data[:, 0], tr.data[:, 1], tr.data[:, 2], tr.data[:, 3]
        vid = tr.vehicle_id
        if v.min() <= 0 or np.any(np.diff(p) < -tol):
            k = int(np.argmin(v))
            found.append(Violation(ViolationKind.NON_MONOTONE, (vid,), float(t[k]), float(max(-v[k], tol))))
            continue
        for values, lo, hi, kind in ((v, limits.v_min, limits.v_max, ViolationKind.SPEED_BOUND),
                                     (a, limits.u_min, limits.u_max, ViolationKind.ACCEL_BOUND)):
            k_lo, k_hi = int(np.argmin(values)), int(np.argmax(values))
            if lo - values[k_lo] > tol:
                found.append(Violation(kind, (vid,), float(t[k_lo]), float(lo - values[k_lo])))
            if values[k_hi] - hi > tol:
                found.append(Violation(kind, (vid,), float(t[k_hi]), float(values[k_hi] - hi)))
        for cid, pos in layout.path(tr.path_id).conflict_positions:
            if p[0] <= pos <= p[-1]:
                crossings.setdefault(cid, []).append((vid, tr.path_id, float(np.interp(pos, p, t))))
        by_path.setdefault(tr.path_id, []).append(tr)

    for pid in sorted(by_path):
        lst = sorted(by_path[pid], key=lambda tr: (tr.t[0], tr.vehicle_id))
        for lead, fol in zip(lst, lst[1:]):
            lo = max(lead.position[0], fol.position[0])
            hi = min(lead.position[-1], fol.position[-1])
            if hi < lo:
                continue
            n = max(1, int(np.ceil((hi - lo) / position_step - 1e-9)))
            ps = np.linspace(lo, hi, n + 1)
            gaps = np.interp(ps, fol.position, fol.t) - np.interp(ps, lead.position, lead.t)
            k = int(np.argmin(gaps))
            margin = params.tau_r - slack - float(gaps[k])
            if margin > CHECK_TOL:
                found.append(Violation(ViolationKind.REAR_END, (fol.vehicle_id, lead.vehicle_id), float(ps[k]), margin))
    found += lateral_violations(crossings, params.tau_l - slack)
    return found


# -- run bundle ------------------------------------------------------------

FILES = {
    "config": "config.json",
    "trajectories": "trajectories.csv",
    "metrics": "metrics.json",
    "violations": "violations.json",
    "ledger": "ledger.json",
    "timing": "timing.json",
}


@dataclass(frozen=True)
class RunBundle:
    """Manifest of one run directory (written as ``run.json``)."""

    config: dict
    files: dict
    tool_version: str
    rng_seed: int

    def to_dict(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "rng_seed": self.rng_seed,
            "config": self.config,
            "files": dict(self.files),
        }


def bundle_contents(cfg: SimConfig, out: SimOutcome) -> dict[str, bytes]:
    """File name to bytes for one run. Everything except ``timing.json`` is deterministic."""
    echo = config_to_dict(cfg)
    metrics = out.metrics.to_dict(timing=False)
    metrics["rejected"] = [a.to_dict() for a in out.rejected]
    timing = {
        "latency_p50": out.metrics.latency_p50,
        "latency_p95": out.metrics.latency_p95,
        "per_vehicle": [
            {"vehicle_id": r.vehicle_id, "status": r.status.value, "seconds": s}
            for r, s in zip(out.results, out.latencies)
        ],
    }
    bundle = RunBundle(echo, FILES, __version__, cfg.rng_seed)
    return {
        "run.json": dumps(bundle.to_dict()),
        FILES["config"]: dumps(echo),
        FILES["trajectories"]: export_trajectories(out.ledger, cfg.sample_dt),
        FILES["metrics"]: dumps(metrics),
        FILES["violations"]: dumps([v.to_dict() for v in out.violations]),
        FILES["ledger"]: dumps(out.ledger.to_dict()),
        FILES["timing"]: dumps(timing),
    }


def write_bundle(cfg: SimConfig, out: SimOutcome, out_dir: Union[str, Path]) -> RunBundle:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, data in bundle_contents(cfg, out).items():
        (out_dir / name).write_bytes(data)
    return RunBundle(config_to_dict(cfg), {k: str(out_dir / v) for k, v in FILES.items()}, __version__, cfg.rng_seed)
