"""Safety semantics: the occupancy ledger and the checks run against it.

Rear-end safety is a time headway at every common position of two
vehicles on the same path. Lateral safety is enforced as a separation of
crossing times at shared conflict points. Each committed crossing blocks
``[t - tau_l, t + tau_l]`` for vehicles on other paths.
"""

from __future__ import annotations

import bisect
import enum
import json
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .geometry import IntersectionLayout
from .trajectory import KinematicLimits, PolyTrajectory, extrema_points, invert_position, invert_positions, sample

CHECK_TOL = 1e-9


@dataclass(frozen=True)
class SafetyParams:
    tau_r: float
    tau_l: float

    def __post_init__(self):
        if not self.tau_l > 0:
            raise ValueError(f"tau_l must be > 0, got {self.tau_l}")
        if not self.tau_r > 0:
            raise ValueError(f"tau_r must be > 0, got {self.tau_r}")


@dataclass(frozen=True)
class TimeWindow:
    start: float
    end: float

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"empty window [{self.start}, {self.end}]")

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.start + self.end)


class ViolationKind(str, enum.Enum):
    REAR_END = "RearEnd"
    LATERAL = "Lateral"
    SPEED_BOUND = "SpeedBound"
    ACCEL_BOUND = "AccelBound"
    NON_MONOTONE = "NonMonotone"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    vehicle_ids: tuple
    where: float
    margin: float

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "vehicle_ids": list(self.vehicle_ids),
            "time_or_position": self.where,
            "margin": self.margin,
        }


@dataclass
class OccupancyLedger:
    """Committed crossing times per conflict point and trajectories per path.

    ``crossings[conflict_id]`` is kept sorted by time. ``path_trajectories``
    keeps commit order, which is entry order because planning is FIFO.
    """

    crossings: dict[int, list[tuple[int, float]]] = field(default_factory=dict)
    path_trajectories: dict[int, list[tuple[int, PolyTrajectory]]] = field(default_factory=dict)
    vehicle_path: dict[int, int] = field(default_factory=dict)

    def add_crossing(self, conflict_id: int, vehicle_id: int, path_id: int, time: float) -> None:
        self.vehicle_path.setdefault(vehicle_id, path_id)
        lst = self.crossings.setdefault(conflict_id, [])
        keys = [t for _, t in lst]
        lst.insert(bisect.bisect_right(keys, time), (vehicle_id, time))

    def commit(self, vehicle_id: int, path_id: int, traj: PolyTrajectory, crossings: Mapping[int, float]) -> None:
        if vehicle_id in self.vehicle_path:
            raise ValueError(f"vehicle {vehicle_id} is already committed")
        self.vehicle_path[vehicle_id] = path_id
        self.path_trajectories.setdefault(path_id, []).append((vehicle_id, traj))
        for cid, t in crossings.items():
            self.add_crossing(cid, vehicle_id, path_id, t)

    def leader(self, path_id: int) -> Optional[tuple[int, PolyTrajectory]]:
        lst = self.path_trajectories.get(path_id)
        return lst[-1] if lst else None

    def trajectories(self):
        """All committed ``(vehicle_id, path_id, trajectory)`` sorted by vehicle id."""
        out = [(vid, pid, tr) for pid, lst in self.path_trajectories.items() for vid, tr in lst]
        return sorted(out, key=lambda r: r[0])

    def other_path_crossings(self, conflict_id: int, path_id: int) -> list[float]:
        return [t for vid, t in self.crossings.get(conflict_id, ()) if self.vehicle_path.get(vid) != path_id]

    def to_dict(self) -> dict:
        return {
            "vehicles": [
                {"vehicle_id": vid, "path_id": pid, "trajectory": tr.to_dict()}
                for vid, pid, tr in self.trajectories()
            ],
            "crossings": [
                {"conflict_id": cid, "vehicle_id": vid, "path_id": self.vehicle_path[vid], "time": t}
                for cid in sorted(self.crossings)
                for vid, t in self.crossings[cid]
            ],
        }

    @classmethod
    def from_dict(cls, d) -> "OccupancyLedger":
        led = cls()
        for v in sorted(d.get("vehicles", []), key=lambda r: r["trajectory"]["t_start"]):
            led.vehicle_path[v["vehicle_id"]] = v["path_id"]
            led.path_trajectories.setdefault(v["path_id"], []).append(
                (v["vehicle_id"], PolyTrajectory.from_dict(v["trajectory"]))
            )
        for c in d.get("crossings", []):
            led.add_crossing(c["conflict_id"], c["vehicle_id"], c["path_id"], c["time"])
        return led

    def snapshot(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True).encode()


def state_bound_violations(traj: PolyTrajectory, limits: KinematicLimits, vehicle_ids=()) -> list[Violation]:
    (v_lo, tv_lo), (v_hi, tv_hi), (a_lo, ta_lo), (a_hi, ta_hi) = extrema_points(traj)
    out = []
    for margin, where, kind in (
        (limits.v_min - v_lo, tv_lo, ViolationKind.SPEED_BOUND),
        (v_hi - limits.v_max, tv_hi, ViolationKind.SPEED_BOUND),
        (limits.u_min - a_lo, ta_lo, ViolationKind.ACCEL_BOUND),
        (a_hi - limits.u_max, ta_hi, ViolationKind.ACCEL_BOUND),
    ):
        if margin > CHECK_TOL:
            out.append(Violation(kind, tuple(vehicle_ids), where, margin))
    return out


def check_state_bounds(traj: PolyTrajectory, limits: KinematicLimits, vehicle_ids=()) -> Optional[Violation]:
    """``None`` if speed and acceleration stay within limits, else the first violation.

    Speed violations are reported before acceleration violations. With
    ``v_min > 0`` a speed check also certifies strict monotonicity.
    """
    found = state_bound_violations(traj, limits, vehicle_ids)
    return found[0] if found else None


def rear_end_gaps(follower: PolyTrajectory, leader: PolyTrajectory, position_step: float = 0.5):
    """Sampled positions on the common span and the follower-minus-leader time gaps."""
    f_lo, f_hi = invert_span(follower)
    l_lo, l_hi = invert_span(leader)
    lo, hi = max(f_lo, l_lo), min(f_hi, l_hi)
    if hi < lo:
        return np.empty(0), np.empty(0)
    n = max(1, int(np.ceil((hi - lo) / position_step - 1e-9)))
    ps = np.linspace(lo, hi, n + 1)
    return ps, invert_positions(follower, ps) - invert_positions(leader, ps)


def invert_span(traj: PolyTrajectory) -> tuple[float, float]:
    """Positions at the start and end of the validity interval."""
    x0, x1 = traj.t_start - traj.origin, traj.t_end - traj.origin
    poly = np.polynomial.polynomial.polyval
    return float(poly(x0, traj.coefficients)), float(poly(x1, traj.coefficients))


def check_rear_end(
    follower: PolyTrajectory,
    leader: PolyTrajectory,
    tau_r: float,
    position_step: float = 0.5,
    vehicle_ids=(),
) -> Optional[Violation]:
    """Headway check at positions spaced ``position_step`` apart on the common span."""
    ps, gaps = rear_end_gaps(follower, leader, position_step)
    if gaps.size == 0:
        return None
    k = int(np.argmin(gaps))
    margin = tau_r - float(gaps[k])
    if margin > CHECK_TOL:
        return Violation(ViolationKind.REAR_END, tuple(vehicle_ids), float(ps[k]), margin)
    return None


def blocked_intervals(times, tau_l: float) -> list[tuple[float, float]]:
    return [(t - tau_l, t + tau_l) for t in sorted(times)]


def complement(horizon: TimeWindow, blocked) -> list[TimeWindow]:
    out = []
    cur = horizon.start
    for b0, b1 in sorted(blocked):
        if b0 > cur:
            end = min(b0, horizon.end)
            if end > cur:
                out.append(TimeWindow(cur, end))
        cur = max(cur, b1)
        if cur >= horizon.end:
            break
    if horizon.end > cur:
        out.append(TimeWindow(cur, horizon.end))
    return out


def idle_windows(
    ledger: OccupancyLedger,
    conflict_id: int,
    horizon: TimeWindow,
    tau_l: float,
    ignore_path: Optional[int] = None,
) -> list[TimeWindow]:
    """Maximal sub-windows of ``horizon`` free of every committed crossing +- ``tau_l``.

    Crossings by vehicles on ``ignore_path`` are skipped; a planner passes its
    own path, whose vehicles are separated by the rear-end headway instead.
    """
    if ignore_path is None:
        times = [t for _, t in ledger.crossings.get(conflict_id, ())]
    else:
        times = ledger.other_path_crossings(conflict_id, ignore_path)
    return complement(horizon, blocked_intervals(times, tau_l))


def gap_guarantee_holds(params: SafetyParams) -> bool:
    """True when the rear-end headway leaves room for one lateral crossing."""
    return params.tau_r >= 2.0 * params.tau_l


def lateral_violations(times_by_conflict, tau_l: float) -> list[Violation]:
    """Pairs of vehicles on different paths crossing a conflict closer than ``tau_l``.

    ``times_by_conflict`` maps conflict id to ``(vehicle_id, path_id, time)`` triples.
    """
    out = []
    for cid in sorted(times_by_conflict):
        rows = sorted(times_by_conflict[cid], key=lambda r: (r[2], r[0]))
        for i, (vi, pi, ti) in enumerate(rows):
            for vj, pj, tj in rows[i + 1:]:
                gap = tj - ti
                if gap >= tau_l - CHECK_TOL:
                    break
                if pi != pj:
                    out.append(Violation(ViolationKind.LATERAL, (vi, vj), ti, tau_l - gap))
    return out


def _sampled_bounds(vid, traj, limits, dt):
    n = max(2, int(np.ceil(traj.duration / dt)) + 1)
    ts = np.linspace(traj.t_start, traj.t_end, n)
    kin = sample(traj, ts)
    out = []
    v, a = kin[:, 1], kin[:, 2]
    if v.min() <= 0:
        k = int(np.argmin(v))
        out.append(Violation(ViolationKind.NON_MONOTONE, (vid,), float(ts[k]), float(-v[k]) + CHECK_TOL))
    for values, lo, hi, kind in ((v, limits.v_min, limits.v_max, ViolationKind.SPEED_BOUND),
                                 (a, limits.u_min, limits.u_max, ViolationKind.ACCEL_BOUND)):
        k_lo, k_hi = int(np.argmin(values)), int(np.argmax(values))
        if lo - values[k_lo] > CHECK_TOL:
            out.append(Violation(kind, (vid,), float(ts[k_lo]), float(lo - values[k_lo])))
        if values[k_hi] - hi > CHECK_TOL:
            out.append(Violation(kind, (vid,), float(ts[k_hi]), float(values[k_hi] - hi)))
    return out


def audit(
    ledger: OccupancyLedger,
    layout: IntersectionLayout,
    params: SafetyParams,
    limits: KinematicLimits,
    position_step: float = 0.5,
    sample_dt: float = 0.01,
) -> list[Violation]:
    """Re-check every committed plan from scratch.

    Crossing times are recomputed from the trajectories; speed and
    acceleration are checked on a dense time grid rather than through the
    analytic extrema used by the planner. Vehicles present only as crossing
    entries (no trajectory) are checked with their recorded times.
    """
    found: list[Violation] = []
    times: dict[int, list[tuple[int, int, float]]] = {}
    with_traj = set()
    for pid in sorted(ledger.path_trajectories):
        committed = ledger.path_trajectories[pid]
        positions = layout.path(pid).conflict_positions
        for vid, traj in committed:
            with_traj.add(vid)
            found += _sampled_bounds(vid, traj, limits, sample_dt)
            for cid, pos in positions:
                times.setdefault(cid, []).append((vid, pid, invert_position(traj, pos)))
        for (lead_id, lead), (fol_id, fol) in zip(committed, committed[1:]):
            v = check_rear_end(fol, lead, params.tau_r, position_step, vehicle_ids=(fol_id, lead_id))
            if v is not None:
                found.append(v)
    for cid, lst in ledger.crossings.items():
        for vid, t in lst:
            if vid not in with_traj:
                times.setdefault(cid, []).append((vid, ledger.vehicle_path[vid], t))
    found += lateral_violations(times, params.tau_l)
    return found
