"""Constructed scenarios shared by the planner, simulation and acceptance tests."""

from cavfeas.constraints import OccupancyLedger, SafetyParams
from cavfeas.geometry import four_leg_12path
from cavfeas.planner import PlanRequest
from cavfeas.trajectory import EntryState, KinematicLimits, PolyTrajectory

LAYOUT = four_leg_12path()
LIMITS = KinematicLimits(2.0, 20.0, -3.0, 3.0)
PARAMS = SafetyParams(4.0, 2.0)

# (path, position on that path, time the blocker passes it) for 10 m/s
# cross traffic. Chosen so no exit-time cubic threads the gaps for the two
# congested requests below while quartics through idle windows still do.
CONGESTION_BLOCKERS = (
    (10, 60.0, 3.0),
    (11, 50.0, 3.5),
    (5, 50.0, 5.5),
    (4, 40.0, 5.5),
    (10, 40.0, 6.0),
)
CONGESTED_REQUESTS = (
    PlanRequest(1, 1, EntryState(0.0, 0.0, 10.0), LIMITS, PARAMS),
    PlanRequest(2, 7, EntryState(0.5, 0.0, 12.0), LIMITS, PARAMS),
)


def constant_speed(path_id, t0, v, layout=LAYOUT):
    """Trajectory and crossing times of a vehicle cruising the whole path at ``v``."""
    path = layout.path(path_id)
    traj = PolyTrajectory((0.0, v), t0, t0 + path.length / v, origin=t0)
    return traj, {cid: t0 + pos / v for cid, pos in path.conflict_positions}


def congestion_ledger(speed=10.0):
    led = OccupancyLedger()
    rows = sorted(CONGESTION_BLOCKERS, key=lambda r: r[2] - r[1] / speed)
    for k, (pid, pos, t_pass) in enumerate(rows):
        traj, crossings = constant_speed(pid, t_pass - pos / speed, speed)
        led.commit(100 + k, pid, traj, crossings)
    return led
