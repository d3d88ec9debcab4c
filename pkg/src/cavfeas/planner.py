"""Trajectory planning for one vehicle against the committed ledger.

Two levels:

1. ``plan_cubic_scan`` walks candidate exit times upward from the earliest
   reachable one and keeps the first energy-optimal cubic that satisfies
   every bound and headway.
2. When no cubic works, ``select_convex_sets`` picks one idle window per
   conflict point (ranked by the jerk of the interpolant through window
   midpoints) and ``optimize_node_times`` searches crossing and exit times
   inside those windows for the minimum-jerk interpolant that respects the
   speed and acceleration limits.
"""

from __future__ import annotations

import enum
import itertools
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import optimize

from .constraints import (
    CHECK_TOL,
    OccupancyLedger,
    SafetyParams,
    TimeWindow,
    check_rear_end,
    check_state_bounds,
    idle_windows,
)
from .errors import IllConditioned, NonMonotoneNodes, SingularSystem
from .geometry import IntersectionLayout
from .trajectory import (
    EntryState,
    KinematicLimits,
    PolyTrajectory,
    _bang_time,
    evaluate,
    extrema_bounds,
    feasible_exit_range,
    fit_through,
    invert_position,
    solve_cubic_bvp,
    squared_jerk_integral,
)


# the fallback interpolant is at most quartic: entry, three crossings, exit
MAX_FALLBACK_CONFLICTS = 3


class PlanStatus(str, enum.Enum):
    CUBIC = "Cubic"
    FALLBACK = "QuarticFallback"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class PlannerSettings:
    position_step: float = 0.5
    max_iterations: int = 500
    penalty_weight: float = 1e6
    tolerance: float = 1e-4
    ordering_margin: float = 1e-3
    # speed mismatch allowed at entry for fallback plans; None drops the condition
    entry_speed_tol: Optional[float] = 0.01
    # node-time search: grid points screened for starts, and how many starts to refine
    screen_budget: int = 4096
    multi_start: int = 3


@dataclass(frozen=True)
class PlanRequest:
    vehicle_id: int
    path_id: int
    entry: EntryState
    limits: KinematicLimits
    params: SafetyParams

    def __post_init__(self):
        if self.entry.p0 != 0:
            raise ValueError("entry position must be 0 in path-local coordinates")
        self.entry.check(self.limits)


@dataclass(frozen=True)
class NodeTimes:
    crossings: tuple[float, ...]
    exit: float

    @property
    def values(self) -> tuple[float, ...]:
        return (*self.crossings, self.exit)


@dataclass
class PlanResult:
    vehicle_id: int
    path_id: int
    status: PlanStatus
    trajectory: Optional[PolyTrajectory]
    exit_time: Optional[float]
    crossing_times: list[tuple[int, float]] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is not PlanStatus.INFEASIBLE

    def to_dict(self) -> dict:
        return {
            "vehicle_id": self.vehicle_id,
            "path_id": self.path_id,
            "status": self.status.value,
            "exit_time": self.exit_time,
            "trajectory": None if self.trajectory is None else self.trajectory.to_dict(),
            "crossing_times": [{"conflict_id": c, "time": t} for c, t in self.crossing_times],
            "diagnostics": dict(self.diagnostics),
        }


@dataclass(frozen=True)
class ConvexSelection:
    windows: tuple[TimeWindow, ...]
    tf_window: TimeWindow
    seed: NodeTimes
    seed_objective: float


@dataclass
class NodeOptimization:
    feasible: bool
    node_times: Optional[NodeTimes]
    trajectory: Optional[PolyTrajectory]
    objective: float
    seed_objective: float
    iterations: int
    evaluations: int


# -- shared helpers ------------------------------------------------------------

def exit_window(req: PlanRequest, ledger: OccupancyLedger, path_length: float) -> tuple[float, float]:
    """Feasible exit range, lower end pushed back by the same-path leader's exit + tau_r."""
    t_lo, t_hi = feasible_exit_range(req.entry, req.limits, path_length)
    lead = ledger.leader(req.path_id)
    if lead is not None:
        t_lo = max(t_lo, lead[1].t_end + req.params.tau_r)
    return t_lo, t_hi


def _lateral_clear(traj, positions, ledger, path_id, tau_l):
    crossings = []
    for cid, pos in positions:
        t = invert_position(traj, pos)
        for other in ledger.other_path_crossings(cid, path_id):
            if abs(t - other) < tau_l - CHECK_TOL:
                return None
        crossings.append((cid, t))
    return crossings


def _fully_feasible(traj, req, ledger, positions, position_step):
    """Crossing times if ``traj`` passes bounds, lateral and rear-end checks, else None."""
    if check_state_bounds(traj, req.limits) is not None:
        return None
    crossings = _lateral_clear(traj, positions, ledger, req.path_id, req.params.tau_l)
    if crossings is None:
        return None
    lead = ledger.leader(req.path_id)
    if lead is not None and check_rear_end(traj, lead[1], req.params.tau_r, position_step) is not None:
        return None
    return crossings


# -- level 1: cubic exit-time scan -------------------------------------------

def _failures(traj, req, ledger, positions, position_step) -> frozenset:
    """Labels of the constraints ``traj`` breaks; empty when fully feasible.

    Headways are only evaluated on strictly increasing trajectories, where
    crossing times are defined. The sampled rear-end check is the costly
    one and runs only when everything else holds, so a non-empty result
    may omit it.
    """
    lim = req.limits
    v_lo, v_hi, a_lo, a_hi = extrema_bounds(traj)
    out = {
        label
        for label, margin in (
            ("v_min", lim.v_min - v_lo), ("v_max", v_hi - lim.v_max),
            ("u_min", lim.u_min - a_lo), ("u_max", a_hi - lim.u_max),
        )
        if margin > CHECK_TOL
    }
    if v_lo <= 0:
        return frozenset(out | {"stops"})
    for cid, pos in positions:
        t = invert_position(traj, pos)
        for other in ledger.other_path_crossings(cid, req.path_id):
            if abs(t - other) < req.params.tau_l - CHECK_TOL:
                out.add(("lateral", cid, other))
    lead = ledger.leader(req.path_id)
    if not out and lead is not None and check_rear_end(traj, lead[1], req.params.tau_r, position_step) is not None:
        out.add("rear_end")
    return frozenset(out)


def _diagnose(req, ledger, path, t_f, settings):
    try:
        traj = solve_cubic_bvp(req.entry, path.length, t_f)
    except SingularSystem:
        return None, None
    return traj, _failures(traj, req, ledger, path.conflict_positions, settings.position_step)


def _refine(req, ledger, path, left, right, settings, rounds=4, resolution=1e-7):
    """Look for a feasible exit time strictly between two infeasible scan candidates.

    ``left`` and ``right`` are ``(t_f, failures)`` with disjoint failure
    sets, so no single constraint is known to hold the whole step closed.
    Bisect for where the left candidate's failures stop and test there; if
    new failures appear, repeat from that point.
    """
    (t_a, fail_a), (t_b, fail_b) = left, right
    for _ in range(rounds):
        lo, hi = t_a, t_b
        while hi - lo > resolution:
            mid = 0.5 * (lo + hi)
            _, fails = _diagnose(req, ledger, path, mid, settings)
            if fails is None or fails & fail_a:
                lo = mid
            else:
                hi = mid
        if hi >= t_b:
            return None
        traj, fails = _diagnose(req, ledger, path, hi, settings)
        if fails is None:
            return None
        if not fails:
            return traj, hi
        if not fails.isdisjoint(fail_b):
            return None
        t_a, fail_a = hi, fails
    return None


def plan_cubic_scan(
    req: PlanRequest,
    ledger: OccupancyLedger,
    layout: IntersectionLayout,
    step: float = 0.1,
    settings: PlannerSettings = PlannerSettings(),
) -> PlanResult:
    """First feasible cubic on an ascending grid of exit times.

    The grid starts at the earliest reachable exit (pushed back behind the
    same-path leader) and advances by ``step``. A feasible interval shorter
    than ``step`` can fall between two grid points; when two neighbouring
    candidates fail for entirely different reasons the step between them
    is searched by bisection, so such gaps are still found in ascending
    order.
    """
    if not step > 0:
        raise ValueError("scan step must be positive")
    started = time.perf_counter()
    path = layout.path(req.path_id)
    t_lo, t_hi = exit_window(req, ledger, path.length)
    k, refined = 0, 0
    previous = None
    found = None
    while True:
        t_f = t_lo + k * step
        if t_f > t_hi + 1e-9:
            break
        k += 1
        traj, fails = _diagnose(req, ledger, path, t_f, settings)
        if fails is None:
            previous = None
            continue
        if not fails:
            found = (traj, t_f)
            break
        if previous is not None and previous[1].isdisjoint(fails):
            refined += 1
            found = _refine(req, ledger, path, previous, (t_f, fails), settings)
            if found is not None:
                break
        previous = (t_f, fails)
    diagnostics = {"scan_steps": k, "refined_steps": refined}
    if found is not None:
        traj, t_f = found
        crossings = _lateral_clear(traj, path.conflict_positions, ledger, req.path_id, req.params.tau_l)
        diagnostics["solve_time"] = time.perf_counter() - started
        return PlanResult(req.vehicle_id, req.path_id, PlanStatus.CUBIC, traj, t_f, crossings, diagnostics)
    diagnostics["solve_time"] = time.perf_counter() - started
    return PlanResult(req.vehicle_id, req.path_id, PlanStatus.INFEASIBLE, None, None, [], diagnostics)


# -- level 2: window selection and node-time optimisation ------------------------

def _interpolant(t0, times, positions, path_length):
    return fit_through((t0, *times), (0.0, *positions, path_length))


def choose_combination(
    entry: EntryState,
    positions: Sequence[float],
    path_length: float,
    options: Sequence[Sequence[TimeWindow]],
    tf_window: TimeWindow,
    margin: float = 1e-3,
) -> Optional[ConvexSelection]:
    """Pick one window per conflict point by the jerk of the midpoint interpolant.

    Combinations whose midpoints (followed by the exit-window midpoint) are
    not strictly increasing from the entry time are skipped. Ties keep the
    first combination in enumeration order.
    """
    tf_seed = tf_window.midpoint
    best = None
    for combo in itertools.product(*options):
        mids = [w.midpoint for w in combo]
        seq = [entry.t0, *mids, tf_seed]
        if any(b - a < margin for a, b in zip(seq, seq[1:])):
            continue
        try:
            traj = _interpolant(entry.t0, (*mids, tf_seed), positions, path_length)
        except (IllConditioned, NonMonotoneNodes):
            continue
        jerk = squared_jerk_integral(traj)
        if best is None or jerk < best[0]:
            best = (jerk, combo, mids)
    if best is None:
        return None
    jerk, combo, mids = best
    return ConvexSelection(tuple(combo), tf_window, NodeTimes(tuple(mids), tf_seed), jerk)


def conflict_horizon(entry: EntryState, limits: KinematicLimits, position: float) -> TimeWindow:
    """Earliest and latest arrival at ``position`` under full throttle / full braking."""
    return TimeWindow(
        entry.t0 + _bang_time(entry.v0, limits.u_max, limits.v_max, position - entry.p0),
        entry.t0 + _bang_time(entry.v0, limits.u_min, limits.v_min, position - entry.p0),
    )


def select_convex_sets(
    req: PlanRequest,
    ledger: OccupancyLedger,
    layout: IntersectionLayout,
    settings: PlannerSettings = PlannerSettings(),
) -> Optional[ConvexSelection]:
    """Idle windows per conflict point, reduced to one window each. ``None`` if no ordered combination exists."""
    path = layout.path(req.path_id)
    t_lo, t_hi = exit_window(req, ledger, path.length)
    if t_lo > t_hi:
        return None
    options = []
    for cid, pos in path.conflict_positions:
        horizon = conflict_horizon(req.entry, req.limits, pos)
        wins = idle_windows(ledger, cid, horizon, req.params.tau_l, ignore_path=req.path_id)
        if not wins:
            return None
        options.append(wins)
    return choose_combination(
        req.entry,
        [pos for _, pos in path.conflict_positions],
        path.length,
        options,
        TimeWindow(t_lo, t_hi),
        settings.ordering_margin,
    )


class _Batch(NamedTuple):
    value: np.ndarray  # penalised objective
    jerk: np.ndarray
    margins: np.ndarray  # one column per constraint, >= 0 when satisfied
    feasible: np.ndarray
    nodes: np.ndarray  # absolute crossing times followed by the exit time


class _Evaluator:
    """Vectorised objective and constraint margins for batches of node times.

    A candidate is a full node vector (crossing times, then exit time). The
    interpolant through the entry node and the candidate nodes is fitted in
    local time ``x = t - t0``; speed and acceleration extrema are then
    found in closed form, which limits the interpolant to degree 4 (at most
    three conflict points). When entry-speed matching is on, the starting
    speed must lie within ``entry_speed_tol`` of the measured entry speed;
    this is two smooth inequality constraints on the linear coefficient.
    """

    def __init__(self, entry, limits, positions, path_length, settings):
        self.t0 = entry.t0
        self.v0 = entry.v0
        self.limits = limits
        self.positions = np.asarray(positions, dtype=float)
        if len(positions) > MAX_FALLBACK_CONFLICTS:
            raise ValueError(
                f"node-time optimisation supports at most {MAX_FALLBACK_CONFLICTS} conflict points per path"
            )
        self.path_length = float(path_length)
        self.settings = settings
        self.evaluations = 0

    def _coefficients(self, x):
        """Local coefficients ``c0..c4`` (zero-padded) and a validity mask."""
        m, d = x.shape
        coeffs = np.zeros((m, 5))
        valid = np.all(np.diff(np.hstack([np.zeros((m, 1)), x]), axis=1) > 1e-9, axis=1)
        rhs = np.append(self.positions, self.path_length)
        powers = np.arange(1, d + 1)
        # scale each row to unit span so the Vandermonde-type matrix stays well conditioned
        scale = np.where(valid, x[:, -1], 1.0)
        xs = np.where(valid[:, None], x / scale[:, None], powers / d)
        mat = xs[:, :, None] ** powers[None, None, :]
        sol = np.linalg.solve(mat, np.broadcast_to(rhs, x.shape)[..., None])[..., 0]
        coeffs[:, powers] = sol / scale[:, None] ** powers
        return coeffs, valid

    def __call__(self, nodes) -> _Batch:
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        self.evaluations += len(nodes)
        x = nodes - self.t0
        coeffs, valid = self._coefficients(x)
        lim, st = self.limits, self.settings
        seq = np.hstack([np.zeros((len(x), 1)), x])
        cols = list((np.diff(seq, axis=1) - st.ordering_margin).T)
        T = np.where(valid, x[:, -1], 1.0)

        c1, c2, c3, c4 = coeffs[:, 1], coeffs[:, 2], coeffs[:, 3], coeffs[:, 4]
        jerk = 36 * c3**2 * T + 144 * c3 * c4 * T**2 + 192 * c4**2 * T**3

        def speed(s):
            return c1 + s * (2 * c2 + s * (3 * c3 + s * 4 * c4))

        def accel(s):
            return 2 * c2 + s * (6 * c3 + s * 12 * c4)

        zero = np.zeros_like(T)
        v_c, a_c = [speed(zero), speed(T)], [accel(zero), accel(T)]
        with np.errstate(divide="ignore", invalid="ignore"):
            # speed extrema at roots of the acceleration (quadratic, stable form)
            qa, qb, qc = 12 * c4, 6 * c3, 2 * c2
            root = np.sqrt(np.where(qb * qb - 4 * qa * qc >= 0, qb * qb - 4 * qa * qc, np.nan))
            q = -0.5 * (qb + np.where(qb >= 0, root, -root))
            cands = (q / qa, qc / q, np.where(qa == 0, -qc / qb, np.nan))
            s_a = -c3 / (4 * c4)
        for s in cands:
            inside = np.isfinite(s) & (s > 0) & (s < T)
            v_c.append(np.where(inside, speed(np.where(inside, s, 0.0)), np.nan))
        inside = np.isfinite(s_a) & (s_a > 0) & (s_a < T)
        a_c.append(np.where(inside, accel(np.where(inside, s_a, 0.0)), np.nan))
        v_all, a_all = np.vstack(v_c), np.vstack(a_c)
        cols += [
            np.nanmin(v_all, 0) - lim.v_min,
            lim.v_max - np.nanmax(v_all, 0),
            np.nanmin(a_all, 0) - lim.u_min,
            lim.u_max - np.nanmax(a_all, 0),
        ]
        if st.entry_speed_tol is not None:
            cols += [st.entry_speed_tol - (c1 - self.v0), st.entry_speed_tol + (c1 - self.v0)]
        margins = np.column_stack(cols)
        viol = np.maximum(0.0, -margins).sum(axis=1)
        feasible = valid & (viol <= CHECK_TOL)
        value = np.where(valid, jerk + np.where(feasible, 0.0, st.penalty_weight * viol), 1e12 + viol)
        return _Batch(value, np.where(valid, jerk, np.inf), margins, feasible, nodes)


def _grid(boxes, budget):
    n = max(2, int(round(budget ** (1.0 / len(boxes)))))
    axes = [np.linspace(lo, hi, n) if hi > lo else np.array([lo]) for lo, hi in boxes]
    return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(boxes))


class _PointEval(NamedTuple):
    jerk: float
    jerk_grad: list
    margins: list
    margin_jac: list  # one gradient row per margin


def _point_eval(ev: _Evaluator, nodes) -> Optional[_PointEval]:
    """Objective, constraint margins and their exact gradients at one node vector.

    With ``V c = y`` for the local coefficients ``c = (c1, ..., c_d)``,
    only row ``i`` of ``V`` depends on ``x_i`` and its derivative dotted
    with ``c`` is ``p'(x_i)``, so ``dc/dx_i = -p'(x_i) * V^{-1}[:, i]``.
    Extrema found at interior stationary points contribute through ``c``
    only (envelope theorem); extrema at the exit also move with ``x_d``.
    Returns ``None`` for unordered nodes.
    """
    x = [float(t) - ev.t0 for t in nodes]
    d = len(x)
    prev = 0.0
    for xi in x:
        if xi - prev <= 1e-9:
            return None
        prev = xi
    scale = x[-1]
    xs = np.array(x) / scale
    powers = np.arange(1, d + 1)
    mat = xs[:, None] ** powers[None, :]
    rhs = np.hstack([np.append(ev.positions, ev.path_length)[:, None], np.eye(d)])
    try:
        sol = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        return None
    inv_scale = scale ** -powers
    c = (sol[:, 0] * inv_scale).tolist() + [0.0] * (4 - d)
    vinv = (sol[:, 1:] * inv_scale[:, None]).tolist()  # V^{-1}
    c1, c2, c3, c4 = c
    T = x[-1]

    def speed(s):
        return c1 + s * (2 * c2 + s * (3 * c3 + s * 4 * c4))

    def accel(s):
        return 2 * c2 + s * (6 * c3 + s * 12 * c4)

    # dc/dx as a 4 x d matrix (rows beyond the degree stay zero)
    slope = [speed(xi) for xi in x]
    dc = [[-slope[i] * vinv[j][i] for i in range(d)] for j in range(d)] + [[0.0] * d] * (4 - d)

    def chain(dq_dc, dq_dT=0.0):
        g = [sum(dq_dc[j] * dc[j][i] for j in range(4)) for i in range(d)]
        g[-1] += dq_dT
        return g

    jerk = 36 * c3 * c3 * T + 144 * c3 * c4 * T * T + 192 * c4 * c4 * T**3
    jerk_grad = chain(
        [0.0, 0.0, 72 * c3 * T + 144 * c4 * T * T, 144 * c3 * T * T + 384 * c4 * T**3],
        36 * c3 * c3 + 288 * c3 * c4 * T + 576 * c4 * c4 * T * T,
    )

    # candidate points: (value, d value / dc, explicit d value / dT)
    v_c = [(speed(0.0), [1.0, 0.0, 0.0, 0.0], 0.0), (speed(T), [1.0, 2 * T, 3 * T * T, 4 * T**3], accel(T))]
    for s in _quadratic_roots(12 * c4, 6 * c3, 2 * c2):
        if 0.0 < s < T:
            v_c.append((speed(s), [1.0, 2 * s, 3 * s * s, 4 * s**3], 0.0))
    a_c = [(accel(0.0), [0.0, 2.0, 0.0, 0.0], 0.0), (accel(T), [0.0, 2.0, 6 * T, 12 * T * T], 6 * c3 + 24 * c4 * T)]
    if c4 != 0.0 and 0.0 < -c3 / (4 * c4) < T:
        s = -c3 / (4 * c4)
        a_c.append((accel(s), [0.0, 2.0, 6 * s, 12 * s * s], 0.0))
    v_lo, v_hi = min(v_c, key=lambda r: r[0]), max(v_c, key=lambda r: r[0])
    a_lo, a_hi = min(a_c, key=lambda r: r[0]), max(a_c, key=lambda r: r[0])

    lim, st = ev.limits, ev.settings
    margins, jac = [], []
    prev = 0.0
    for i, xi in enumerate(x):
        margins.append(xi - prev - st.ordering_margin)
        row = [0.0] * d
        row[i] = 1.0
        if i:
            row[i - 1] = -1.0
        jac.append(row)
        prev = xi
    for (val, g_c, g_T), sign, bound in (
        (v_lo, 1.0, lim.v_min), (v_hi, -1.0, lim.v_max), (a_lo, 1.0, lim.u_min), (a_hi, -1.0, lim.u_max),
    ):
        margins.append(sign * (val - bound))
        jac.append([sign * g for g in chain(g_c, g_T)])
    if st.entry_speed_tol is not None:
        g1 = chain([1.0, 0.0, 0.0, 0.0])
        margins += [st.entry_speed_tol - (c1 - ev.v0), st.entry_speed_tol + (c1 - ev.v0)]
        jac += [[-g for g in g1], g1]
    ev.evaluations += 1
    return _PointEval(jerk, jerk_grad, margins, jac)


def _quadratic_roots(a, b, c):
    """Real roots of ``a s^2 + b s + c`` (linear when ``a == 0``)."""
    if a == 0.0:
        return [-c / b] if b != 0.0 else []
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    q = -0.5 * (b + math.copysign(math.sqrt(disc), b))
    return [q / a] + ([c / q] if q != 0.0 else [])


# inner margin kept from every constraint so SLSQP's tolerance cannot leave the feasible set
_INNER = 1e-8


def _local_search(ev: _Evaluator, start, boxes, settings):
    """SLSQP from ``start``; returns the feasible ``(jerk, nodes)`` reached, or None."""
    memo: dict = {}

    def at(x):
        key = x.tobytes()
        if key not in memo:
            memo.clear()
            memo[key] = _point_eval(ev, x)
        return memo[key]

    big = 1e6

    def f(x):
        r = at(x)
        return r.jerk if r else big

    def g(x):
        r = at(x)
        return np.array(r.jerk_grad) if r else np.zeros(len(x))

    def cons(x):
        r = at(x)
        return np.array(r.margins) - _INNER if r else np.full(n_cons, -1.0)

    def cons_jac(x):
        r = at(x)
        return np.array(r.margin_jac) if r else np.zeros((n_cons, len(x)))

    start = np.asarray(start, dtype=float)
    first = at(start)
    n_cons = len(first.margins) if first else len(start) + 4 + 2 * (settings.entry_speed_tol is not None)
    with warnings.catch_warnings():
        # SLSQP may step marginally outside the box and clips; the final point is clipped too
        warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
        res = optimize.minimize(
            f, start, jac=g, method="SLSQP", bounds=boxes,
            constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
            options={"maxiter": settings.max_iterations, "ftol": settings.tolerance**2},
        )
    b = ev(np.clip(res.x, [lo for lo, _ in boxes], [hi for _, hi in boxes]))
    found = (float(b.jerk[0]), b.nodes[0]) if b.feasible[0] else None
    return found, int(res.get("nit", 0))


def optimize_node_times(
    req: PlanRequest,
    positions: Sequence[float],
    path_length: float,
    windows: Sequence[TimeWindow],
    tf_window: TimeWindow,
    seed: NodeTimes,
    settings: PlannerSettings = PlannerSettings(),
) -> NodeOptimization:
    """Minimum-jerk node times inside the selected windows.

    Two phases. A grid of about ``settings.screen_budget`` points over the
    window box is scored with bound and ordering violations penalised, and
    the best ``settings.multi_start`` grid points join the seed as starting
    points. From each start a local SLSQP run, fed exact gradients,
    minimises the squared-jerk integral subject to the speed, acceleration and ordering constraints
    within the box. The best feasible point seen, the seed included, is
    returned, so a feasible seed is never worsened. Everything is
    deterministic.
    """
    ev = _Evaluator(req.entry, req.limits, positions, path_length, settings)
    boxes = [(w.start, w.end) for w in windows] + [(tf_window.start, tf_window.end)]
    seed_res = ev(np.array(seed.values))
    seed_jerk = float(seed_res.jerk[0])
    best = (seed_jerk, seed_res.nodes[0]) if seed_res.feasible[0] else None
    tol = settings.entry_speed_tol

    starts = [seed_res.nodes[0]]
    if settings.multi_start > 0:
        screen = ev(_grid(boxes, settings.screen_budget))
        order = np.lexsort((screen.value, ~screen.feasible))
        starts += [screen.nodes[i] for i in order[: settings.multi_start]]
        ok = np.flatnonzero(screen.feasible)
        if ok.size:
            i = ok[np.argmin(screen.jerk[ok])]
            if best is None or screen.jerk[i] < best[0]:
                best = (float(screen.jerk[i]), screen.nodes[i])
    iterations = 0
    if all(hi <= lo for lo, hi in boxes):
        starts = []  # singleton windows leave nothing to search
    for x0 in starts:
        found, it = _local_search(ev, x0, boxes, settings)
        iterations += it
        if found is not None and (best is None or found[0] < best[0]):
            best = found
    evaluations = ev.evaluations
    if best is None:
        return NodeOptimization(False, None, None, math.inf, seed_jerk, iterations, evaluations)

    # rebuild through the Vandermonde interpolant and re-verify
    nodes = [float(t) for t in best[1]]
    try:
        traj = _interpolant(req.entry.t0, nodes, positions, path_length)
    except (IllConditioned, NonMonotoneNodes):
        return NodeOptimization(False, None, None, math.inf, seed_jerk, iterations, evaluations)
    ok = check_state_bounds(traj, req.limits) is None
    if ok and tol is not None:
        ok = abs(evaluate(traj, traj.t_start)[1] - req.entry.v0) <= tol + CHECK_TOL
    if not ok:
        return NodeOptimization(False, None, None, math.inf, seed_jerk, iterations, evaluations)
    return NodeOptimization(
        True, NodeTimes(tuple(nodes[:-1]), nodes[-1]), traj, squared_jerk_integral(traj),
        seed_jerk, iterations, evaluations,
    )


def _tighten_for_leader(windows, tf_window, leader, positions, tau_r):
    """Raise every node window's lower end to the leader's passing time + tau_r."""
    out = []
    for w, pos in zip(windows, positions):
        start = max(w.start, invert_position(leader, pos) + tau_r)
        if start > w.end:
            return None
        out.append(TimeWindow(start, w.end))
    start = max(tf_window.start, leader.t_end + tau_r)
    if start > tf_window.end:
        return None
    return out, TimeWindow(start, tf_window.end)


def plan_fallback(
    req: PlanRequest,
    ledger: OccupancyLedger,
    layout: IntersectionLayout,
    settings: PlannerSettings = PlannerSettings(),
) -> tuple[Optional[PolyTrajectory], dict]:
    path = layout.path(req.path_id)
    positions = [pos for _, pos in path.conflict_positions]
    diag: dict = {}
    if len(positions) > MAX_FALLBACK_CONFLICTS:
        diag["fallback"] = "too_many_conflicts"
        return None, diag
    sel = select_convex_sets(req, ledger, layout, settings)
    if sel is None:
        diag["fallback"] = "no_combination"
        return None, diag
    windows, tf_window, seed = list(sel.windows), sel.tf_window, sel.seed
    lead = ledger.leader(req.path_id)
    for round_ in range(2):
        res = optimize_node_times(req, positions, path.length, windows, tf_window, seed, settings)
        diag.update(
            fallback_objective=res.objective if res.feasible else None,
            fallback_seed_objective=res.seed_objective,
            fallback_iterations=diag.get("fallback_iterations", 0) + res.iterations,
            fallback_rounds=round_ + 1,
        )
        if not res.feasible:
            diag["fallback"] = "bounds_infeasible"
            return None, diag
        if lead is None or check_rear_end(res.trajectory, lead[1], req.params.tau_r, settings.position_step) is None:
            diag["fallback"] = "ok"
            return res.trajectory, diag
        if round_ == 1:
            break
        tightened = _tighten_for_leader(windows, tf_window, lead[1], positions, req.params.tau_r)
        if tightened is None:
            break
        windows, tf_window = tightened
        seed = NodeTimes(tuple(w.midpoint for w in windows), tf_window.midpoint)
    diag["fallback"] = "rear_end"
    return None, diag


def plan(
    req: PlanRequest,
    ledger: OccupancyLedger,
    layout: IntersectionLayout,
    step: float = 0.1,
    settings: PlannerSettings = PlannerSettings(),
) -> PlanResult:
    """Plan one vehicle and commit it to ``ledger`` on success.

    An infeasible vehicle leaves the ledger untouched. Vehicles must be
    planned in entry order per path; an entry before the last committed
    same-path vehicle raises ``ValueError``.
    """
    started = time.perf_counter()
    path = layout.path(req.path_id)
    lead = ledger.leader(req.path_id)
    if lead is not None and req.entry.t0 < lead[1].t_start:
        raise ValueError(
            f"vehicle {req.vehicle_id} enters path {req.path_id} at t={req.entry.t0} before the "
            f"last committed vehicle {lead[0]} (t={lead[1].t_start}); plan vehicles in entry order"
        )
    result = plan_cubic_scan(req, ledger, layout, step, settings)
    if not result.ok:
        traj, diag = plan_fallback(req, ledger, layout, settings)
        result.diagnostics.update(diag)
        if traj is not None:
            crossings = _fully_feasible(traj, req, ledger, path.conflict_positions, settings.position_step)
            if crossings is None:
                result.diagnostics["fallback"] = "recheck_failed"
            else:
                result.status = PlanStatus.FALLBACK
                result.trajectory = traj
                result.exit_time = traj.t_end
                result.crossing_times = crossings
    result.diagnostics["solve_time"] = time.perf_counter() - started
    if result.ok:
        _, v_entry, _, _ = evaluate(result.trajectory, result.trajectory.t_start)
        result.diagnostics["entry_speed_jump"] = abs(v_entry - req.entry.v0)
        ledger.commit(req.vehicle_id, req.path_id, result.trajectory, dict(result.crossing_times))
    return result
