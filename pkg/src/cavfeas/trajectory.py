"""Polynomial position trajectories.

A trajectory is ``p(t) = sum_k c_k (t - origin)**k`` on ``[t_start, t_end]``.
Keeping a time origin next to the coefficients matters: a cubic planned an
hour into a simulation has ``t**3 ~ 5e10`` in absolute time, which wipes out
every significant digit of the position. All solves here work in a local
frame and record where that frame starts. ``power_coefficients`` expands a
trajectory back to the absolute frame when that is really wanted.

Everything here is small-dimensional and called in tight loops by the
planner, so scalar work stays in plain Python floats; numpy and scipy are
used where they are genuinely cheaper (the Vandermonde LU solve, batched
sampling).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from math import comb

import numpy as np
from scipy import linalg

from .errors import IllConditioned, NonMonotoneNodes, NotMonotone, OutOfDomain, OutOfRange, SingularSystem

MIN_DURATION = 1e-6
_DOMAIN_SLACK = 1e-9


@dataclass(frozen=True)
class KinematicLimits:
    v_min: float
    v_max: float
    u_min: float
    u_max: float

    def __post_init__(self):
        if not 0 < self.v_min < self.v_max:
            raise ValueError(f"need 0 < v_min < v_max, got v_min={self.v_min}, v_max={self.v_max}")
        if not self.u_min < 0 < self.u_max:
            raise ValueError(f"need u_min < 0 < u_max, got u_min={self.u_min}, u_max={self.u_max}")


@dataclass(frozen=True)
class EntryState:
    t0: float
    p0: float
    v0: float

    def check(self, limits: KinematicLimits) -> None:
        if not limits.v_min <= self.v0 <= limits.v_max:
            raise ValueError(
                f"entry speed {self.v0} outside [{limits.v_min}, {limits.v_max}]"
            )


@dataclass(frozen=True)
class PolyTrajectory:
    """Position polynomial in powers of ``t - origin`` (ascending order)."""

    coefficients: tuple[float, ...]
    t_start: float
    t_end: float
    origin: float = 0.0

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValueError(f"t_start ({self.t_start}) must be < t_end ({self.t_end})")
        if len(self.coefficients) < 1:
            raise ValueError("a trajectory needs at least one coefficient")
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        for name in ("t_start", "t_end", "origin"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    def power_coefficients(self) -> tuple[float, ...]:
        """Coefficients of the same polynomial in powers of absolute ``t``."""
        c = self.coefficients
        s = -self.origin
        out = [0.0] * len(c)
        for k, ck in enumerate(c):
            for j in range(k + 1):
                out[j] += ck * comb(k, j) * s ** (k - j)
        return tuple(out)

    def to_dict(self) -> dict:
        return {
            "coefficients": list(self.coefficients),
            "t_start": self.t_start,
            "t_end": self.t_end,
            "origin": self.origin,
        }

    @classmethod
    def from_dict(cls, d) -> "PolyTrajectory":
        return cls(tuple(d["coefficients"]), float(d["t_start"]), float(d["t_end"]), float(d.get("origin", 0.0)))


def _derivative(c):
    return [k * c[k] for k in range(1, len(c))]


def _horner(c, x):
    acc = 0.0
    for ck in reversed(c):
        acc = acc * x + ck
    return acc


def _check_domain(traj, t):
    slack = _DOMAIN_SLACK * max(1.0, abs(t))
    if t < traj.t_start - slack or t > traj.t_end + slack:
        raise OutOfDomain(f"t={t} outside [{traj.t_start}, {traj.t_end}]")


def evaluate(traj: PolyTrajectory, t: float) -> tuple[float, float, float, float]:
    """Position, speed, acceleration and jerk at time ``t``."""
    _check_domain(traj, t)
    x = t - traj.origin
    c = traj.coefficients
    d1 = _derivative(c)
    d2 = _derivative(d1)
    d3 = _derivative(d2)
    return _horner(c, x), _horner(d1, x), _horner(d2, x), _horner(d3, x)


def sample(traj: PolyTrajectory, times) -> np.ndarray:
    """Vectorised ``evaluate``; returns an array of shape (len(times), 4)."""
    x = np.asarray(times, dtype=float) - traj.origin
    c = np.asarray(traj.coefficients)
    out = np.empty((x.size, 4))
    for col in range(4):
        out[:, col] = np.polynomial.polynomial.polyval(x, c) if c.size else 0.0
        c = c[1:] * np.arange(1, c.size) if c.size > 1 else np.zeros(1)
    return out


# -- linear algebra --------------------------------------------------------

def _solve(a, b):
    """Gaussian elimination with partial pivoting on small dense systems."""
    n = len(b)
    m = [list(map(float, row)) + [float(rhs)] for row, rhs in zip(a, b)]
    scale = max(abs(v) for row in a for v in row) or 1.0
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        if abs(m[piv][col]) <= 1e-14 * scale:
            raise SingularSystem("matrix is numerically singular")
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
        pivot_row = m[col]
        inv = 1.0 / pivot_row[col]
        for r in range(col + 1, n):
            row = m[r]
            f = row[col] * inv
            if f:
                for k in range(col, n + 1):
                    row[k] -= f * pivot_row[k]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        row = m[r]
        acc = row[n]
        for k in range(r + 1, n):
            acc -= row[k] * x[k]
        x[r] = acc / row[r]
    return x


def solve_cubic_bvp(entry: EntryState, p_f: float, t_f: float, tol: float = 1e-9) -> PolyTrajectory:
    """Energy-optimal unconstrained cubic between entry and exit.

    Boundary conditions: position and speed at entry, position at exit and
    zero acceleration at exit. The 4x4 system is solved in the entry-local
    frame (``origin = entry.t0``).
    """
    T = t_f - entry.t0
    if not T >= MIN_DURATION:
        raise SingularSystem(f"exit time {t_f} is not after entry time {entry.t0} (duration {T})")
    # unknowns ordered (c3, c2, c1, c0), rows as in the textbook system
    a = [
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
        [T**3, T**2, T, 1.0],
        [6.0 * T, 2.0, 0.0, 0.0],
    ]
    b = [entry.p0, entry.v0, p_f, 0.0]
    c3, c2, c1, c0 = _solve(a, b)
    traj = PolyTrajectory((c0, c1, c2, c3), entry.t0, t_f, origin=entry.t0)
    p0, v0, _, _ = evaluate(traj, entry.t0)
    pf, _, af, _ = evaluate(traj, t_f)
    worst = max(abs(p0 - entry.p0), abs(v0 - entry.v0), abs(pf - p_f), abs(af))
    if worst > tol * max(1.0, abs(p_f), abs(entry.p0)):
        raise SingularSystem(f"boundary residual {worst:.3e} after solve")
    return traj


def _fit(times, values, tol=1e-8) -> PolyTrajectory:
    # local frame centred on the node span: the monomial terms then stay
    # small and do not cancel, which is what limits accuracy at degree 7
    origin = 0.5 * (times[0] + times[-1])
    x = np.array(times) - origin
    y = np.array(values)
    powers = np.arange(x.size)
    vander = x[:, None] ** powers
    # solve with columns scaled to unit size, then refine once against the
    # residual of the unscaled system
    scale = max(abs(x[0]), abs(x[-1])) ** powers
    try:
        lu_solve = _scaled_solver(vander / scale)
        c = lu_solve(y) / scale
        c += lu_solve(y - vander @ c) / scale
    except np.linalg.LinAlgError as exc:
        raise IllConditioned(str(exc)) from None
    # verify with Horner, the evaluation order ``evaluate`` uses
    resid = np.abs(np.polynomial.polynomial.polyval(x, c) - y)
    if not np.all(resid <= tol * np.maximum(1.0, np.abs(y))):
        raise IllConditioned(f"interpolation residual {resid.max():.3e} exceeds {tol}")
    return PolyTrajectory(tuple(c.tolist()), times[0], times[-1], origin=origin)


def _scaled_solver(mat):
    """LU factorisation with partial pivoting; returns a solve function."""
    if len(mat) > 1 and np.min(np.abs(np.diff(np.sort(mat[:, 1])))) <= 1e-12:
        raise np.linalg.LinAlgError("Vandermonde matrix is numerically singular")
    lu, piv = linalg.lu_factor(mat)
    if np.any(np.abs(np.diag(lu)) <= 1e-15 * np.abs(lu).max()):
        raise np.linalg.LinAlgError("Vandermonde matrix is numerically singular")
    return lambda rhs: linalg.lu_solve((lu, piv), rhs)


def _check_nodes(times):
    if len(times) < 2:
        raise NonMonotoneNodes("need at least two nodes")
    for a, b in zip(times, times[1:]):
        if not b > a:
            raise NonMonotoneNodes(f"node times must be strictly increasing ({a} then {b})")


def interpolate_vandermonde(nodes, tol: float = 1e-8) -> PolyTrajectory:
    """Unique degree ``n-1`` polynomial through ``n`` nodes ``(t, p)``.

    Node times must be positive and strictly increasing (this is what makes
    the Vandermonde matrix invertible). The solve itself runs in a frame
    centred on the node span, recorded as the trajectory origin; the shift
    leaves the polynomial unchanged.
    """
    times = [float(t) for t, _ in nodes]
    values = [float(p) for _, p in nodes]
    _check_nodes(times)
    if times[0] <= 0:
        raise NonMonotoneNodes(f"node times must be positive, got {times[0]}")
    return _fit(times, values, tol=tol)


def fit_through(times, values, tol: float = 1e-8) -> PolyTrajectory:
    """Same interpolant as ``interpolate_vandermonde`` without the positivity rule.

    Planner nodes live in simulation time where a vehicle may enter at
    exactly ``t = 0``; the local shift makes the solve well posed anyway.
    """
    times = [float(t) for t in times]
    _check_nodes(times)
    return _fit(times, [float(v) for v in values], tol=tol)


def vandermonde_determinant(times) -> float:
    """Product of pairwise differences ``prod_{i<j} (x_j - x_i)``."""
    out = 1.0
    for j, xj in enumerate(times):
        for xi in times[:j]:
            out *= xj - xi
    return out


# -- inversion ---------------------------------------------------------------

def invert_position(traj: PolyTrajectory, p: float, tol: float = 1e-9) -> float:
    """Time at which a monotone trajectory reaches position ``p``.

    Safeguarded Newton: a Newton step is taken when it stays inside the
    current bracket, otherwise the bracket is bisected.
    """
    c = traj.coefficients
    d = _derivative(c)
    lo, hi = traj.t_start - traj.origin, traj.t_end - traj.origin
    p_lo, p_hi = _horner(c, lo), _horner(c, hi)
    if p_hi < p_lo:
        raise NotMonotone("trajectory does not increase across its domain")
    eps = tol * max(1.0, abs(p))
    if p < p_lo - eps or p > p_hi + eps:
        raise OutOfRange(f"position {p} outside [{p_lo}, {p_hi}]")
    if abs(p_lo - p) <= eps:
        return traj.t_start
    if abs(p_hi - p) <= eps:
        return traj.t_end
    x = lo + (hi - lo) * (p - p_lo) / (p_hi - p_lo)
    for _ in range(200):
        fx = _horner(c, x) - p
        if abs(fx) <= eps:
            break
        if fx < 0:
            lo = x
        else:
            hi = x
        dx = _horner(d, x)
        nx = x - fx / dx if dx > 0 else None
        x = nx if nx is not None and lo < nx < hi else 0.5 * (lo + hi)
        if hi - lo <= 4e-16 * max(1.0, abs(hi)):
            break
    return x + traj.origin


def invert_positions(traj: PolyTrajectory, ps, iters: int = 80) -> np.ndarray:
    """Vectorised ``invert_position`` for many positions at once.

    Same bracketing logic as the scalar version; every lane runs the
    fixed iteration count, which keeps the call branch-free.
    """
    ps = np.asarray(ps, dtype=float)
    c = np.asarray(traj.coefficients)
    d = c[1:] * np.arange(1, c.size) if c.size > 1 else np.zeros(1)
    polyval = np.polynomial.polynomial.polyval
    lo = np.full(ps.shape, traj.t_start - traj.origin)
    hi = np.full(ps.shape, traj.t_end - traj.origin)
    f_lo = polyval(lo[:1], c)[0] - ps
    f_hi = polyval(hi[:1], c)[0] - ps
    eps = 1e-9 * np.maximum(1.0, np.abs(ps))
    if np.any(f_lo > eps) or np.any(f_hi < -eps):
        span = (polyval(lo[0], c), polyval(hi[0], c))
        raise OutOfRange(f"positions outside trajectory span {span}")
    x = lo + (hi - lo) * np.clip(-f_lo / np.where(f_hi > f_lo, f_hi - f_lo, 1.0), 0.0, 1.0)
    for _ in range(iters):
        fx = polyval(x, c) - ps
        done = np.abs(fx) <= eps
        if done.all():
            break
        lo = np.where(fx < 0, x, lo)
        hi = np.where(fx > 0, x, hi)
        dx = polyval(x, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            nx = x - fx / dx
        ok = (dx > 0) & (nx > lo) & (nx < hi)
        x = np.where(done, x, np.where(ok, nx, 0.5 * (lo + hi)))
    return x + traj.origin


# -- analytic extrema and integrals ----------------------------------------

def _real_roots(c, lo, hi):
    """Real roots in (lo, hi) of a polynomial of degree <= 2 (ascending coefficients)."""
    c = list(c) + [0.0] * (3 - len(c))
    c0, c1, c2 = c[0], c[1], c[2]
    roots = []
    if c2 != 0.0:
        disc = c1 * c1 - 4.0 * c2 * c0
        if disc >= 0.0:
            sq = math.sqrt(disc)
            q = -0.5 * (c1 + math.copysign(sq, c1))
            if q != 0.0:
                roots += [q / c2, c0 / q]
            else:
                roots.append(0.0)
    elif c1 != 0.0:
        roots.append(-c0 / c1)
    return [r for r in roots if lo < r < hi]


def extrema_points(traj: PolyTrajectory):
    """Like ``extrema_bounds`` but each bound comes with the time it occurs.

    Returns ``((v_lo, t), (v_hi, t), (a_lo, t), (a_hi, t))``.
    """
    if traj.degree > 4:
        raise ValueError("extrema_bounds supports degree <= 4")
    c = traj.coefficients
    v = _derivative(c) or [0.0]
    a = _derivative(v) or [0.0]
    j = _derivative(a) or [0.0]
    lo, hi = traj.t_start - traj.origin, traj.t_end - traj.origin
    vs = [(_horner(v, x), x + traj.origin) for x in [lo, hi] + _real_roots(a, lo, hi)]
    acc = [(_horner(a, x), x + traj.origin) for x in [lo, hi] + _real_roots(j, lo, hi)]
    return min(vs), max(vs), min(acc), max(acc)


def extrema_bounds(traj: PolyTrajectory) -> tuple[float, float, float, float]:
    """Exact ``(v_lo, v_hi, a_lo, a_hi)`` over the trajectory's interval.

    Speed extrema are at the interval ends or where the acceleration
    vanishes; acceleration extrema at the ends or where the jerk vanishes.
    For degree <= 4 both root-finds are at most quadratic.
    """
    if traj.degree > 4:
        raise ValueError("extrema_bounds supports degree <= 4")
    c = traj.coefficients
    v = _derivative(c) or [0.0]
    a = _derivative(v) or [0.0]
    j = _derivative(a) or [0.0]
    lo, hi = traj.t_start - traj.origin, traj.t_end - traj.origin
    vs = [_horner(v, x) for x in [lo, hi] + _real_roots(a, lo, hi)]
    acc = [_horner(a, x) for x in [lo, hi] + _real_roots(j, lo, hi)]
    return min(vs), max(vs), min(acc), max(acc)


def squared_jerk_integral(traj: PolyTrajectory) -> float:
    """Closed-form integral of jerk squared over the trajectory interval.

    For degree <= 4 the jerk is ``alpha + beta * x`` with ``alpha = 6 c3``
    and ``beta = 24 c4``.
    """
    if traj.degree > 4:
        raise ValueError("squared_jerk_integral supports degree <= 4")
    c = list(traj.coefficients) + [0.0] * (5 - len(traj.coefficients))
    alpha, beta = 6.0 * c[3], 24.0 * c[4]
    lo, hi = traj.t_start - traj.origin, traj.t_end - traj.origin
    return (
        alpha * alpha * (hi - lo)
        + alpha * beta * (hi * hi - lo * lo)
        + beta * beta * (hi**3 - lo**3) / 3.0
    )


def squared_accel_integral(traj: PolyTrajectory) -> float:
    """Integral of acceleration squared (the energy proxy) over the interval."""
    a = np.polynomial.Polynomial(traj.coefficients).deriv(2)
    sq = (a * a).integ()
    lo, hi = traj.t_start - traj.origin, traj.t_end - traj.origin
    return float(sq(hi) - sq(lo))


# -- bang-bang reach times ---------------------------------------------------

def _bang_time(v0, u, v_cap, distance):
    """Time to cover ``distance`` at constant acceleration ``u`` saturating at ``v_cap``."""
    if distance <= 0:
        return 0.0
    if u == 0 or v0 == v_cap:
        return distance / v0
    t_sat = (v_cap - v0) / u
    d_sat = v0 * t_sat + 0.5 * u * t_sat * t_sat
    if d_sat >= distance:
        # distance is covered before the speed saturates: smaller root of
        # 0.5 u t^2 + v0 t - distance = 0, written without cancellation
        return 2.0 * distance / (v0 + math.sqrt(v0 * v0 + 2.0 * u * distance))
    return t_sat + (distance - d_sat) / v_cap


def feasible_exit_range(entry: EntryState, limits: KinematicLimits, path_length: float) -> tuple[float, float]:
    """Earliest and latest exit times under full acceleration / full braking."""
    dist = path_length - entry.p0
    t_lo = entry.t0 + _bang_time(entry.v0, limits.u_max, limits.v_max, dist)
    t_hi = entry.t0 + _bang_time(entry.v0, limits.u_min, limits.v_min, dist)
    return t_lo, t_hi
