"""Independent brute-force oracles shared by the test modules.

These deliberately avoid the package's own solvers: quartic fits use a
local-time 4x4 system with the entry node pinned at the origin, and
kinematic bounds are computed in closed form per grid point.
"""

from fractions import Fraction

import numpy as np
import sympy


def quartic_grid(t0, node_times, positions, path_length):
    """Coefficients c1..c4 (local time x = t - t0, c0 = 0) for a batch of node sets.

    ``node_times`` has shape (m, k + 1): crossing times then exit time.
    """
    x = np.asarray(node_times, dtype=float) - t0
    y = np.append(np.asarray(positions, dtype=float), path_length)
    powers = np.arange(1, x.shape[1] + 1)
    mat = x[:, :, None] ** powers[None, None, :]
    return np.linalg.solve(mat, np.broadcast_to(y, x.shape)[..., None])[..., 0], x[:, -1]


def quartic_metrics(c, T):
    """(jerk integral, v_lo, v_hi, a_lo, a_hi, v_entry) for local quartics on [0, T]."""
    c1, c2, c3, c4 = c.T
    jerk = 36 * c3**2 * T + 144 * c3 * c4 * T**2 + 192 * c4**2 * T**3

    def vel(x):
        return c1 + 2 * c2 * x + 3 * c3 * x**2 + 4 * c4 * x**3

    def acc(x):
        return 2 * c2 + 6 * c3 * x + 12 * c4 * x**2

    v_cands = [vel(np.zeros_like(T)), vel(T)]
    disc = (6 * c3) ** 2 - 4 * 12 * c4 * 2 * c2
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        for r in ((-6 * c3 + sq) / (24 * c4), (-6 * c3 - sq) / (24 * c4), -2 * c2 / (6 * c3)):
            ok = np.isfinite(r) & (r > 0) & (r < T)
            v_cands.append(np.where(ok, vel(np.where(ok, r, 0.0)), np.nan))
        xa = -c3 / (4 * c4)
    ok = np.isfinite(xa) & (xa > 0) & (xa < T)
    a_cands = [acc(np.zeros_like(T)), acc(T), np.where(ok, acc(np.where(ok, xa, 0.0)), np.nan)]
    v = np.vstack(v_cands)
    a = np.vstack(a_cands)
    return jerk, np.nanmin(v, 0), np.nanmax(v, 0), np.nanmin(a, 0), np.nanmax(a, 0), c1


def grid_search(t0, v0, positions, path_length, boxes, limits, n=20, margin=1e-3,
                entry_speed_tol=None, chunk=40000):
    """Best squared-jerk over an n^d grid of node times inside ``boxes``.

    Returns (best_jerk, best_nodes) or (inf, None) when no grid point is
    feasible.
    """
    axes = [np.linspace(lo, hi, n) if hi > lo else np.array([lo]) for lo, hi in boxes]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(boxes))
    best, arg = np.inf, None
    for s in range(0, len(mesh), chunk):
        pts = mesh[s:s + chunk]
        seq = np.hstack([np.full((len(pts), 1), t0), pts])
        ordered = np.all(np.diff(seq, axis=1) >= margin - 1e-12, axis=1)
        pts = pts[ordered]
        if not len(pts):
            continue
        c, T = quartic_grid(t0, pts, positions, path_length)
        jerk, v_lo, v_hi, a_lo, a_hi, v_in = quartic_metrics(c, T)
        tol = 1e-9
        ok = ((v_lo >= limits.v_min - tol) & (v_hi <= limits.v_max + tol)
              & (a_lo >= limits.u_min - tol) & (a_hi <= limits.u_max + tol))
        if entry_speed_tol is not None:
            ok &= np.abs(v_in - v0) <= entry_speed_tol + tol
        if ok.any():
            k = int(np.argmin(np.where(ok, jerk, np.inf)))
            if jerk[k] < best:
                best, arg = float(jerk[k]), pts[k]
    return best, arg


def cubic_coefficients(v0, length, T):
    """Closed-form cubic with p(0)=0, v(0)=v0, p(T)=length, a(T)=0 (local time)."""
    c2 = 3 * (length - v0 * T) / (2 * T**2)
    c3 = -c2 / (3 * T)
    return 0.0, v0, c2, c3


def fine_scan_exit(v0, length, limits, t_lo, t_hi, step=1e-3, feasible_extra=None):
    """Smallest exit time on a ``step`` grid whose cubic respects speed and acceleration bounds.

    Vectorised over the whole grid; ``feasible_extra(T_array, coeffs)`` may
    add further masks (headways). Times are relative to entry.
    """
    T = np.arange(t_lo, t_hi + step / 2, step)
    _, c1, c2, c3 = cubic_coefficients(v0, length, T)
    # a(x) = 2c2 + 6c3 x is linear: extrema at the ends; v extrema at ends or where a = 0
    a0, aT = 2 * c2, 2 * c2 + 6 * c3 * T
    vT = c1 + 2 * c2 * T + 3 * c3 * T**2
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = -c2 / (3 * c3)
    inside = np.isfinite(xs) & (xs > 0) & (xs < T)
    vs = np.where(inside, c1 + 2 * c2 * xs + 3 * c3 * xs**2, c1)
    v_lo = np.minimum.reduce([np.full_like(T, c1), vT, vs])
    v_hi = np.maximum.reduce([np.full_like(T, c1), vT, vs])
    tol = 1e-9
    ok = ((v_lo >= limits.v_min - tol) & (v_hi <= limits.v_max + tol)
          & (np.minimum(a0, aT) >= limits.u_min - tol) & (np.maximum(a0, aT) <= limits.u_max + tol))
    if feasible_extra is not None:
        ok &= feasible_extra(T, (np.zeros_like(T), np.full_like(T, c1), c2, c3))
    idx = np.flatnonzero(ok)
    return float(T[idx[0]]) if idx.size else None


def exact_vandermonde_det(times):
    """Determinant of the explicit Vandermonde matrix in exact rational arithmetic."""
    xs = [sympy.Rational(Fraction(float(t))) for t in times]
    mat = sympy.Matrix([[x**k for k in range(len(xs))] for x in xs])
    return float(mat.det(method="bareiss"))


def cubic_crossing_times(coeffs, T, position, iters=60):
    """Local time at which each cubic in a batch reaches ``position``, by bisection on [0, T].

    Assumes each cubic is increasing on its span (callers mask out the rest).
    """
    _, c1, c2, c3 = coeffs
    lo, hi = np.zeros_like(T), np.array(T, dtype=float)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        below = ((c3 * mid + c2) * mid + c1) * mid < position
        lo, hi = np.where(below, mid, lo), np.where(below, hi, mid)
    return 0.5 * (lo + hi)
