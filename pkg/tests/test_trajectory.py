import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from cavfeas.errors import IllConditioned, NonMonotoneNodes, OutOfDomain, OutOfRange, SingularSystem
from cavfeas.trajectory import (
    EntryState,
    KinematicLimits,
    PolyTrajectory,
    evaluate,
    extrema_bounds,
    feasible_exit_range,
    fit_through,
    interpolate_vandermonde,
    invert_position,
    invert_positions,
    sample,
    solve_cubic_bvp,
    squared_accel_integral,
    squared_jerk_integral,
    vandermonde_determinant,
)

from oracles import cubic_coefficients, exact_vandermonde_det

WORKED = (0.0, 10.0, 0.46875, -0.01953125)  # c0..c3 of the t_f = 8 example


def cubic(c0, c1, c2, c3, t0=0.0, t1=10.0):
    return PolyTrajectory((c0, c1, c2, c3), t0, t1)


# -- solve_cubic_bvp ---------------------------------------------------------

def test_bvp_constant_speed():
    tr = solve_cubic_bvp(EntryState(0, 0, 10), 100, 10)
    assert tr.coefficients == pytest.approx((0, 10, 0, 0), abs=1e-12)


def test_bvp_worked_example_frozen():
    tr = solve_cubic_bvp(EntryState(0, 0, 10), 100, 8)
    assert tr.coefficients == pytest.approx(WORKED, abs=1e-12)
    p, _, a, _ = evaluate(tr, 8.0)
    assert p == pytest.approx(100, abs=1e-9) and a == pytest.approx(0, abs=1e-9)


def test_bvp_zero_duration_is_singular():
    with pytest.raises(SingularSystem):
        solve_cubic_bvp(EntryState(0, 0, 10), 100, 0)


def test_bvp_below_degeneracy_tolerance():
    with pytest.raises(SingularSystem):
        solve_cubic_bvp(EntryState(5, 0, 10), 100, 5 + 5e-7)


def test_bvp_matches_closed_form_oracle():
    tr = solve_cubic_bvp(EntryState(3600.0, 0, 12), 100, 3608.5)
    assert tr.origin == 3600.0
    assert tr.coefficients == pytest.approx(cubic_coefficients(12, 100, 8.5), rel=1e-12, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    t0=st.floats(0, 5000),
    p0=st.floats(-50, 50),
    v0=st.floats(0.5, 30),
    dist=st.floats(1, 500),
    T=st.floats(0.5, 120),
)
def test_bvp_residuals(t0, p0, v0, dist, T):
    tr = solve_cubic_bvp(EntryState(t0, p0, v0), p0 + dist, t0 + T)
    p_a, v_a, _, _ = evaluate(tr, t0)
    p_b, _, a_b, _ = evaluate(tr, t0 + T)
    assert abs(p_a - p0) <= 1e-9 * max(1, abs(p0))
    assert abs(v_a - v0) <= 1e-9 * max(1, v0)
    assert abs(p_b - (p0 + dist)) <= 1e-9 * max(1, abs(p0 + dist))
    assert abs(a_b) <= 1e-9


# -- interpolation -----------------------------------------------------------

def test_interpolate_collinear():
    tr = interpolate_vandermonde([(0.5, 0.5), (1, 1), (2, 2), (3, 3), (4, 4)])
    assert tr.power_coefficients() == pytest.approx((0, 1, 0, 0, 0), abs=1e-9)
    assert (tr.t_start, tr.t_end) == (0.5, 4.0)


def test_interpolate_quartic_recovery():
    tr = interpolate_vandermonde([(t, t**4) for t in (1, 2, 3, 4, 5)])
    assert tr.power_coefficients() == pytest.approx((0, 0, 0, 0, 1), abs=1e-8)


@pytest.mark.parametrize("times", [(1, 1, 2, 3, 4), (2, 1, 3), (0, 1, 2), (-1, 1, 2), (1,)])
def test_interpolate_rejects_bad_nodes(times):
    with pytest.raises(NonMonotoneNodes):
        interpolate_vandermonde([(t, float(i)) for i, t in enumerate(times)])


def test_fit_through_allows_time_zero():
    tr = fit_through((0.0, 1.0, 2.0), (0.0, 10.0, 20.0))
    assert evaluate(tr, 0.0)[1] == pytest.approx(10.0)


def test_interpolation_survives_large_absolute_times():
    # raw Vandermonde in absolute time would lose every digit here
    base = 7200.0
    nodes = [(base, 0.0), (base + 4, 40.0), (base + 5, 50.0), (base + 6, 60.0), (base + 10, 100.0)]
    tr = interpolate_vandermonde(nodes)
    for t, p in nodes:
        assert evaluate(tr, t)[0] == pytest.approx(p, abs=1e-8 * max(1, p))


def test_interpolation_ill_conditioned():
    # seven nodes 0.1 ms apart and one 50 s away
    nodes = [(1.0 + (50.0 if k == 7 else 0.0) + 1e-4 * k, 1e3 * (-1) ** k) for k in range(8)]
    with pytest.raises(IllConditioned):
        interpolate_vandermonde(nodes)


def draw_nodes(data, n, max_gap):
    gaps = data.draw(st.lists(st.floats(0.1, max_gap), min_size=n, max_size=n))
    times = [float(t) for t in np.cumsum(gaps)]
    values = data.draw(st.lists(st.floats(-1e3, 1e3), min_size=n, max_size=n))
    return list(zip(times, values))


def assert_hits_nodes(tr, nodes):
    assert tr.degree == len(nodes) - 1
    for t, p in nodes:
        assert abs(evaluate(tr, t)[0] - p) <= 1e-8 * max(1, abs(p))


@settings(max_examples=300, deadline=None)
@given(data=st.data(), n=st.integers(2, 8))
def test_interpolation_passes_through_nodes(data, n):
    # gap ratios up to 10: always solvable to the node tolerance
    nodes = draw_nodes(data, n, 1.0)
    tr = interpolate_vandermonde(nodes)
    assert_hits_nodes(tr, nodes)
    again = interpolate_vandermonde(nodes)
    assert np.allclose(again.coefficients, tr.coefficients, rtol=1e-10, atol=1e-10)


@settings(max_examples=300, deadline=None)
@given(data=st.data(), n=st.integers(2, 8))
def test_interpolation_verified_or_refused(data, n):
    # wide gaps next to tight clusters can need coefficients ~1e6 for
    # values ~1e2; then double precision cannot hold 1e-8 and the fit
    # must refuse rather than return an inaccurate polynomial
    nodes = draw_nodes(data, n, 3.0)
    try:
        tr = interpolate_vandermonde(nodes)
    except IllConditioned:
        return
    assert_hits_nodes(tr, nodes)


# -- determinant -------------------------------------------------------------

@pytest.mark.parametrize("times, expected", [((0, 1, 2), 2.0), ((0, 1), 1.0), ((1, 3, 3), 0.0), ((5,), 1.0)])
def test_determinant_examples(times, expected):
    assert vandermonde_determinant(times) == expected


@settings(max_examples=100, deadline=None)
@given(data=st.data(), n=st.integers(1, 8))
def test_determinant_matches_exact(data, n):
    times = np.cumsum(data.draw(st.lists(st.floats(0.1, 2.0), min_size=n, max_size=n)))
    assert vandermonde_determinant(list(times)) == pytest.approx(exact_vandermonde_det(times), rel=1e-10)


# -- evaluate / sample -------------------------------------------------------

def test_evaluate_examples():
    assert evaluate(cubic(0, 10, 0, 0), 5) == pytest.approx((50, 10, 0, 0))
    p, _, a, _ = evaluate(cubic(*WORKED, t1=8), 8)
    assert p == pytest.approx(100, abs=1e-9) and a == pytest.approx(0, abs=1e-9)
    q = PolyTrajectory((0, 0, 0, 0, 1), 0, 3)
    assert evaluate(q, 2) == pytest.approx((16, 32, 48, 48))


def test_evaluate_out_of_domain():
    with pytest.raises(OutOfDomain):
        evaluate(cubic(0, 10, 0, 0), 10.5)


def test_origin_shift_is_transparent():
    local = PolyTrajectory((1.0, 2.0, 3.0, 4.0), 100.0, 103.0, origin=100.0)
    absolute = PolyTrajectory(local.power_coefficients(), 100.0, 103.0)
    for t in (100.0, 101.3, 103.0):
        assert evaluate(absolute, t) == pytest.approx(evaluate(local, t), rel=1e-6)


def test_sample_matches_evaluate():
    tr = PolyTrajectory((0, 9, 0.3, -0.02, 0.001), 2.0, 12.0, origin=1.0)
    ts = np.linspace(2, 12, 17)
    out = sample(tr, ts)
    for t, row in zip(ts, out):
        assert row == pytest.approx(evaluate(tr, t), abs=1e-12)


def test_dict_round_trip():
    tr = PolyTrajectory((0, 9, 0.3), 2.0, 12.0, origin=1.0)
    assert PolyTrajectory.from_dict(tr.to_dict()) == tr


def test_invalid_construction():
    with pytest.raises(ValueError):
        PolyTrajectory((1.0,), 3.0, 3.0)
    with pytest.raises(ValueError):
        KinematicLimits(0, 10, -3, 3)
    with pytest.raises(ValueError):
        KinematicLimits(1, 10, 1, 3)


# -- inversion ---------------------------------------------------------------

def test_invert_examples():
    lin = PolyTrajectory((0, 10), 0, 10)
    assert invert_position(lin, 50) == pytest.approx(5)
    assert invert_position(cubic(*WORKED, t1=8), 100) == pytest.approx(8)
    with pytest.raises(OutOfRange):
        invert_position(lin, 150)


@settings(max_examples=100, deadline=None)
@given(v0=st.floats(3, 20), T=st.floats(5, 40), frac=st.floats(0, 1))
def test_inversion_consistency(v0, T, frac):
    tr = solve_cubic_bvp(EntryState(10.0, 0, v0), 100, 10.0 + T)
    if extrema_bounds(tr)[0] <= 0.1:
        return  # not monotone enough to invert
    p = 100 * frac
    t = invert_position(tr, p)
    assert abs(evaluate(tr, t)[0] - p) <= 1e-9 * max(1, p)
    assert invert_positions(tr, [p])[0] == pytest.approx(t, abs=1e-9)


# -- extrema -----------------------------------------------------------------

def test_extrema_examples():
    assert extrema_bounds(cubic(0, 10, 0, 0)) == pytest.approx((10, 10, 0, 0))
    v_lo, v_hi, a_lo, a_hi = extrema_bounds(cubic(*WORKED, t1=8))
    assert (v_lo, v_hi, a_lo, a_hi) == pytest.approx((10, 13.75, 0, 0.9375), abs=1e-12)
    assert extrema_bounds(PolyTrajectory((0, 0, 0, 0, 1), 0, 1)) == pytest.approx((0, 4, 0, 12))


@settings(max_examples=100, deadline=None)
@given(coeffs=st.lists(st.floats(-5, 5), min_size=2, max_size=5), T=st.floats(0.5, 5))
def test_extrema_dominate_dense_samples(coeffs, T):
    tr = PolyTrajectory(tuple(coeffs), 0.0, T)
    v_lo, v_hi, a_lo, a_hi = extrema_bounds(tr)
    kin = sample(tr, np.linspace(0, T, 10_000))
    scale = 1e-9 * max(1.0, np.abs(kin[:, 1:3]).max())
    assert kin[:, 1].min() >= v_lo - scale and kin[:, 1].max() <= v_hi + scale
    assert kin[:, 2].min() >= a_lo - scale and kin[:, 2].max() <= a_hi + scale


# -- integrals ---------------------------------------------------------------

def test_jerk_integral_examples():
    assert squared_jerk_integral(PolyTrajectory((0, 0, 0, 0, 1), 0, 1)) == pytest.approx(192)
    assert squared_jerk_integral(cubic(*WORKED, t1=8)) == pytest.approx(0.10986328125, rel=1e-12)
    assert squared_jerk_integral(PolyTrajectory((1, 2, 3), 0, 5)) == 0


@settings(max_examples=100, deadline=None)
@given(coeffs=st.lists(st.floats(-3, 3), min_size=4, max_size=5), t0=st.floats(-5, 5), T=st.floats(0.5, 10))
def test_integrals_match_quadrature(coeffs, t0, T):
    tr = PolyTrajectory(tuple(coeffs), t0, t0 + T, origin=t0 - 1.0)
    jerk = integrate.quad(lambda t: evaluate(tr, t)[3] ** 2, t0, t0 + T, epsabs=1e-12, epsrel=1e-10)[0]
    acc = integrate.quad(lambda t: evaluate(tr, t)[2] ** 2, t0, t0 + T, epsabs=1e-12, epsrel=1e-10)[0]
    assert squared_jerk_integral(tr) == pytest.approx(jerk, rel=1e-6, abs=1e-9)
    assert squared_accel_integral(tr) == pytest.approx(acc, rel=1e-6, abs=1e-9)


# -- exit range --------------------------------------------------------------

def test_exit_range_examples():
    lo, _ = feasible_exit_range(EntryState(0, 0, 10), KinematicLimits(1, 15, -3, 3), 100)
    assert lo == pytest.approx(5 / 3 + (475 / 6) / 15, abs=1e-12)
    assert lo == pytest.approx(6.9444, abs=1e-4)
    _, hi = feasible_exit_range(EntryState(0, 0, 10), KinematicLimits(1, 15, -3, 3), 100)
    assert hi == pytest.approx(86.5, abs=1e-12)
    lo, _ = feasible_exit_range(EntryState(0, 0, 15), KinematicLimits(1, 15, -3, 3), 100)
    assert lo == pytest.approx(100 / 15)


def test_exit_range_no_saturation():
    # 10 m at 10 m/s braking at 3 m/s^2 ends before the speed reaches v_min = 1
    _, hi = feasible_exit_range(EntryState(0, 0, 10), KinematicLimits(1, 15, -3, 3), 10)
    assert hi == pytest.approx((10 - math.sqrt(40)) / 3, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(v0=st.floats(1, 15), t0=st.floats(0, 100), L=st.floats(1, 300))
def test_exit_range_brackets(v0, t0, L):
    lim = KinematicLimits(1, 15, -3, 3)
    lo, hi = feasible_exit_range(EntryState(t0, 0, v0), lim, L)
    assert t0 + L / lim.v_max - 1e-9 <= lo <= t0 + L / v0 + 1e-9
    assert t0 + L / v0 - 1e-9 <= hi <= t0 + L / lim.v_min + 1e-9
