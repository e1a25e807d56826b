import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wbosc.spline import SplineError, TrajectorySpline


def test_two_point_midpoint_symmetry():
    spline = TrajectorySpline([(0.0, 0.0), (1.0, 1.0)])
    value, _, _ = spline.eval(0.5)
    assert value[0] == pytest.approx(0.5, abs=1e-12)


def test_endpoint_velocities_zero():
    spline = TrajectorySpline([(0.0, [0.0, 2.0]), (0.7, [1.0, -1.0]),
                               (1.5, [0.3, 0.4])])
    for t in (0.0, 1.5):
        _, vel, _ = spline.eval(t)
        assert np.abs(vel).max() < 1e-12


def test_eval_clamps_range():
    spline = TrajectorySpline([(0.0, 1.0), (1.0, 3.0)])
    assert spline.eval(-5.0)[0][0] == pytest.approx(1.0)
    assert spline.eval(9.0)[0][0] == pytest.approx(3.0)


def test_non_increasing_times_rejected():
    with pytest.raises(SplineError):
        TrajectorySpline([(0.0, 0.0), (0.0, 1.0)])
    with pytest.raises(SplineError):
        TrajectorySpline([(1.0, 0.0), (0.5, 1.0)])
    with pytest.raises(SplineError):
        TrajectorySpline([(0.0, 0.0)])


def test_dimension_mismatch_rejected():
    with pytest.raises(SplineError):
        TrajectorySpline([(0.0, [0.0, 1.0]), (1.0, [1.0])])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5.0, 5.0), min_size=3, max_size=8),
       st.integers(0, 10 ** 6))
def test_continuity_at_knots(values, seed):
    rng = np.random.default_rng(seed)
    times = np.cumsum(rng.uniform(0.2, 1.5, len(values)))
    spline = TrajectorySpline(list(zip(times, values)))
    eps = 1e-7
    for t in times[1:-1]:
        vm, dm, am = spline.eval(t - eps)
        vp, dp, ap = spline.eval(t + eps)
        acc = max(1.0, float(np.abs(am).max()), float(np.abs(ap).max()))
        vel = max(1.0, float(np.abs(dm).max()))
        # one-sided evaluations eps away from the knot shift a C1 function's
        # value/derivative by O(eps * vel) / O(eps * acc); allow that plus slack
        assert np.abs(vp - vm).max() < 1e-9 + 4 * eps * vel
        assert np.abs(dp - dm).max() < 1e-9 + 4 * eps * acc
        assert np.abs(ap - am).max() < 1e-3 * acc


def test_interior_velocity_continuity_exact():
    # evaluate the analytic one-sided derivatives exactly at the knots
    rng = np.random.default_rng(4)
    times = [0.0, 0.9, 1.7, 3.0]
    values = rng.uniform(-2.0, 2.0, (4, 3))
    spline = TrajectorySpline(list(zip(times, values)))
    for t in times[1:-1]:
        _, dm, _ = spline.eval(t - 1e-12)
        _, dp, _ = spline.eval(t + 1e-12)
        assert np.abs(dp - dm).max() < 1e-9
