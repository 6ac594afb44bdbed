import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xtrack.kinematics import (
    A_MAX,
    PSI_DOT_MAX,
    ControlSequence,
    KinematicState,
    MotionLimits,
    PropagationError,
    clamp_controls,
    derive_controls,
    derive_motion,
    rollout,
    rollout_states,
    roundtrip_error,
    wrap_angle,
)
from xtrack.numcore import Tensor, grad_check
from xtrack.numcore import tensor as T


def circle(radius, speed, dt, n, phase=0.0):
    t = np.arange(n) * dt
    ang = phase + speed / radius * t
    return radius * np.sin(ang), radius * (1 - np.cos(ang))


def lane_change(dt, duration=5.0, speed=30.0, width=3.5, length=4.0):
    t = np.arange(int(round(duration / dt)) + 1) * dt
    k = 2.0 * math.log(99.0) / length
    return speed * t, width / (1.0 + np.exp(-k * (t - duration / 2)))


# ---------------------------------------------------------------- limits / clamp

def test_yaw_rate_limit_conversion():
    assert PSI_DOT_MAX == 71.26 * math.pi / 180.0
    assert A_MAX == 9.0


def test_clamp_fixed_point_and_bounds():
    out = clamp_controls(ControlSequence([0.0, 100.0, -100.0], [0.0, -5.0, 5.0], 0.2))
    assert out.a_x[0] == 0.0 and out.psi_dot[0] == 0.0
    assert out.a_x[1] <= 9.0 and out.a_x[2] >= -9.0
    assert out.psi_dot[1] >= -1.243766 and out.psi_dot[2] <= 1.243766


@given(arrays(np.float64, (7, 2), elements=st.floats(-1e300, 1e300, allow_nan=False)))
def test_clamp_never_exceeds_limits(raw):
    out = clamp_controls(raw).data
    assert np.all(np.abs(out[:, 0]) <= A_MAX)
    assert np.all(np.abs(out[:, 1]) <= PSI_DOT_MAX)


def test_clamp_gradient_never_vanishes_inside_range():
    raw = Tensor(np.array([[8.0, 1.0], [-20.0, -3.0]]), requires_grad=True)
    clamp_controls(raw).sum().backward()
    assert np.all(raw.grad > 0)


def test_limits_must_be_positive():
    with pytest.raises(ValueError):
        MotionLimits(a_max=0.0)


def test_control_sequence_validation():
    with pytest.raises(ValueError):
        ControlSequence([0.0, 1.0], [0.0], 0.2)
    with pytest.raises(ValueError):
        ControlSequence([0.0], [0.0], 0.0)


# ---------------------------------------------------------------- rollout

def test_rest_stays_at_rest():
    pos, _ = rollout(KinematicState(3.0, -1.0, 0.0, 0.4), ControlSequence(np.zeros(25), np.zeros(25), 0.2))
    assert np.all(pos.data == [3.0, -1.0])


def test_uniform_motion_one_step():
    pos, st_ = rollout(KinematicState(0.0, 0.0, 10.0, 0.0), ControlSequence([0.0], [0.0], 0.2))
    assert pos.data.tolist() == [[2.0, 0.0]]
    assert st_.data[0, 2] == 10.0 and st_.data[0, 3] == 0.0


def test_turning_step_by_hand():
    _, s = rollout(KinematicState(0.0, 0.0, 10.0, 0.0), ControlSequence([0.0], [0.1], 0.1))
    x, y, v, psi = s.data[0]
    assert x == pytest.approx(1.0, abs=1e-15)
    assert y == pytest.approx(0.005, abs=1e-15)
    assert psi == pytest.approx(0.01, abs=1e-15)
    assert v == 10.0


state_st = st.tuples(st.floats(-100, 100), st.floats(-100, 100), st.floats(0, 40), st.floats(-4, 4))


@given(state_st, st.integers(1, 40), st.sampled_from([0.04, 0.1, 0.2]))
def test_zero_controls_trace_a_straight_line(init, n, dt):
    _, s = rollout(np.array(init), np.zeros((n, 2)), dt)
    s = s.data
    x0, y0, v0, p0 = init
    assert np.all(s[:, 2] == v0) and np.all(s[:, 3] == p0)
    pts = np.vstack([[x0, y0], s[:, :2]])
    steps = np.diff(pts, axis=0)
    np.testing.assert_allclose(steps, np.tile([v0 * dt * math.cos(p0), v0 * dt * math.sin(p0)], (n, 1)),
                               rtol=0, atol=1e-9)


@given(state_st, st.floats(-math.pi, math.pi), arrays(np.float64, (10, 2), elements=st.floats(-3, 3)))
def test_rotation_equivariance(init, theta, ctrl):
    x0, y0, v0, p0 = init
    base, _ = rollout(np.array([0.0, 0.0, v0, p0]), ctrl, 0.2)
    turned, _ = rollout(np.array([0.0, 0.0, v0, p0 + theta]), ctrl, 0.2)
    c, s = math.cos(theta), math.sin(theta)
    rot = base.data @ np.array([[c, s], [-s, c]])
    scale = 1.0 + np.abs(base.data).max()
    np.testing.assert_allclose(turned.data, rot, rtol=0, atol=1e-12 * scale)


def test_batched_rollout_matches_single():
    g = np.random.default_rng(0)
    init = np.column_stack([g.normal(size=3), g.normal(size=3), g.uniform(5, 30, 3), g.normal(size=3)])
    ctrl = g.normal(size=(3, 6, 2))
    batch = rollout_states(init, ctrl, 0.2).data
    for b in range(3):
        np.testing.assert_array_equal(batch[b], rollout_states(init[b], ctrl[b], 0.2).data)


def test_propagation_error_names_step():
    ctrl = np.zeros((5, 2))
    ctrl[2, 0] = 1e308
    with pytest.raises(PropagationError) as err:
        rollout_states(np.array([0.0, 0.0, 1e300, 0.0]), ctrl, 10.0)
    assert err.value.step == 2


def test_rollout_shape_errors():
    with pytest.raises(ValueError):
        rollout_states(np.zeros((2, 4)), np.zeros((3, 5, 2)), 0.2)
    with pytest.raises(ValueError):
        rollout(np.zeros(4), np.zeros((3, 2)))


@pytest.mark.parametrize("seed", range(5))
def test_final_position_gradient(seed):
    g = np.random.default_rng(seed)
    init = Tensor([g.normal(), g.normal(), g.uniform(5, 30), g.uniform(-1, 1)], requires_grad=True)
    ctrl = Tensor(g.normal(size=(8, 2)) * [2.0, 0.3], requires_grad=True)
    w = g.normal(size=2)
    rep = grad_check(lambda i, u: (rollout_states(i, u, 0.2)[-1, 0:2] * w).sum(), [init, ctrl], epsilon=1e-6)
    assert rep.max_relative_error < 1e-6


# ---------------------------------------------------------------- derivation

def test_straight_constant_speed():
    t = np.arange(20) * 0.2
    prof = derive_motion(5.0 + 25.0 * t, np.full_like(t, 1.75), 0.2)
    assert np.max(np.abs(prof.a_x)) <= 1e-10 and np.max(np.abs(prof.psi_dot)) <= 1e-10
    np.testing.assert_allclose(prof.v, 25.0)


def test_straight_constant_acceleration():
    t = np.arange(20) * 0.2
    prof = derive_motion(20.0 * t + 0.5 * 1.5 * t**2, np.zeros_like(t), 0.2)
    np.testing.assert_allclose(prof.a_x, 1.5, rtol=0, atol=1e-9)
    assert np.max(np.abs(prof.psi_dot)) <= 1e-12


def test_circle_yaw_rate():
    x, y = circle(100.0, 10.0, 0.2, 40)
    ctrl, last = derive_controls(x, y, 0.2)
    np.testing.assert_allclose(ctrl.psi_dot, 0.1, atol=1e-3)
    assert last.v == pytest.approx(10.0, rel=1e-3)


def test_heading_unwraps_across_pi():
    # a circle traced through psi = +-pi
    x, y = circle(20.0, 10.0, 0.1, 200)
    prof = derive_motion(x, y, 0.1)
    np.testing.assert_allclose(prof.psi_dot, 0.5, atol=1e-2)
    assert np.ptp(prof.psi) > 2 * math.pi


def test_wrap_angle_range():
    a = wrap_angle(np.array([math.pi, -math.pi, 3 * math.pi, 0.1]))
    np.testing.assert_allclose(a, [math.pi, math.pi, math.pi, 0.1])


def test_derivation_errors():
    with pytest.raises(ValueError):
        derive_motion([0.0, 1.0], [0.0, 0.0], 0.2)
    with pytest.raises(ValueError):
        derive_motion([0.0, 1.0, 2.0], [0.0, 0.0, 0.0], 0.2, times=[0.0, 0.2, 0.41])
    derive_motion([0.0, 1.0, 2.0], [0.0, 0.0, 0.0], 0.2, times=[0.0, 0.2, 0.4 + 5e-7])


def test_roundtrip_straight_line():
    t = np.arange(30) * 0.2
    assert roundtrip_error(3.0 + 28.0 * t, -2.0 + 1.0 * t, 0.2) < 1e-9


def test_roundtrip_lane_change():
    x, y = lane_change(0.2)
    assert roundtrip_error(x, y, 0.2) < 0.1


def test_roundtrip_converges_with_dt():
    errs = []
    for dt in (0.4, 0.2, 0.1, 0.05):
        x, y = circle(100.0, 10.0, dt, int(round(8.0 / dt)) + 1)
        errs.append(roundtrip_error(x, y, dt))
    assert all(b < a for a, b in zip(errs, errs[1:]))
