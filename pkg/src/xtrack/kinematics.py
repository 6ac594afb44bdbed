"""Kinematic layer: control derivation, saturation and differentiable rollout.

The vehicle state is (x, y, v, psi); controls are longitudinal acceleration
a_x and yaw rate psi_dot, applied for one step of length dt with a
second-order position update.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .numcore import Tensor, as_tensor
from .numcore import tensor as T

A_MAX = 9.0  # m/s^2
PSI_DOT_MAX_DEG = 71.26  # deg/s
PSI_DOT_MAX = math.radians(PSI_DOT_MAX_DEG)  # rad/s
TIMESTAMP_TOL = 1e-6  # s


class PropagationError(FloatingPointError):
    def __init__(self, step: int, message: str = ""):
        super().__init__(message or f"rollout state became non-finite at step {step}")
        self.step = step


@dataclass(frozen=True)
class KinematicState:
    x: float
    y: float
    v: float
    psi: float

    def as_array(self):
        return np.array([self.x, self.y, self.v, self.psi], dtype=np.float64)


@dataclass
class ControlSequence:
    a_x: np.ndarray
    psi_dot: np.ndarray
    dt: float

    def __post_init__(self):
        self.a_x = np.asarray(self.a_x, dtype=np.float64)
        self.psi_dot = np.asarray(self.psi_dot, dtype=np.float64)
        if self.a_x.shape != self.psi_dot.shape:
            raise ValueError(f"a_x {self.a_x.shape} and psi_dot {self.psi_dot.shape} differ in length")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    def __len__(self):
        return self.a_x.shape[-1]

    def as_array(self):
        return np.stack([self.a_x, self.psi_dot], axis=-1)


@dataclass(frozen=True)
class MotionLimits:
    a_max: float = A_MAX
    psi_dot_max: float = PSI_DOT_MAX

    def __post_init__(self):
        if not (self.a_max > 0 and self.psi_dot_max > 0):
            raise ValueError("motion limits must be strictly positive")

    def as_array(self):
        return np.array([self.a_max, self.psi_dot_max])


DEFAULT_LIMITS = MotionLimits()


# ---------------------------------------------------------------- saturation

def clamp_controls(raw, limits: MotionLimits = DEFAULT_LIMITS):
    """Smoothly saturate controls to the motion limits (``bound * tanh(u / bound)``).

    Accepts a :class:`ControlSequence` (returns one) or a Tensor/array whose
    last axis is (a_x, psi_dot) (returns a Tensor).
    """
    bounds = limits.as_array()
    if isinstance(raw, ControlSequence):
        with_grad = T.smooth_clamp(Tensor(raw.as_array()), bounds).data
        return ControlSequence(with_grad[..., 0], with_grad[..., 1], raw.dt)
    return T.smooth_clamp(as_tensor(raw), bounds)


# ---------------------------------------------------------------- rollout

def rollout_states(initial, controls, dt: float) -> Tensor:
    """Differentiable rollout.

    initial: (B, 4) or (4,) tensor of (x, y, v, psi);
    controls: (B, T, 2) or (T, 2) tensor of (a_x, psi_dot).
    Returns states after each step, (B, T, 4) or (T, 4).
    """
    initial, controls = as_tensor(initial), as_tensor(controls)
    squeeze = controls.ndim == 2
    if squeeze:
        initial = initial.reshape((1, 4))
        controls = controls.reshape((1,) + controls.shape)
    if initial.shape != (controls.shape[0], 4) or controls.shape[-1] != 2:
        raise ValueError(f"rollout: initial {initial.shape} and controls {controls.shape} do not conform")
    dt = float(dt)
    init_d = np.ascontiguousarray(initial.data)
    ctrl_d = np.ascontiguousarray(controls.data)
    states = kernels.rollout_forward(init_d, ctrl_d, dt)
    if not np.all(np.isfinite(states)):
        bad = np.argwhere(~np.isfinite(states))
        raise PropagationError(int(bad[:, 1].min()))

    def backward(g):
        gu, ginit = kernels.rollout_backward(np.ascontiguousarray(g), init_d, ctrl_d, states, dt)
        return ginit, gu

    out = T.make_op(states, (initial, controls), backward, "rollout")
    if squeeze:
        out = out.reshape(out.shape[1:])
    return out


def rollout(initial, controls, dt=None):
    """Roll out controls from ``initial``; returns (positions, states).

    ``initial`` may be a KinematicState; ``controls`` a ControlSequence (then
    ``dt`` comes from it) or a tensor.
    """
    if isinstance(initial, KinematicState):
        initial = initial.as_array()
    if isinstance(controls, ControlSequence):
        dt = controls.dt if dt is None else dt
        controls = controls.as_array()
    if dt is None:
        raise ValueError("dt is required when controls are not a ControlSequence")
    states = rollout_states(initial, controls, dt)
    return states[..., 0:2], states


# ---------------------------------------------------------------- derivation

@dataclass
class MotionProfile:
    """Per-sample kinematic quantities of a sampled track."""

    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    psi: np.ndarray
    a_x: np.ndarray
    psi_dot: np.ndarray
    dt: float

    def state_at(self, k: int) -> KinematicState:
        return KinematicState(float(self.x[k]), float(self.y[k]), float(self.v[k]), float(self.psi[k]))

    def controls(self) -> ControlSequence:
        return ControlSequence(self.a_x, self.psi_dot, self.dt)


def _check_dt(times, dt):
    if times is None:
        return
    steps = np.diff(np.asarray(times, dtype=np.float64))
    if np.any(np.abs(steps - dt) > TIMESTAMP_TOL):
        raise ValueError(f"timestamps are not uniform at dt={dt} (tolerance {TIMESTAMP_TOL} s)")


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    w = np.mod(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def derive_motion(x, y, dt: float, times=None) -> MotionProfile:
    """Speed, heading, acceleration and yaw rate from sampled positions.

    Velocity components use second-order differences (central inside,
    one-sided at the ends), so speed and heading are accurate at each
    sample. a_x and psi_dot are forward differences of speed and unwrapped
    heading, making them exact step increments for the rollout; the last
    sample repeats the backward difference.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if x.size < 3:
        raise ValueError(f"need at least 3 samples to derive controls, got {x.size}")
    if not dt > 0:
        raise ValueError("dt must be positive")
    _check_dt(times, dt)
    vx = np.gradient(x, dt, edge_order=2)
    vy = np.gradient(y, dt, edge_order=2)
    v = np.hypot(vx, vy)
    psi = np.arctan2(vy, vx)
    psi = psi[0] + np.concatenate([[0.0], np.cumsum(wrap_angle(np.diff(psi)))])
    a = np.empty_like(v)
    w = np.empty_like(v)
    a[:-1] = np.diff(v) / dt
    a[-1] = a[-2]
    w[:-1] = np.diff(psi) / dt
    w[-1] = w[-2]
    return MotionProfile(x.copy(), y.copy(), v, psi, a, w, float(dt))


def derive_controls(x, y, dt: float, times=None):
    """Controls for every sample plus the state at the final sample."""
    prof = derive_motion(x, y, dt, times)
    return prof.controls(), prof.state_at(len(prof.x) - 1)


def roundtrip_error(x, y, dt: float, times=None) -> float:
    """Max distance between a track and its derive-then-rollout reconstruction."""
    prof = derive_motion(x, y, dt, times)
    ctrl = np.stack([prof.a_x[:-1], prof.psi_dot[:-1]], axis=-1)
    pos, _ = rollout(prof.state_at(0), ctrl, dt)
    err = np.hypot(pos.data[:, 0] - prof.x[1:], pos.data[:, 1] - prof.y[1:])
    return float(err.max())
