"""Synthetic highway scenarios and recordings for desk-scale runs.

Targets are constant-speed or accelerating lane keepers, or sigmoid lane
changers; an optional smooth speed wobble stands in for noise. Everything is
analytic, so the kinematic roundtrip of every target stays well below 5 cm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import SeededRng
from .scenes import (
    KEEP_LANE,
    LANE_CHANGE,
    NeighborGeometry,
    Scenario,
    assign_neighbors,
    to_target_frame,
)
from .tracks import Track

LANE_WIDTH = 3.5


@dataclass(frozen=True)
class SynthSpec:
    keep_lane: int = 0
    accelerating: int = 0
    lane_change: int = 0
    speed_range: tuple = (25.0, 35.0)
    accel_range: tuple = (-1.5, 1.5)
    noise: float = 0.0  # amplitude of the speed wobble, m/s
    dt: float = 0.2
    t_obs: int = 15
    t_f: int = 25
    lane_width: float = LANE_WIDTH
    lane_change_duration: float = 4.0
    neighbor_prob: float = 0.6

    def validate(self):
        if min(self.keep_lane, self.accelerating, self.lane_change) < 0:
            raise ValueError("scenario counts must be non-negative")
        if not self.lane_change_duration > 0:
            raise ValueError("lane_change_duration must be positive")
        if not self.dt > 0 or self.t_obs < 3 or self.t_f < 1:
            raise ValueError("need dt > 0, t_obs >= 3 and t_f >= 1")
        lo, hi = self.speed_range
        if not 0 < lo <= hi:
            raise ValueError(f"invalid speed range {self.speed_range}")
        if self.noise < 0 or not 0 <= self.neighbor_prob <= 1:
            raise ValueError("noise must be >= 0 and neighbor_prob in [0, 1]")
        window = (self.t_obs + self.t_f - 1) * self.dt
        if self.lane_change and self.lane_change_duration > window:
            raise ValueError("lane change does not fit in the scenario window")


def _sigmoid(u):
    return 1.0 / (1.0 + np.exp(-u))


def _lane_of(y, lane_width):
    return np.floor(y / lane_width).astype(np.int64) + 1


def _target_motion(kind, spec: SynthSpec, rng: SeededRng, t):
    """Analytic position, velocity and acceleration components of the target."""
    v0 = rng.uniform(*spec.speed_range)
    acc = rng.uniform(*spec.accel_range) if kind == "accelerating" else 0.0
    x = v0 * t + 0.5 * acc * t * t
    vx = v0 + acc * t
    ax = np.full_like(t, acc)
    if spec.noise > 0:
        amp = spec.noise
        om = rng.uniform(0.5, 1.5)
        ph = rng.uniform(0.0, 2 * np.pi)
        x = x + amp / om * (np.sin(om * t + ph) - np.sin(ph))
        vx = vx + amp * np.cos(om * t + ph)
        ax = ax - amp * om * np.sin(om * t + ph)
    y0 = 1.5 * spec.lane_width  # centre of lane 2
    if kind == "lane_change":
        side = -1.0 if rng.uniform() < 0.5 else 1.0
        k = 2.0 * np.log(99.0) / spec.lane_change_duration
        # centre near the end of the history so the onset is observable
        t_h = t[spec.t_obs - 1]
        tc = rng.uniform(t_h - 0.5, min(t_h + 1.5, t[-1]))
        s = _sigmoid(k * (t - tc))
        y = y0 + side * spec.lane_width * s
        vy = side * spec.lane_width * k * s * (1 - s)
        ay = side * spec.lane_width * k * k * s * (1 - s) * (1 - 2 * s)
    else:
        y = np.full_like(t, y0)
        vy = np.zeros_like(t)
        ay = np.zeros_like(t)
    return x, y, vx, vy, ax, ay


def _make_track(vid, frames, x, y, vx, vy, ax, ay, rate, lane_width):
    v = np.hypot(vx, vy)
    a = (ax * vx + ay * vy) / v
    return Track(vid, frames, x, y, v, a, _lane_of(y, lane_width), rate)


_SLOT_LAYOUT = {
    # lane offset, longitudinal gap range (m) at the reference sample
    "preceding": (0, (12.0, 45.0)),
    "following": (0, (-45.0, -12.0)),
    "left_preceding": (-1, (10.0, 40.0)),
    "left_alongside": (-1, (-3.5, 3.5)),
    "left_following": (-1, (-40.0, -10.0)),
    "right_preceding": (1, (10.0, 40.0)),
    "right_alongside": (1, (-3.5, 3.5)),
    "right_following": (1, (-40.0, -10.0)),
}


def _one_scenario(kind, index, spec: SynthSpec, rng: SeededRng, seed):
    n = spec.t_obs + spec.t_f
    t = np.arange(n) * spec.dt
    frames = np.arange(n)
    rate = 1.0 / spec.dt
    x, y, vx, vy, ax, ay = _target_motion(kind, spec, rng, t)
    x = x + 100.0
    target = _make_track(0, frames, x, y, vx, vy, ax, ay, rate, spec.lane_width)
    ref = spec.t_obs - 1
    ref_lane = target.lane_id[ref]
    cands = []
    for j, (slot, (dlane, (lo, hi))) in enumerate(_SLOT_LAYOUT.items()):
        if rng.uniform() >= spec.neighbor_prob:
            continue
        lane = ref_lane + dlane
        yc = (lane - 0.5) * spec.lane_width
        speed = max(1.0, vx[ref] + rng.uniform(-3.0, 3.0))
        gap = rng.uniform(lo, hi)
        xn = x[ref] + gap + speed * (t - t[ref])
        cands.append(_make_track(j + 1, frames, xn, np.full(n, yc), np.full(n, speed), np.zeros(n), np.zeros(n),
                                 np.zeros(n), rate, spec.lane_width))
    grid = assign_neighbors(target, cands, ref, NeighborGeometry())
    maneuver = LANE_CHANGE if kind == "lane_change" else KEEP_LANE
    scen = Scenario(f"synth-{seed}-{index:06d}", maneuver, float(spec.dt), spec.t_obs, spec.t_f, target, grid)
    return to_target_frame(scen)


def synth_generate(spec: SynthSpec, seed: int = 0):
    """Scenarios in the target frame, ``keep_lane`` + ``accelerating`` + ``lane_change`` of them."""
    spec.validate()
    root = SeededRng(seed)
    kinds = ["keep_lane"] * spec.keep_lane + ["accelerating"] * spec.accelerating + ["lane_change"] * spec.lane_change
    return [_one_scenario(kind, i, spec, root.child(f"scenario-{i}"), seed) for i, kind in enumerate(kinds)]


def synth_recording(seed: int = 0, n_vehicles: int = 40, frame_rate: float = 25.0, duration_s: float = 40.0,
                    lane_change_prob: float = 0.4, lane_width: float = LANE_WIDTH):
    """Raw tracks of a two-carriageway, three-lanes-each highway at ``frame_rate``.

    Lower carriageway (lanes 4-6) drives towards +x, upper (lanes 1-3) towards
    -x, as in highD. Each vehicle may change lanes once.
    """
    rng = SeededRng(seed)
    road_len = 420.0
    tracks = []
    n_frames = int(duration_s * frame_rate)
    for vid in range(1, n_vehicles + 1):
        r = rng.child(f"vehicle-{vid}")
        forward = r.uniform() < 0.7
        lane_idx = int(r.integers(0, 3))  # 0..2 within carriageway
        speed = r.uniform(22.0, 36.0)
        enter = int(r.integers(0, max(1, n_frames // 2)))
        length_frames = int(road_len / speed * frame_rate)
        end = min(n_frames, enter + length_frames)
        if end - enter < 3:
            continue
        frames = np.arange(enter, end)
        t = (frames - enter) / frame_rate
        if forward:
            base_y = (3 + lane_idx + 0.5) * lane_width
            x = speed * t
        else:
            base_y = (lane_idx + 0.5) * lane_width
            x = road_len - speed * t
        vx = np.full_like(t, speed if forward else -speed)
        ax = np.zeros_like(t)
        y = np.full_like(t, base_y)
        vy = np.zeros_like(t)
        ay = np.zeros_like(t)
        if r.uniform() < lane_change_prob:
            choices = [d for d in (-1, 1) if 0 <= lane_idx + d <= 2]
            side = float(choices[int(r.integers(0, len(choices)))])
            k = 2.0 * np.log(99.0) / 4.0
            tc = r.uniform(3.0, max(3.5, t[-1] - 3.0))
            s = _sigmoid(k * (t - tc))
            y = base_y + side * lane_width * s
            vy = side * lane_width * k * s * (1 - s)
            ay = side * lane_width * k * k * s * (1 - s) * (1 - 2 * s)
        tracks.append(_make_track(vid, frames, x, y, vx, vy, ax, ay, frame_rate, lane_width))
    return tracks
