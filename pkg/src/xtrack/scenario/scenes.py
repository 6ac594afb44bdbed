"""Scenario windows: extraction, neighbor slots, target frame, balancing, splits."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..numcore import SeededRng
from .tracks import Track

SLOT_NAMES = (
    "preceding",
    "following",
    "left_preceding",
    "left_alongside",
    "left_following",
    "right_preceding",
    "right_alongside",
    "right_following",
)
KEEP_LANE = "keep_lane"
LANE_CHANGE = "lane_change"
MANEUVERS = (KEEP_LANE, LANE_CHANGE)
GHOST_ID = -1


class DegenerateScenarioError(ValueError):
    """Target does not move over the history, so the travel direction is undefined."""


@dataclass
class Neighbor:
    track: Track
    ghost: bool = False


@dataclass
class NeighborGrid:
    slots: dict  # slot name -> Neighbor, in SLOT_NAMES order

    def __post_init__(self):
        if tuple(self.slots) != SLOT_NAMES:
            raise ValueError(f"neighbor grid needs exactly the slots {SLOT_NAMES}, got {tuple(self.slots)}")

    def __getitem__(self, name) -> Neighbor:
        return self.slots[name]

    def __iter__(self):
        return iter(self.slots.values())

    def __len__(self):
        return len(self.slots)

    def ghost_count(self) -> int:
        return sum(n.ghost for n in self)

    @classmethod
    def all_ghosts(cls, target: Track) -> "NeighborGrid":
        return cls({s: Neighbor(ghost_of(target), True) for s in SLOT_NAMES})


@dataclass
class Scenario:
    scenario_id: str
    maneuver: str
    dt: float
    t_obs: int
    t_f: int
    target: Track
    neighbors: NeighborGrid

    def __post_init__(self):
        if self.maneuver not in MANEUVERS:
            raise ValueError(f"unknown maneuver {self.maneuver!r}")
        n = self.t_obs + self.t_f
        for tr in [self.target] + [nb.track for nb in self.neighbors]:
            if len(tr) != n:
                raise ValueError(f"scenario {self.scenario_id}: member track has {len(tr)} samples, expected {n}")

    def members(self):
        """Target first, then the 8 slots in fixed order."""
        return [self.target] + [nb.track for nb in self.neighbors]

    def history(self, track=None) -> Track:
        return (track or self.target).take(slice(0, self.t_obs))

    def future_xy(self) -> np.ndarray:
        return np.stack([self.target.x[self.t_obs:], self.target.y[self.t_obs:]], axis=-1)

    def map_tracks(self, fn) -> "Scenario":
        grid = NeighborGrid({s: Neighbor(fn(nb.track), nb.ghost) for s, nb in self.neighbors.slots.items()})
        return Scenario(self.scenario_id, self.maneuver, self.dt, self.t_obs, self.t_f, fn(self.target), grid)

    def equals(self, other: "Scenario") -> bool:
        return (
            (self.scenario_id, self.maneuver, self.dt, self.t_obs, self.t_f)
            == (other.scenario_id, other.maneuver, other.dt, other.t_obs, other.t_f)
            and self.target.equals(other.target)
            and all(a.ghost == b.ghost and a.track.equals(b.track) for a, b in zip(self.neighbors, other.neighbors))
        )


def ghost_of(target: Track) -> Track:
    return target.copy(vehicle_id=GHOST_ID)


# ---------------------------------------------------------------- neighbors

@dataclass(frozen=True)
class NeighborGeometry:
    alongside_gap: float = 5.0  # m, |dx| at or below this is "alongside" in adjacent lanes


def assign_neighbors(target: Track, candidates, ref_index: int, geometry: NeighborGeometry = NeighborGeometry(),
                     direction: float | None = None) -> NeighborGrid:
    """Fill the 8 slots from ``candidates`` sampled on the same frames as ``target``.

    Classification happens at sample ``ref_index`` (the last observed one) in
    the target's travel frame: lane offset from lane ids, side from the
    lateral offset (left is negative y once x points along travel), and
    longitudinal offset ahead / alongside / behind. Nearest wins each slot;
    ties go to the lower vehicle id. Empty slots become ghosts.
    """
    if direction is None:
        direction = travel_direction(target, ref_index + 1)
    xt, yt = target.x[ref_index], target.y[ref_index]
    lane_t = target.lane_id[ref_index]
    best = {}
    for cand in candidates:
        if cand.vehicle_id == target.vehicle_id:
            continue
        dx = (cand.x[ref_index] - xt) * direction
        dy = (cand.y[ref_index] - yt) * direction
        dlane = int(cand.lane_id[ref_index] - lane_t)
        if dlane == 0:
            slot = "preceding" if dx >= 0 else "following"
        elif abs(dlane) == 1:
            side = "left" if dy < 0 else "right"
            if dx > geometry.alongside_gap:
                slot = side + "_preceding"
            elif dx < -geometry.alongside_gap:
                slot = side + "_following"
            else:
                slot = side + "_alongside"
        else:
            continue
        key = (abs(dx), cand.vehicle_id)
        if slot not in best or key < best[slot][0]:
            best[slot] = (key, cand)
    slots = {}
    for s in SLOT_NAMES:
        if s in best:
            slots[s] = Neighbor(best[s][1], False)
        else:
            slots[s] = Neighbor(ghost_of(target), True)
    return NeighborGrid(slots)


# ---------------------------------------------------------------- extraction

def travel_direction(track: Track, t_obs: int) -> float:
    dx = track.x[t_obs - 1] - track.x[0]
    dy = track.y[t_obs - 1] - track.y[0]
    if math.hypot(dx, dy) < 1e-6:
        raise DegenerateScenarioError(f"vehicle {track.vehicle_id} does not move over the observed history")
    return -1.0 if dx < 0 else 1.0


def _sampling_step(frame_rate: float, dt_target: float) -> int:
    ratio = frame_rate * dt_target
    step = int(round(ratio))
    if step < 1 or abs(step - ratio) > 1e-9:
        raise ValueError(f"source rate {frame_rate} Hz cannot be downsampled to dt={dt_target} s by an integer stride")
    return step


def _thread_count() -> int:
    raw = os.environ.get("XTRACK_THREADS", "").strip()
    if not raw:
        return 1
    n = int(raw)
    if n < 1:
        raise ValueError(f"XTRACK_THREADS must be >= 1, got {raw!r}")
    return n


def _windows_for(target: Track, index, dt_target, t_obs, t_f, stride_s, recording, geometry):
    step = _sampling_step(target.frame_rate, dt_target)
    n = t_obs + t_f
    span = (n - 1) * step
    stride = max(1, int(round(stride_s * target.frame_rate)))
    firsts, lasts, tracks = index
    out = []
    for s in range(0, len(target) - span, stride):
        idx = s + np.arange(n) * step
        f0, f1 = int(target.frames[s]), int(target.frames[s + span])
        window = target.take(idx)
        try:
            direction = travel_direction(window, t_obs)
        except DegenerateScenarioError:
            continue
        lanes = target.lane_id[s:s + span + 1]
        maneuver = LANE_CHANGE if np.any(lanes != lanes[0]) else KEEP_LANE
        covering = np.flatnonzero((firsts <= f0) & (lasts >= f1))
        cands = []
        for c in covering:
            tr = tracks[c]
            if tr.vehicle_id == target.vehicle_id or _sampling_step(tr.frame_rate, dt_target) != step:
                continue
            cands.append(tr.take(idx + (f0 - int(tr.frames[0])) - s))
        grid = assign_neighbors(window, cands, t_obs - 1, geometry, direction)
        sid = f"{recording}-{target.vehicle_id:06d}-{f0:08d}"
        out.append(Scenario(sid, maneuver, float(dt_target), t_obs, t_f, window, grid))
    return out


def extract_scenarios(tracks, dt_target: float = 0.2, t_obs: int = 15, t_f: int = 25, stride_s: float = 1.0,
                      recording: str = "rec", geometry: NeighborGeometry = NeighborGeometry(), threads=None):
    """Sliding windows of t_obs + t_f samples at ``dt_target`` for every vehicle.

    A window is a lane change iff the target's lane id changes at any source
    frame inside it. Neighbors must be present over the whole window.
    Work is split per target vehicle across ``threads`` workers (default
    ``XTRACK_THREADS`` or 1); output is ordered by scenario id.
    """
    tracks = list(tracks)
    if not tracks:
        return []
    firsts = np.array([int(t.frames[0]) for t in tracks])
    lasts = np.array([int(t.frames[-1]) for t in tracks])
    index = (firsts, lasts, tracks)
    threads = threads or _thread_count()

    def job(tr):
        return _windows_for(tr, index, dt_target, t_obs, t_f, stride_s, recording, geometry)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, tracks))
    else:
        parts = [job(tr) for tr in tracks]
    scenarios = [s for part in parts for s in part]
    scenarios.sort(key=lambda s: s.scenario_id)
    return scenarios


# ---------------------------------------------------------------- target frame

def to_target_frame(scenario: Scenario) -> Scenario:
    """Translate so the target's first sample is the origin and x points along travel.

    Vehicles travelling towards decreasing source x are turned by 180 degrees
    (both axes flipped), which keeps the transform an isometry.
    """
    direction = travel_direction(scenario.target, scenario.t_obs)
    x0, y0 = scenario.target.x[0], scenario.target.y[0]
    if x0 == 0.0 and y0 == 0.0 and direction > 0:
        return scenario

    def move(tr: Track) -> Track:
        return tr.copy(x=(tr.x - x0) * direction, y=(tr.y - y0) * direction)

    return scenario.map_tracks(move)


# ---------------------------------------------------------------- balancing / splits

def balance_scenarios(scenarios, seed: int = 0):
    """Downsample every maneuver class to the minority count, then shuffle.

    A class with no members makes the minority count zero.
    """
    rng = SeededRng(seed)
    by_class = {m: sorted((s for s in scenarios if s.maneuver == m), key=lambda s: s.scenario_id) for m in MANEUVERS}
    k = min(len(v) for v in by_class.values())
    picked = []
    for m in MANEUVERS:
        members = by_class[m]
        sel = np.sort(rng.child(m).choice(len(members), size=k, replace=False)) if k else []
        picked.extend(members[i] for i in sel)
    order = rng.child("shuffle").permutation(len(picked))
    return [picked[i] for i in order]


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.1
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {fr}")


def split_dataset(scenarios, spec: SplitSpec = SplitSpec()):
    """Seeded shuffle, then contiguous train/val/test blocks (floor, remainder to test)."""
    scenarios = list(scenarios)
    n = len(scenarios)
    order = SeededRng(spec.seed).child("split").permutation(n)
    n_train = int(math.floor(spec.train * n + 1e-9))
    n_val = int(math.floor(spec.val * n + 1e-9))
    shuffled = [scenarios[i] for i in order]
    return {
        "train": shuffled[:n_train],
        "val": shuffled[n_train:n_train + n_val],
        "test": shuffled[n_train + n_val:],
    }


@dataclass
class PipelineStats:
    extracted: int = 0
    dropped_degenerate: int = 0
    counts: dict = field(default_factory=dict)


def preprocess(tracks, dt_target=0.2, t_obs=15, t_f=25, stride_s=1.0, recording="rec", seed=0,
               split=SplitSpec(), geometry=NeighborGeometry(), threads=None, balance=True):
    """Full pipeline: extract -> balance -> target frame -> split."""
    scenarios = extract_scenarios(tracks, dt_target, t_obs, t_f, stride_s, recording, geometry, threads)
    stats = PipelineStats(extracted=len(scenarios))
    if balance:
        scenarios = balance_scenarios(scenarios, seed)
    framed = []
    for s in scenarios:
        try:
            framed.append(to_target_frame(s))
        except DegenerateScenarioError:
            stats.dropped_degenerate += 1
    parts = split_dataset(framed, SplitSpec(split.train, split.val, split.test, seed))
    stats.counts = {k: len(v) for k, v in parts.items()}
    return parts, stats
