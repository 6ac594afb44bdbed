"""Line-delimited scenario archives.

Line 1 is a header ``{"format": "xtrack-scenarios", "version": 1, ...}``;
every following line is one JSON scenario record with fields in this order:

    scenario_id, maneuver, dt, t_obs, t_f, target, neighbors

``target`` and each neighbor ``track`` hold
``vehicle_id, frame_rate, frames, x, y, v, a, lane_id``; ``neighbors`` is a
list of ``{"slot", "ghost", "track"}`` in fixed slot order. Floats are written
with ``repr`` (shortest round-tripping decimal), so read-back is bit-exact.
"""
from __future__ import annotations

import json

from .scenes import SLOT_NAMES, Neighbor, NeighborGrid, Scenario
from .tracks import Track

FORMAT = "xtrack-scenarios"
VERSION = 1
RECORD_FIELDS = ("scenario_id", "maneuver", "dt", "t_obs", "t_f", "target", "neighbors")
TRACK_FIELDS = ("vehicle_id", "frame_rate", "frames", "x", "y", "v", "a", "lane_id")


class ArchiveError(ValueError):
    pass


def _track_record(tr: Track) -> dict:
    return {
        "vehicle_id": int(tr.vehicle_id),
        "frame_rate": float(tr.frame_rate),
        "frames": [int(f) for f in tr.frames],
        "x": [float(v) for v in tr.x],
        "y": [float(v) for v in tr.y],
        "v": [float(v) for v in tr.v],
        "a": [float(v) for v in tr.a],
        "lane_id": [int(v) for v in tr.lane_id],
    }


def scenario_record(s: Scenario) -> dict:
    return {
        "scenario_id": s.scenario_id,
        "maneuver": s.maneuver,
        "dt": float(s.dt),
        "t_obs": int(s.t_obs),
        "t_f": int(s.t_f),
        "target": _track_record(s.target),
        "neighbors": [
            {"slot": name, "ghost": bool(nb.ghost), "track": _track_record(nb.track)}
            for name, nb in s.neighbors.slots.items()
        ],
    }


def _track_from(rec) -> Track:
    return Track(rec["vehicle_id"], rec["frames"], rec["x"], rec["y"], rec["v"], rec["a"], rec["lane_id"], rec["frame_rate"])


def scenario_from_record(rec: dict) -> Scenario:
    slots = {}
    for nb in rec["neighbors"]:
        slots[nb["slot"]] = Neighbor(_track_from(nb["track"]), bool(nb["ghost"]))
    if tuple(slots) != SLOT_NAMES:
        raise ArchiveError(f"scenario {rec.get('scenario_id')}: neighbor slots {tuple(slots)} are not {SLOT_NAMES}")
    return Scenario(rec["scenario_id"], rec["maneuver"], rec["dt"], rec["t_obs"], rec["t_f"], _track_from(rec["target"]),
                    NeighborGrid(slots))


def write_archive(scenarios, path):
    with open(path, "w", encoding="utf-8") as fh:
        header = {"format": FORMAT, "version": VERSION, "fields": list(RECORD_FIELDS), "track_fields": list(TRACK_FIELDS)}
        fh.write(json.dumps(header) + "\n")
        for s in scenarios:
            fh.write(json.dumps(scenario_record(s), allow_nan=False) + "\n")


def read_archive(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise ArchiveError(f"{path}: missing or unreadable version header") from exc
        if not isinstance(header, dict) or header.get("format") != FORMAT:
            raise ArchiveError(f"{path}: not a scenario archive")
        if header.get("version") != VERSION:
            raise ArchiveError(f"{path}: unsupported archive version {header.get('version')!r} (expected {VERSION})")
        out = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                out.append(scenario_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ArchiveError(f"{path}:{lineno}: malformed scenario record ({exc})") from exc
    return out
