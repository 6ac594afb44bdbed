"""Track CSV ingestion and writing.

Contract columns: frame,id,x,y,xVelocity,yVelocity,xAcceleration,yAcceleration,laneId
(meters, m/s, m/s^2; one row per vehicle per frame). A :class:`FormatConfig`
maps vendor column names onto the contract and declares the frame rate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

CONTRACT_COLUMNS = ("frame", "id", "x", "y", "xVelocity", "yVelocity", "xAcceleration", "yAcceleration", "laneId")


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


@dataclass
class Track:
    vehicle_id: int
    frames: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    a: np.ndarray
    lane_id: np.ndarray
    frame_rate: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        self.lane_id = np.asarray(self.lane_id, dtype=np.int64)
        n = len(self.frames)
        for name in ("x", "y", "v", "a", "lane_id"):
            if len(getattr(self, name)) != n:
                raise SchemaError(f"track {self.vehicle_id}: field {name} has length {len(getattr(self, name))}, expected {n}")

    def __len__(self):
        return len(self.frames)

    def take(self, idx) -> "Track":
        return Track(self.vehicle_id, self.frames[idx], self.x[idx], self.y[idx], self.v[idx], self.a[idx],
                     self.lane_id[idx], self.frame_rate)

    def copy(self, **changes) -> "Track":
        fields = dict(vehicle_id=self.vehicle_id, frames=self.frames.copy(), x=self.x.copy(), y=self.y.copy(),
                      v=self.v.copy(), a=self.a.copy(), lane_id=self.lane_id.copy(), frame_rate=self.frame_rate)
        fields.update(changes)
        return Track(**fields)

    def features(self) -> np.ndarray:
        """(T, 4) array of (x, y, v, a)."""
        return np.stack([self.x, self.y, self.v, self.a], axis=-1)

    def equals(self, other: "Track") -> bool:
        return (
            self.vehicle_id == other.vehicle_id
            and self.frame_rate == other.frame_rate
            and all(np.array_equal(getattr(self, f), getattr(other, f)) for f in ("frames", "x", "y", "v", "a", "lane_id"))
        )


@dataclass
class FormatConfig:
    """Vendor column mapping. A mapped value starting with ``@`` is a constant."""

    columns: dict = field(default_factory=dict)
    frame_rate: float = 25.0
    length_scale: float = 1.0

    def vendor(self, name: str) -> str:
        return self.columns.get(name, name)

    @classmethod
    def from_mapping(cls, mapping: dict) -> "FormatConfig":
        cfg = cls()
        for key, value in mapping.items():
            if key.startswith("format."):
                key = key[len("format."):]
            if key.startswith("column."):
                col = key[len("column."):]
                if col not in CONTRACT_COLUMNS:
                    raise SchemaError(f"unknown contract column {col!r} in format config")
                cfg.columns[col] = str(value)
            elif key == "frame_rate":
                cfg.frame_rate = float(value)
            elif key == "length_scale":
                cfg.length_scale = float(value)
            else:
                raise SchemaError(f"unknown format config key {key!r}")
        return cfg


HIGHD = FormatConfig(frame_rate=25.0)
NGSIM = FormatConfig(
    columns={
        "frame": "Frame_ID", "id": "Vehicle_ID", "x": "Local_Y", "y": "Local_X", "xVelocity": "v_Vel",
        "yVelocity": "@0", "xAcceleration": "v_Acc", "yAcceleration": "@0", "laneId": "Lane_ID",
    },
    frame_rate=10.0,
    length_scale=0.3048,
)


def _numeric_column(df, name, vendor):
    if vendor.startswith("@"):
        return np.full(len(df), float(vendor[1:]))
    if vendor not in df.columns:
        raise SchemaError(f"missing column {vendor!r} (contract column {name!r})")
    raw = df[vendor]
    if pd.api.types.is_numeric_dtype(raw.dtype):
        vals = raw.to_numpy(dtype=np.float64)
        bad = np.flatnonzero(np.isnan(vals))
    else:
        vals = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
        bad = np.flatnonzero(np.isnan(vals))
    if bad.size:
        row = int(bad[0]) + 2  # header is line 1
        raise ParseError(f"non-numeric value {raw.iloc[bad[0]]!r} in column {vendor!r} at row {row}", row=row, column=vendor)
    return vals


def load_tracks(path, format_config: FormatConfig | None = None) -> list[Track]:
    """Read a track CSV into per-vehicle :class:`Track` objects, sorted by id."""
    cfg = format_config or HIGHD
    df = pd.read_csv(path, float_precision="round_trip", skipinitialspace=True)
    cols = {name: _numeric_column(df, name, cfg.vendor(name)) for name in CONTRACT_COLUMNS}
    if len(df) == 0:
        return []
    scale = cfg.length_scale
    if scale != 1.0:
        for name in ("x", "y", "xVelocity", "yVelocity", "xAcceleration", "yAcceleration"):
            cols[name] = cols[name] * scale
    vx, vy = cols["xVelocity"], cols["yVelocity"]
    speed = np.hypot(vx, vy)
    moving = speed > 0
    ux = np.where(moving, vx / np.where(moving, speed, 1.0), 1.0)
    uy = np.where(moving, vy / np.where(moving, speed, 1.0), 0.0)
    accel = cols["xAcceleration"] * ux + cols["yAcceleration"] * uy

    ids = cols["id"].astype(np.int64)
    frames = cols["frame"].astype(np.int64)
    order = np.lexsort((frames, ids))
    ids, frames = ids[order], frames[order]
    uniq, starts = np.unique(ids, return_index=True)
    bounds = list(starts[1:]) + [len(ids)]
    tracks = []
    for vid, s, e in zip(uniq, starts, bounds):
        sel = order[s:e]
        fr = frames[s:e]
        if np.any(np.diff(fr) != 1):
            raise SchemaError(f"vehicle {int(vid)}: frames are not strictly increasing and contiguous")
        tracks.append(Track(int(vid), fr, cols["x"][sel], cols["y"][sel], speed[sel], accel[sel],
                            cols["laneId"][sel].astype(np.int64), cfg.frame_rate))
    return tracks


def write_tracks(tracks, path):
    """Write tracks in the contract format (speed along x, zero lateral components)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CONTRACT_COLUMNS) + "\n")
        for tr in tracks:
            for k in range(len(tr)):
                fh.write(
                    f"{int(tr.frames[k])},{tr.vehicle_id},{float(tr.x[k])!r},{float(tr.y[k])!r},{float(tr.v[k])!r},0.0,"
                    f"{float(tr.a[k])!r},0.0,{int(tr.lane_id[k])}\n"
                )
