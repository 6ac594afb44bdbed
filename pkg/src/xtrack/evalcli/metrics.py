"""Displacement metrics over (N, t_f, 2) position arrays."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


def _pair(preds, gts):
    p = np.asarray(preds, dtype=np.float64)
    g = np.asarray(gts, dtype=np.float64)
    if p.shape != g.shape:
        raise MetricError(f"prediction shape {p.shape} != ground truth shape {g.shape}")
    if p.ndim == 2:
        p, g = p[None], g[None]
    if p.ndim != 3 or p.shape[-1] != 2:
        raise MetricError(f"expected (N, t_f, 2) arrays, got {p.shape}")
    if p.shape[0] == 0 or p.shape[1] == 0:
        raise MetricError("need at least one trajectory with at least one step")
    return p, g


def step_errors(preds, gts) -> np.ndarray:
    """(N, t_f) Euclidean distances."""
    p, g = _pair(preds, gts)
    return np.hypot(p[..., 0] - g[..., 0], p[..., 1] - g[..., 1])


def ade(preds, gts) -> float:
    return float(step_errors(preds, gts).mean())


def fde(preds, gts) -> float:
    return float(step_errors(preds, gts)[:, -1].mean())


def horizon_index(t: float, dt: float, t_f: int) -> int:
    k = round(t / dt)
    if abs(k * dt - t) > 1e-9 or not 1 <= k <= t_f:
        raise MetricError(f"horizon {t} s is not a step of the {t_f} x {dt} s prediction window")
    return k - 1


def rmse_at(preds, gts, t: float, dt: float = 0.2) -> float:
    """sqrt(mean_n(dx^2 + dy^2)) at horizon ``t`` seconds."""
    p, g = _pair(preds, gts)
    k = horizon_index(t, dt, p.shape[1])
    d = p[:, k] - g[:, k]
    return float(np.sqrt(np.mean(d[:, 0] ** 2 + d[:, 1] ** 2)))


@dataclass
class MetricsReport:
    ade: float
    fde: float
    rmse_at: dict = field(default_factory=dict)  # horizon seconds -> m
    n_scenarios: int = 0
    variant: str = ""
    fingerprint: str = ""

    def to_json(self) -> str:
        d = asdict(self)
        d["rmse_at"] = {f"{k:g}": v for k, v in sorted(self.rmse_at.items())}
        return json.dumps(d, indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        d = json.loads(text)
        d["rmse_at"] = {float(k): v for k, v in d["rmse_at"].items()}
        return cls(**d)


def metrics_report(preds, gts, dt: float = 0.2, horizons=(1, 2, 3, 4, 5), variant="", fingerprint="") -> MetricsReport:
    p, g = _pair(preds, gts)
    t_f = p.shape[1]
    rm = {float(h): rmse_at(p, g, h, dt) for h in horizons if h <= t_f * dt + 1e-9}
    return MetricsReport(ade(p, g), fde(p, g), rm, int(p.shape[0]), variant, fingerprint)
