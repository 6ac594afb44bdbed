"""Compare the numba kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py            # kernel micro-benchmarks
    python3 benchmarks/bench_kernels.py --step     # plus one training step per backend

Shapes follow a default training batch: 32 scenarios x 9 vehicles, hidden 64,
25 prediction steps.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from xtrack import kernels

B, D, T = 32 * 9, 64, 25


def _inputs(rng):
    pre = rng.normal(size=(B, 4, D))
    c = rng.normal(size=(B, D))
    n = rng.uniform(0.5, 2.0, size=(B, D))
    m = rng.normal(size=(B, D))
    init = np.column_stack([np.zeros(32), np.zeros(32), rng.uniform(20, 35, 32), rng.uniform(-0.1, 0.1, 32)])
    u = np.stack([rng.uniform(-2, 2, (32, T)), rng.uniform(-0.2, 0.2, (32, T))], axis=-1)
    return pre, c, n, m, init, u


def _cases(impl, data):
    pre, c, n, m, init, u = data
    out, act = impl["lstm_forward"](pre, c)
    sout, sm, sact = impl["slstm_forward"](pre, c, n, m, kernels.FORGET_EXP)
    states = impl["rollout_forward"](init, u, 0.2)
    g2, g3, g4 = np.ones_like(out), np.ones_like(sout), np.ones_like(states)
    return {
        "lstm forward": lambda: impl["lstm_forward"](pre, c),
        "lstm backward": lambda: impl["lstm_backward"](g2, act, out, c),
        "slstm forward": lambda: impl["slstm_forward"](pre, c, n, m, kernels.FORGET_EXP),
        "slstm backward": lambda: impl["slstm_backward"](g3, sact, sout, c, n),
        "rollout forward": lambda: impl["rollout_forward"](init, u, 0.2),
        "rollout backward": lambda: impl["rollout_backward"](g4, init, u, states, 0.2),
    }


def bench(repeat=5, number=200):
    data = _inputs(np.random.default_rng(0))
    results = {}
    for name, impl in kernels.BACKENDS.items():
        cases = _cases(impl, data)
        for fn in cases.values():
            fn()  # compile / warm up
        for case, fn in cases.items():
            best = min(timeit.repeat(fn, repeat=repeat, number=number)) / number
            results.setdefault(case, {})[name] = best
    print(f"{'kernel':<18} {'numba us':>10} {'numpy us':>10} {'speedup':>8}")
    for case, r in results.items():
        print(f"{case:<18} {r['numba'] * 1e6:10.1f} {r['numpy'] * 1e6:10.1f} {r['numpy'] / r['numba']:8.2f}")
    return results


STEP_SCRIPT = """
import time
from xtrack.scenario import SynthSpec, synth_generate
from xtrack.model import ModelConfig, TrajectoryModel, make_batch, loss
cfg = ModelConfig(variant="xtrack")
model = TrajectoryModel(cfg)
batch = make_batch(synth_generate(SynthSpec(keep_lane=16, lane_change=16), seed=0), cfg)
loss(model(batch), batch).backward()
t = time.perf_counter()
for _ in range(3):
    model.zero_grad()
    loss(model(batch), batch).backward()
print((time.perf_counter() - t) / 3)
"""


def bench_step():
    times = {}
    for name, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, XTRACK_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", STEP_SCRIPT], env=env, capture_output=True, text=True, check=True)
        times[name] = float(out.stdout.strip().splitlines()[-1])
    print(f"training step (batch 32, default dims): numba {times['numba']:.3f}s  numpy {times['numpy']:.3f}s")
    return times


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--step", action="store_true")
    args = ap.parse_args()
    bench()
    if args.step:
        bench_step()
