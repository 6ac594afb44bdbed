"""Gradient certification: every differentiable building block and the
assembled models against central finite differences."""
from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .. import cells
from ..graph import GATLayer, build_star_graph, gat_layer
from ..kinematics import rollout_states
from ..model import Batch, ModelConfig, TrajectoryModel, loss
from ..numcore import SeededRng, Tensor, grad_check, linear, no_grad
from ..numcore import tensor as T

LAYER_TOL = 1e-4
MODEL_TOL = 1e-3
LAYERS = ("linear", "leaky_relu", "lstm_step", "slstm_step", "mlstm_step", "gat_layer", "rollout")


@dataclass
class CheckResult:
    name: str
    seed: int
    max_relative_error: float
    n_coordinates: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.max_relative_error < self.tolerance)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-300) * margin + x, x)


def _case_linear(rng):
    x = Tensor(rng.normal(size=(3, 5)))
    W = Tensor(rng.normal(size=(4, 5)))
    b = Tensor(rng.normal(size=4))
    w = rng.child("readout")
    r = w.normal(size=(3, 4))
    return (lambda x, W, b: (linear(x, W, b) * r).sum()), [x, W, b]


def _case_leaky(rng):
    x = Tensor(_away_from_zero(rng, (4, 6)))
    r = rng.child("readout").normal(size=(4, 6))
    return (lambda x: (T.leaky_relu(x, 0.1) * r).sum()), [x]


def _cell_case(cell, state_fields, state, x, rng, step):
    """Differentiate h over two chained steps w.r.t. input, state and parameters.

    Only h is read out: the stored c/n (and C) live in a frame set by the
    stabilizer m, which is deliberately not differentiated. h is invariant to
    that frame, so its gradients are exact; chaining two steps routes them
    through the carried state as well.
    """
    params = cell.parameters()
    tensors = [x] + [getattr(state, f) for f in state_fields] + params
    x2 = rng.child("second-input").normal(size=x.shape)
    r = rng.child("readout")
    w1, w2 = r.normal(size=(x.shape[0], cell.hidden_size)), r.normal(size=(x.shape[0], cell.hidden_size))

    def fn(*ins):
        st = state.__class__(**{**state.__dict__, **dict(zip(state_fields, ins[1:1 + len(state_fields)]))})
        st, h1 = step(st, ins[0], cell)
        _, h2 = step(st, Tensor(x2), cell)
        return (h1 * w1).sum() + (h2 * w2).sum()

    return fn, tensors


def _case_lstm(rng):
    B, din, d = 3, 5, 4
    cell = cells.LSTMCell(din, d, rng.child("init"))
    cell.b.data += rng.normal(scale=0.3, size=cell.b.shape)
    st = cells.LstmState(Tensor(rng.normal(size=(B, d))), Tensor(np.tanh(rng.normal(size=(B, d)))))
    x = Tensor(rng.normal(size=(B, din)))
    return _cell_case(cell, ("c", "h"), st, x, rng, cells.lstm_step)


def _case_slstm(rng, seed):
    B, din, d = 3, 5, 4
    heads = 2 if seed % 2 else 1
    forget = "sigmoid" if seed % 4 >= 2 else "exp"
    cell = cells.SLSTMCell(din, d, rng.child("init"), num_heads=heads, forget=forget)
    cell.b.data += rng.normal(scale=0.3, size=cell.b.shape)
    # a live (non-zero) state: from the zero state the input-gate bias has an exactly zero gradient
    m = rng.normal(size=(B, d))
    st = cells.SLstmState(Tensor(rng.normal(size=(B, d))), Tensor(rng.uniform(0.5, 2.0, size=(B, d))),
                          Tensor(np.tanh(rng.normal(size=(B, d)))), m)
    x = Tensor(rng.normal(size=(B, din)))
    return _cell_case(cell, ("c", "n", "h"), st, x, rng, cells.slstm_step)


def _case_mlstm(rng, seed):
    B, din, d = 3, 5, 4
    forget = "exp" if seed % 2 else "sigmoid"
    cell = cells.MLSTMCell(din, d, rng.child("init"), forget=forget)
    for p in cell.parameters():
        p.data += rng.normal(scale=0.2, size=p.shape)
    st = cells.MLstmState(Tensor(rng.normal(size=(B, d, d))), Tensor(rng.normal(size=(B, d))),
                          rng.normal(size=(B, 1)), Tensor(np.tanh(rng.normal(size=(B, d)))))
    x = Tensor(rng.normal(size=(B, din)))
    return _cell_case(cell, ("C", "n", "h"), st, x, rng, cells.mlstm_step)


def _gat_margin(layer, graph, x) -> float:
    """Distance of every LeakyReLU input (scores and outputs) from its kink."""
    with no_grad():
        B, V, _ = x.shape
        H, dh = layer.heads, layer.head_dim
        wh = (x.data @ layer.W.data.T).reshape(B, V, H, dh).transpose(0, 2, 1, 3)
        scores = wh @ layer.a_dst.data + (wh @ layer.a_src.data).transpose(0, 1, 3, 2)
        adj = graph.adjacency()
        out = gat_layer(x, graph, layer).data
        pre = np.where(out < 0, out / layer.activation_slope, out) if layer.activation_slope else out
        return float(min(np.abs(scores[..., adj]).min(), np.abs(pre).min()))


def _case_gat(rng, seed):
    heads = 2
    graph = build_star_graph(4)
    for attempt in range(100):
        r = rng.child(f"draw-{attempt}")
        layer = GATLayer(6, 4, heads, r.child("init"), concat=bool(seed % 2 == 0))
        layer.bias.data += r.normal(scale=0.3, size=layer.bias.shape)
        x = Tensor(r.normal(size=(2, 5, 6)))
        if _gat_margin(layer, graph, x) >= 1e-3:
            break
    w = rng.child("readout").normal(size=(2, 5, 4)) / 40.0

    def fn(x, *params):
        return (gat_layer(x, graph, layer) * w).sum()

    # some attention coordinates have exactly zero gradient (the score of the
    # destination cancels in the softmax); a wider step keeps their round-off
    # quotient below the floor
    return fn, [x] + layer.parameters(), 1e-4


def _case_rollout(rng):
    B, steps = 3, 6
    init = np.column_stack([rng.normal(size=B), rng.normal(size=B), rng.uniform(5, 30, size=B),
                            rng.uniform(-np.pi, np.pi, size=B)])
    controls = np.stack([rng.uniform(-3, 3, size=(B, steps)), rng.uniform(-0.3, 0.3, size=(B, steps))], axis=-1)
    r = rng.child("readout").normal(size=(B, steps, 4))
    return (lambda s0, u: (rollout_states(s0, u, 0.2) * r).sum()), [Tensor(init), Tensor(controls)]


def layer_case(name: str, seed: int):
    """(fn, inputs, epsilon) for one certification point."""
    rng = SeededRng(seed).child(name)
    case = _layer_case(name, seed, rng)
    return case if len(case) == 3 else (*case, 1e-5)


def _layer_case(name, seed, rng):
    if name == "linear":
        return _case_linear(rng)
    if name == "leaky_relu":
        return _case_leaky(rng)
    if name == "lstm_step":
        return _case_lstm(rng)
    if name == "slstm_step":
        return _case_slstm(rng, seed)
    if name == "mlstm_step":
        return _case_mlstm(rng, seed)
    if name == "gat_layer":
        return _case_gat(rng, seed)
    if name == "rollout":
        return _case_rollout(rng)
    raise ValueError(f"unknown layer {name!r}; expected one of {LAYERS}")


def check_layer(name: str, seed: int, tol: float = LAYER_TOL) -> CheckResult:
    fn, inputs, eps = layer_case(name, seed)
    rep = grad_check(fn, inputs, epsilon=eps)
    return CheckResult(name, seed, rep.max_relative_error, rep.n_coordinates, tol)


def tiny_config(variant: str, **kw) -> ModelConfig:
    base = dict(variant=variant, embed_dim=8, encoder_hidden=8, decoder_hidden=8, gat_heads=2, gat_dim=8,
                interaction_dim=8, t_obs=4, t_f=3, num_neighbors=2)
    base.update(kw)
    return ModelConfig(**base)


@contextmanager
def _kink_distances():
    """Collect min |input| of every LeakyReLU evaluated inside the block."""
    seen = []
    original = T.leaky_relu

    def spy(a, slope):
        seen.append(float(np.abs(a.data).min()))
        return original(a, slope)

    T.leaky_relu = spy
    try:
        yield seen
    finally:
        T.leaky_relu = original


KINK_MARGIN = 1e-3


def tiny_model_case(variant: str, seed: int = 0, batch_size: int = 2, **kw):
    """Loss of a tiny model at a generic interior point.

    Inputs, initial states and targets are random and parameters are moved off
    their initial values (zero biases put GAT outputs exactly on a LeakyReLU
    kink when a node's features vanish). Points with any LeakyReLU input
    closer than ``KINK_MARGIN`` to zero are redrawn. The loss is divided by
    its value at the point, so the 1e-8 floor of the relative error sits at a
    fixed fraction of the loss scale.
    """
    cfg = tiny_config(variant, seed=seed, **kw)
    B, V = batch_size, cfg.num_neighbors + 1
    for attempt in range(1000):
        model = TrajectoryModel(cfg)
        r = SeededRng(seed).child(f"tiny-model-{attempt}")
        feats = r.normal(size=(B, V, cfg.t_obs, cfg.input_features)) * np.asarray(cfg.feature_scale)
        feats = feats + np.asarray(cfg.feature_offset)
        init = np.column_stack([r.normal(size=B), r.normal(size=B), r.uniform(5, 15, size=B),
                                r.uniform(-0.3, 0.3, size=B)])
        gt = init[:, None, :2] + 3.0 * r.normal(size=(B, cfg.t_f, 2))
        batch = Batch([f"tiny-{k}" for k in range(B)], feats, init, gt, np.zeros((B, cfg.t_f, 2)))
        for p in model.parameters():
            p.data += r.normal(scale=0.1, size=p.shape)
        with no_grad(), _kink_distances() as seen:
            scale = float(loss(model(batch), batch).data)
        if min(seen) >= KINK_MARGIN:
            break
    else:
        raise RuntimeError("no kink-free point found")

    def fn(*_params):
        return loss(model(batch), batch) * (1.0 / scale)

    return fn, model.parameters()


# Two-point differences of an O(1) loss leave about 1e-16 / (2 eps) of
# round-off in every numeric derivative; structurally zero coordinates (e.g.
# the sLSTM input-gate bias seen from a zero state) need eps = 1e-4 for that
# to stay well under 1e-3 of the floor.
MODEL_EPS = 1e-4


def check_model(variant: str, seed: int = 0, tol: float = MODEL_TOL) -> CheckResult:
    fn, params = tiny_model_case(variant, seed)
    rep = grad_check(fn, params, epsilon=MODEL_EPS)
    return CheckResult(f"model:{variant}", seed, rep.max_relative_error, rep.n_coordinates, tol)


@dataclass
class SuiteReport:
    results: list
    seconds: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def summary(self) -> dict:
        out = {}
        for r in self.results:
            cur = out.setdefault(r.name, {"max_relative_error": 0.0, "seeds": 0, "tolerance": r.tolerance, "passed": True})
            cur["max_relative_error"] = max(cur["max_relative_error"], float(r.max_relative_error))
            cur["seeds"] += 1
            cur["passed"] = cur["passed"] and r.passed
        return out


def run_suite(seeds: int = 20, layers=LAYERS, variants=("xtraj", "xtrack"), model_seeds: int = 3, log=None) -> SuiteReport:
    t0 = time.perf_counter()
    results = []
    for name in layers:
        for s in range(seeds):
            results.append(check_layer(name, s))
        if log:
            worst = max(r.max_relative_error for r in results if r.name == name)
            log(f"{name:12s} seeds={seeds} max_rel_err={worst:.2e} tol={LAYER_TOL:.0e}")
    for v in variants:
        for s in range(model_seeds):
            results.append(check_model(v, s))
        if log:
            worst = max(r.max_relative_error for r in results if r.name == f"model:{v}")
            log(f"model:{v:6s} seeds={model_seeds} max_rel_err={worst:.2e} tol={MODEL_TOL:.0e}")
    return SuiteReport(results, time.perf_counter() - t0)
