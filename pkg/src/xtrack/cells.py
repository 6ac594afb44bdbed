"""Recurrent cells: LSTM, sLSTM (exponential gating, stabilised) and mLSTM.

All cells work on batches: inputs are (B, in), states are (B, d) arrays or
tensors. Gate order everywhere is z (cell input), i, f, o.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .numcore import Module, Tensor, ShapeError, uniform_init
from .numcore import tensor as T

CELL_TYPES = ("lstm", "slstm", "mlstm")


# ---------------------------------------------------------------- fused pointwise ops

def _lstm_pointwise(pre: Tensor, c_prev: Tensor):
    pre_d = np.ascontiguousarray(pre.data)
    cp = np.ascontiguousarray(c_prev.data)
    out, act = kernels.lstm_forward(pre_d, cp)

    def backward(g):
        dpre, dc = kernels.lstm_backward(np.ascontiguousarray(g), act, out, cp)
        return dpre, dc

    packed = T.make_op(out, (pre, c_prev), backward, "lstm_cell")
    return packed[:, 0], packed[:, 1]


def _slstm_pointwise(pre: Tensor, c_prev: Tensor, n_prev: Tensor, m_prev, forget_mode: int):
    pre_d = np.ascontiguousarray(pre.data)
    cp = np.ascontiguousarray(c_prev.data)
    np_ = np.ascontiguousarray(n_prev.data)
    out, m, act = kernels.slstm_forward(pre_d, cp, np_, np.ascontiguousarray(m_prev), forget_mode)

    def backward(g):
        return kernels.slstm_backward(np.ascontiguousarray(g), act, out, cp, np_)

    packed = T.make_op(out, (pre, c_prev, n_prev), backward, "slstm_cell")
    return packed[:, 0], packed[:, 1], packed[:, 2], m


# ---------------------------------------------------------------- states

@dataclass
class LstmState:
    c: Tensor
    h: Tensor


@dataclass
class SLstmState:
    c: Tensor  # cell, in the exp(-m) frame
    n: Tensor  # normalizer, same frame
    h: Tensor
    m: np.ndarray  # log-domain stabilizer, not differentiated


@dataclass
class MLstmState:
    C: Tensor  # (B, d, d) matrix memory, exp(-m) frame
    n: Tensor  # (B, d)
    m: np.ndarray  # (B, 1)
    h: Tensor


# ---------------------------------------------------------------- cells

class LSTMCell(Module):
    kind = "lstm"

    def __init__(self, input_size: int, hidden_size: int, rng, forget_bias: float = 1.0):
        super().__init__()
        d = hidden_size
        self.input_size, self.hidden_size = input_size, d
        self.W = self.add_param("W", uniform_init(rng, (4, d, input_size), input_size))
        self.R = self.add_param("R", uniform_init(rng, (4, d, d), d))
        b = np.zeros((4, d))
        b[2] = forget_bias
        self.b = self.add_param("b", b)

    def zero_state(self, batch: int) -> LstmState:
        return LstmState(Tensor(np.zeros((batch, self.hidden_size))), Tensor(np.zeros((batch, self.hidden_size))))

    def project_input(self, x: Tensor) -> Tensor:
        """(..., in) -> (..., 4, d) input contribution including bias."""
        d = self.hidden_size
        W2 = self.W.reshape(4 * d, self.input_size)
        b2 = self.b.reshape(4 * d)
        out = T.linear(x, W2, b2)
        return out.reshape(x.shape[:-1] + (4, d))

    def recurrent(self, h: Tensor) -> Tensor:
        d = self.hidden_size
        R2 = self.R.reshape(4 * d, d)
        return T.linear(h, R2).reshape((h.shape[0], 4, d))

    def step_projected(self, state: LstmState, xproj: Tensor):
        pre = xproj + self.recurrent(state.h)
        c, h = _lstm_pointwise(pre, state.c)
        return LstmState(c, h), h


class SLSTMCell(Module):
    """sLSTM with block-diagonal (per-head) recurrent weights.

    ``R`` is stored as (4, H, dh, dh): gate, head, out unit, in unit. Units
    are head-major (unit u = head * dh + k), so no parameter couples heads.
    """

    kind = "slstm"

    def __init__(self, input_size: int, hidden_size: int, rng, num_heads: int = 1, forget: str = "exp"):
        super().__init__()
        if hidden_size % num_heads:
            raise ShapeError(f"hidden size {hidden_size} is not divisible by num_heads={num_heads}")
        if forget not in ("exp", "sigmoid"):
            raise ValueError(f"forget activation must be 'exp' or 'sigmoid', got {forget!r}")
        d = hidden_size
        dh = d // num_heads
        self.input_size, self.hidden_size = input_size, d
        self.num_heads, self.head_dim = num_heads, dh
        self.forget = forget
        self.forget_mode = kernels.FORGET_EXP if forget == "exp" else kernels.FORGET_SIGMOID
        self.W = self.add_param("W", uniform_init(rng, (4, d, input_size), input_size))
        self.R = self.add_param("R", uniform_init(rng, (4, num_heads, dh, dh), dh))
        b = np.zeros((4, d))
        b[2] = 0.0 if forget == "exp" else 1.0
        self.b = self.add_param("b", b)

    def zero_state(self, batch: int) -> SLstmState:
        z = np.zeros((batch, self.hidden_size))
        return SLstmState(Tensor(z), Tensor(z.copy()), Tensor(z.copy()), z.copy())

    def project_input(self, x: Tensor) -> Tensor:
        d = self.hidden_size
        out = T.linear(x, self.W.reshape(4 * d, self.input_size), self.b.reshape(4 * d))
        return out.reshape(x.shape[:-1] + (4, d))

    def recurrent(self, h: Tensor) -> Tensor:
        B = h.shape[0]
        H, dh = self.num_heads, self.head_dim
        # (B, d) -> (H, dh, B); R (4, H, dh, dh) @ (H, dh, B) -> (4, H, dh, B)
        hb = h.reshape((B, H, dh)).transpose((1, 2, 0))
        rec = T.matmul(self.R, hb)
        return rec.transpose((3, 0, 1, 2)).reshape((B, 4, H * dh))

    def step_projected(self, state: SLstmState, xproj: Tensor):
        pre = xproj + self.recurrent(state.h)
        c, n, h, m = _slstm_pointwise(pre, state.c, state.n, state.m, self.forget_mode)
        return SLstmState(c, n, h, m), h


class MLSTMCell(Module):
    """Single-head mLSTM: matrix memory with covariance update, no recurrent weights."""

    kind = "mlstm"

    def __init__(self, input_size: int, hidden_size: int, rng, forget: str = "sigmoid"):
        super().__init__()
        if forget not in ("exp", "sigmoid"):
            raise ValueError(f"forget activation must be 'exp' or 'sigmoid', got {forget!r}")
        d = hidden_size
        self.input_size, self.hidden_size = input_size, d
        self.forget = forget
        self.Wq = self.add_param("Wq", uniform_init(rng, (d, input_size), input_size))
        self.Wk = self.add_param("Wk", uniform_init(rng, (d, input_size), input_size))
        self.Wv = self.add_param("Wv", uniform_init(rng, (d, input_size), input_size))
        self.Wo = self.add_param("Wo", uniform_init(rng, (d, input_size), input_size))
        self.w_if = self.add_param("w_if", uniform_init(rng, (2, input_size), input_size))
        self.bq = self.add_param("bq", np.zeros(d))
        self.bk = self.add_param("bk", np.zeros(d))
        self.bv = self.add_param("bv", np.zeros(d))
        self.bo = self.add_param("bo", np.zeros(d))
        self.b_if = self.add_param("b_if", np.array([0.0, 0.0 if forget == "exp" else 1.0]))

    def zero_state(self, batch: int) -> MLstmState:
        d = self.hidden_size
        return MLstmState(
            Tensor(np.zeros((batch, d, d))), Tensor(np.zeros((batch, d))), np.zeros((batch, 1)), Tensor(np.zeros((batch, d)))
        )

    def project_input(self, x: Tensor) -> dict:
        return {
            "q": T.linear(x, self.Wq, self.bq),
            "k": T.linear(x, self.Wk, self.bk) * (1.0 / np.sqrt(self.hidden_size)),
            "v": T.linear(x, self.Wv, self.bv),
            "o": T.linear(x, self.Wo, self.bo),
            "if": T.linear(x, self.w_if, self.b_if),
        }

    def step_projected(self, state: MLstmState, proj: dict):
        q, k, v = proj["q"], proj["k"], proj["v"]
        i_t = proj["if"][:, 0:1]
        f_t = proj["if"][:, 1:2]
        logf = f_t if self.forget == "exp" else T.logsigmoid(f_t)
        a = logf.data + state.m
        m = np.maximum(a, i_t.data)
        ig = T.exp(i_t - m)
        fg = T.exp(logf + (state.m - m))
        outer = T.matmul(v.reshape(v.shape + (1,)), k.reshape((k.shape[0], 1, k.shape[1])))
        C = fg.reshape((-1, 1, 1)) * state.C + ig.reshape((-1, 1, 1)) * outer
        n = fg * state.n + ig * k
        qn = (n * q).sum(axis=-1, keepdims=True)
        den = T.maximum_const(T.absolute(qn), np.exp(-m))
        Cq = T.matmul(C, q.reshape(q.shape + (1,))).reshape(q.shape)
        h = T.sigmoid(proj["o"]) * (Cq / den)
        return MLstmState(C, n, m, h), h


def make_cell(kind: str, input_size: int, hidden_size: int, rng, num_heads: int = 1, forget: str | None = None):
    if kind == "lstm":
        return LSTMCell(input_size, hidden_size, rng)
    if kind == "slstm":
        return SLSTMCell(input_size, hidden_size, rng, num_heads=num_heads, forget=forget or "exp")
    if kind == "mlstm":
        return MLSTMCell(input_size, hidden_size, rng, forget=forget or "sigmoid")
    raise ValueError(f"unknown cell type {kind!r}; expected one of {CELL_TYPES}")


# ---------------------------------------------------------------- functional API

def _check_input(cell, x: Tensor):
    if x.shape[-1] != cell.input_size:
        raise ShapeError(f"{cell.kind} cell expects input width {cell.input_size}, got shape {x.shape}")


def _slice_proj(proj, t):
    if isinstance(proj, dict):
        return {k: v[:, t] for k, v in proj.items()}
    return proj[:, t]


def lstm_step(state: LstmState, x: Tensor, cell: LSTMCell):
    _check_input(cell, x)
    return cell.step_projected(state, cell.project_input(x))


def slstm_step(state: SLstmState, x: Tensor, cell: SLSTMCell):
    _check_input(cell, x)
    return cell.step_projected(state, cell.project_input(x))


def mlstm_step(state: MLstmState, x: Tensor, cell: MLSTMCell):
    _check_input(cell, x)
    return cell.step_projected(state, cell.project_input(x))


def encode_sequence(inputs: Tensor, cell, state=None):
    """Unroll ``cell`` left to right over (B, T, in) inputs (or (T, in)).

    Returns (hidden states (B, T, d), final state). The start state is zero
    unless given.
    """
    squeeze = inputs.ndim == 2
    if squeeze:
        inputs = inputs.reshape((1,) + inputs.shape)
    if inputs.ndim != 3:
        raise ShapeError(f"encode_sequence expects (B, T, in) or (T, in) inputs, got {inputs.shape}")
    B, steps, _ = inputs.shape
    if steps < 1:
        raise ValueError("cannot encode an empty sequence")
    _check_input(cell, inputs)
    proj = cell.project_input(inputs)
    if state is None:
        state = cell.zero_state(B)
    hs = []
    for t in range(steps):
        state, h = cell.step_projected(state, _slice_proj(proj, t))
        hs.append(h)
    out = T.stack(hs, axis=1)
    if squeeze:
        out = out.reshape(out.shape[1:])
    return out, state


def decode_constant(x: Tensor, cell, steps: int):
    """Feed the same (B, in) input for ``steps`` steps; returns (B, steps, d)."""
    _check_input(cell, x)
    proj = cell.project_input(x)
    state = cell.zero_state(x.shape[0])
    hs = []
    for _ in range(steps):
        state, h = cell.step_projected(state, proj)
        hs.append(h)
    return T.stack(hs, axis=1)


def slstm_unstabilized(inputs, cell: SLSTMCell) -> np.ndarray:
    """Reference sLSTM without the stabilizer state, for (B, T, in) arrays.

    Gates are exponentiated directly, so c and n overflow once the summed
    log-gates pass ~709; the returned (B, T, d) hidden states then hold
    inf/nan. Plain numpy, no gradients.
    """
    x = np.asarray(inputs.data if isinstance(inputs, Tensor) else inputs, dtype=np.float64)
    B, steps, _ = x.shape
    d, H, dh = cell.hidden_size, cell.num_heads, cell.head_dim
    W = cell.W.data.reshape(4 * d, cell.input_size)
    b = cell.b.data.reshape(4 * d)
    R = cell.R.data
    c = np.zeros((B, d))
    n = np.zeros((B, d))
    h = np.zeros((B, d))
    hs = np.empty((B, steps, d))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for t in range(steps):
            rec = np.einsum("ghij,bhj->bghi", R, h.reshape(B, H, dh)).reshape(B, 4, d)
            pre = (x[:, t] @ W.T + b).reshape(B, 4, d) + rec
            z = np.tanh(pre[:, 0])
            ig = np.exp(pre[:, 1])
            fg = np.exp(pre[:, 2]) if cell.forget == "exp" else 1.0 / (1.0 + np.exp(-pre[:, 2]))
            o = 1.0 / (1.0 + np.exp(-pre[:, 3]))
            c = fg * c + ig * z
            n = fg * n + ig
            h = o * c / n
            hs[:, t] = h
    return hs
