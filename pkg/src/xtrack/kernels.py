"""Hot numeric kernels: recurrent-cell pointwise math and the kinematic rollout.

Every kernel exists twice: a scalar-loop version compiled with numba
(``*_nb``) and a vectorised numpy version (``*_np``). The public names bind to
one or the other at import time depending on ``XTRACK_DISABLE_NUMBA``.

Layouts
-------
pre     : (B, 4, d) gate pre-activations, gate order z, i, f, o
rollout : init (B, 4) = (x, y, v, psi), controls (B, T, 2) = (a_x, psi_dot),
          states (B, T, 4) = state after each step
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

FORGET_SIGMOID = 0
FORGET_EXP = 1


# ---------------------------------------------------------------- helpers

@njit
def _sigmoid_s(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit
def _logsigmoid_s(x):
    # -log(1 + exp(-x))
    if x >= 0.0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def _sigmoid_v(x):
    return np.exp(-np.logaddexp(0.0, -x))


def _logsigmoid_v(x):
    return -np.logaddexp(0.0, -x)


# ---------------------------------------------------------------- LSTM

@njit
def lstm_forward_nb(pre, c_prev):
    B, _, d = pre.shape
    out = np.empty((B, 2, d))
    act = np.empty((B, 4, d))
    for b in range(B):
        for k in range(d):
            z = math.tanh(pre[b, 0, k])
            i = _sigmoid_s(pre[b, 1, k])
            f = _sigmoid_s(pre[b, 2, k])
            o = _sigmoid_s(pre[b, 3, k])
            c = f * c_prev[b, k] + i * z
            out[b, 0, k] = c
            out[b, 1, k] = o * math.tanh(c)
            act[b, 0, k] = z
            act[b, 1, k] = i
            act[b, 2, k] = f
            act[b, 3, k] = o
    return out, act


@njit
def lstm_backward_nb(g, act, out, c_prev):
    B, _, d = act.shape
    dpre = np.empty((B, 4, d))
    dc_prev = np.empty((B, d))
    for b in range(B):
        for k in range(d):
            z = act[b, 0, k]
            i = act[b, 1, k]
            f = act[b, 2, k]
            o = act[b, 3, k]
            tc = math.tanh(out[b, 0, k])
            gh = g[b, 1, k]
            dc = g[b, 0, k] + gh * o * (1.0 - tc * tc)
            dpre[b, 0, k] = dc * i * (1.0 - z * z)
            dpre[b, 1, k] = dc * z * i * (1.0 - i)
            dpre[b, 2, k] = dc * c_prev[b, k] * f * (1.0 - f)
            dpre[b, 3, k] = gh * tc * o * (1.0 - o)
            dc_prev[b, k] = dc * f
    return dpre, dc_prev


def lstm_forward_np(pre, c_prev):
    z = np.tanh(pre[:, 0])
    i = _sigmoid_v(pre[:, 1])
    f = _sigmoid_v(pre[:, 2])
    o = _sigmoid_v(pre[:, 3])
    c = f * c_prev + i * z
    out = np.stack([c, o * np.tanh(c)], axis=1)
    act = np.stack([z, i, f, o], axis=1)
    return out, act


def lstm_backward_np(g, act, out, c_prev):
    z, i, f, o = act[:, 0], act[:, 1], act[:, 2], act[:, 3]
    tc = np.tanh(out[:, 0])
    gh = g[:, 1]
    dc = g[:, 0] + gh * o * (1.0 - tc * tc)
    dpre = np.stack(
        [dc * i * (1.0 - z * z), dc * z * i * (1.0 - i), dc * c_prev * f * (1.0 - f), gh * tc * o * (1.0 - o)],
        axis=1,
    )
    return dpre, dc * f


# ---------------------------------------------------------------- sLSTM
# Stabilised exponential gating. c and n live in a frame scaled by exp(-m);
# h is invariant to m, so m carries no gradient.

@njit
def slstm_forward_nb(pre, c_prev, n_prev, m_prev, forget_mode):
    B, _, d = pre.shape
    out = np.empty((B, 3, d))
    m_new = np.empty((B, d))
    # z, i', f', o, dlogf/df~
    act = np.empty((B, 5, d))
    for b in range(B):
        for k in range(d):
            z = math.tanh(pre[b, 0, k])
            it = pre[b, 1, k]
            ft = pre[b, 2, k]
            o = _sigmoid_s(pre[b, 3, k])
            if forget_mode == FORGET_EXP:
                logf = ft
                dlogf = 1.0
            else:
                logf = _logsigmoid_s(ft)
                dlogf = _sigmoid_s(-ft)
            # an empty normalizer carries no weight, so the first step takes m = i'
            a = logf + m_prev[b, k] if n_prev[b, k] > 0.0 else -math.inf
            m = a if a > it else it
            ig = math.exp(it - m)
            fg = math.exp(a - m)
            c = fg * c_prev[b, k] + ig * z
            n = fg * n_prev[b, k] + ig
            out[b, 0, k] = c
            out[b, 1, k] = n
            out[b, 2, k] = o * c / n
            m_new[b, k] = m
            act[b, 0, k] = z
            act[b, 1, k] = ig
            act[b, 2, k] = fg
            act[b, 3, k] = o
            act[b, 4, k] = dlogf
    return out, m_new, act


@njit
def slstm_backward_nb(g, act, out, c_prev, n_prev):
    B, _, d = out.shape
    dpre = np.empty((B, 4, d))
    dc_prev = np.empty((B, d))
    dn_prev = np.empty((B, d))
    for b in range(B):
        for k in range(d):
            z = act[b, 0, k]
            ig = act[b, 1, k]
            fg = act[b, 2, k]
            o = act[b, 3, k]
            dlogf = act[b, 4, k]
            c = out[b, 0, k]
            n = out[b, 1, k]
            gh = g[b, 2, k]
            dc = g[b, 0, k] + gh * o / n
            dn = g[b, 1, k] - gh * o * c / (n * n)
            dfg = dc * c_prev[b, k] + dn * n_prev[b, k]
            dig = dc * z + dn
            dpre[b, 0, k] = dc * ig * (1.0 - z * z)
            dpre[b, 1, k] = dig * ig
            dpre[b, 2, k] = dfg * fg * dlogf
            dpre[b, 3, k] = gh * (c / n) * o * (1.0 - o)
            dc_prev[b, k] = dc * fg
            dn_prev[b, k] = dn * fg
    return dpre, dc_prev, dn_prev


def slstm_forward_np(pre, c_prev, n_prev, m_prev, forget_mode):
    z = np.tanh(pre[:, 0])
    it = pre[:, 1]
    ft = pre[:, 2]
    o = _sigmoid_v(pre[:, 3])
    if forget_mode == FORGET_EXP:
        logf = ft
        dlogf = np.ones_like(ft)
    else:
        logf = _logsigmoid_v(ft)
        dlogf = _sigmoid_v(-ft)
    a = np.where(n_prev > 0.0, logf + m_prev, -np.inf)
    m = np.maximum(a, it)
    ig = np.exp(it - m)
    fg = np.exp(a - m)
    c = fg * c_prev + ig * z
    n = fg * n_prev + ig
    out = np.stack([c, n, o * c / n], axis=1)
    act = np.stack([z, ig, fg, o, dlogf], axis=1)
    return out, m, act


def slstm_backward_np(g, act, out, c_prev, n_prev):
    z, ig, fg, o, dlogf = (act[:, j] for j in range(5))
    c, n = out[:, 0], out[:, 1]
    gh = g[:, 2]
    dc = g[:, 0] + gh * o / n
    dn = g[:, 1] - gh * o * c / (n * n)
    dfg = dc * c_prev + dn * n_prev
    dig = dc * z + dn
    dpre = np.stack(
        [dc * ig * (1.0 - z * z), dig * ig, dfg * fg * dlogf, gh * (c / n) * o * (1.0 - o)],
        axis=1,
    )
    return dpre, dc * fg, dn * fg


# ---------------------------------------------------------------- rollout

@njit
def rollout_forward_nb(init, controls, dt):
    B, T, _ = controls.shape
    states = np.empty((B, T, 4))
    h2 = 0.5 * dt * dt
    for b in range(B):
        x = init[b, 0]
        y = init[b, 1]
        v = init[b, 2]
        psi = init[b, 3]
        for t in range(T):
            a = controls[b, t, 0]
            w = controls[b, t, 1]
            c = math.cos(psi)
            s = math.sin(psi)
            x = x + v * c * dt + (a * c - w * v * s) * h2
            y = y + v * s * dt + (a * s + w * v * c) * h2
            v = v + a * dt
            psi = psi + w * dt
            states[b, t, 0] = x
            states[b, t, 1] = y
            states[b, t, 2] = v
            states[b, t, 3] = psi
    return states


@njit
def rollout_backward_nb(g, init, controls, states, dt):
    B, T, _ = controls.shape
    gu = np.empty((B, T, 2))
    ginit = np.empty((B, 4))
    h2 = 0.5 * dt * dt
    for b in range(B):
        lx = 0.0
        ly = 0.0
        lv = 0.0
        lp = 0.0
        for t in range(T - 1, -1, -1):
            lx += g[b, t, 0]
            ly += g[b, t, 1]
            lv += g[b, t, 2]
            lp += g[b, t, 3]
            if t == 0:
                v = init[b, 2]
                psi = init[b, 3]
            else:
                v = states[b, t - 1, 2]
                psi = states[b, t - 1, 3]
            a = controls[b, t, 0]
            w = controls[b, t, 1]
            c = math.cos(psi)
            s = math.sin(psi)
            gu[b, t, 0] = lx * c * h2 + ly * s * h2 + lv * dt
            gu[b, t, 1] = -lx * v * s * h2 + ly * v * c * h2 + lp * dt
            nlv = lx * (c * dt - w * s * h2) + ly * (s * dt + w * c * h2) + lv
            nlp = lx * (-v * s * dt - (a * s + w * v * c) * h2) + ly * (v * c * dt + (a * c - w * v * s) * h2) + lp
            lv = nlv
            lp = nlp
        ginit[b, 0] = lx
        ginit[b, 1] = ly
        ginit[b, 2] = lv
        ginit[b, 3] = lp
    return gu, ginit


def rollout_forward_np(init, controls, dt):
    B, T, _ = controls.shape
    states = np.empty((B, T, 4))
    h2 = 0.5 * dt * dt
    x, y, v, psi = (init[:, j].copy() for j in range(4))
    for t in range(T):
        a = controls[:, t, 0]
        w = controls[:, t, 1]
        c = np.cos(psi)
        s = np.sin(psi)
        x = x + v * c * dt + (a * c - w * v * s) * h2
        y = y + v * s * dt + (a * s + w * v * c) * h2
        v = v + a * dt
        psi = psi + w * dt
        states[:, t, 0] = x
        states[:, t, 1] = y
        states[:, t, 2] = v
        states[:, t, 3] = psi
    return states


def rollout_backward_np(g, init, controls, states, dt):
    B, T, _ = controls.shape
    gu = np.empty((B, T, 2))
    h2 = 0.5 * dt * dt
    lx = np.zeros(B)
    ly = np.zeros(B)
    lv = np.zeros(B)
    lp = np.zeros(B)
    for t in range(T - 1, -1, -1):
        lx = lx + g[:, t, 0]
        ly = ly + g[:, t, 1]
        lv = lv + g[:, t, 2]
        lp = lp + g[:, t, 3]
        prev = init if t == 0 else states[:, t - 1]
        v = prev[:, 2]
        psi = prev[:, 3]
        a = controls[:, t, 0]
        w = controls[:, t, 1]
        c = np.cos(psi)
        s = np.sin(psi)
        gu[:, t, 0] = lx * c * h2 + ly * s * h2 + lv * dt
        gu[:, t, 1] = -lx * v * s * h2 + ly * v * c * h2 + lp * dt
        nlv = lx * (c * dt - w * s * h2) + ly * (s * dt + w * c * h2) + lv
        nlp = lx * (-v * s * dt - (a * s + w * v * c) * h2) + ly * (v * c * dt + (a * c - w * v * s) * h2) + lp
        lv, lp = nlv, nlp
    return gu, np.stack([lx, ly, lv, lp], axis=1)


BACKENDS = {
    "numba": {
        "lstm_forward": lstm_forward_nb,
        "lstm_backward": lstm_backward_nb,
        "slstm_forward": slstm_forward_nb,
        "slstm_backward": slstm_backward_nb,
        "rollout_forward": rollout_forward_nb,
        "rollout_backward": rollout_backward_nb,
    },
    "numpy": {
        "lstm_forward": lstm_forward_np,
        "lstm_backward": lstm_backward_np,
        "slstm_forward": slstm_forward_np,
        "slstm_backward": slstm_backward_np,
        "rollout_forward": rollout_forward_np,
        "rollout_backward": rollout_backward_np,
    },
}

ACTIVE_BACKEND = "numba" if USE_NUMBA else "numpy"
_active = BACKENDS[ACTIVE_BACKEND]

lstm_forward = _active["lstm_forward"]
lstm_backward = _active["lstm_backward"]
slstm_forward = _active["slstm_forward"]
slstm_backward = _active["slstm_backward"]
rollout_forward = _active["rollout_forward"]
rollout_backward = _active["rollout_backward"]
