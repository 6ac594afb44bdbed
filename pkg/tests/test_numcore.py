import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from xtrack.numcore import (
    Adam,
    AdamState,
    GradCheckError,
    Linear,
    SeededRng,
    ShapeError,
    Tensor,
    UsageError,
    adam_step,
    clip_grad_norm,
    grad_check,
    is_grad_enabled,
    linear_forward,
    no_grad,
)
from xtrack.numcore import tensor as T

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def _t(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


# ---------------------------------------------------------------- linear / leaky

def test_linear_identity_and_zero_weight():
    out = linear_forward(Tensor([3.0, 4.0]), Tensor(np.eye(2)), Tensor(np.zeros(2)))
    assert out.data.tolist() == [3.0, 4.0]
    out = linear_forward(Tensor([7.0, -1.0]), Tensor(np.zeros((2, 2))), Tensor([1.0, 2.0]))
    assert out.data.tolist() == [1.0, 2.0]


def test_linear_matches_scalar_matvec():
    g = np.random.default_rng(7)
    W, b, x = g.normal(size=(4, 3)), g.normal(size=4), g.normal(size=3)
    out = linear_forward(Tensor(x), Tensor(W), Tensor(b)).data
    ref = [sum(W[i, j] * x[j] for j in range(3)) + b[i] for i in range(4)]
    np.testing.assert_allclose(out, ref, rtol=0, atol=1e-12)


def test_linear_shape_error_names_shapes():
    with pytest.raises(ShapeError, match=r"\(4, 3\).*\(2,\)|\(2,\).*\(4, 3\)"):
        linear_forward(Tensor(np.zeros(2)), Tensor(np.zeros((4, 3))), Tensor(np.zeros(4)))


def test_leaky_relu_values():
    out = T.leaky_relu(Tensor([2.0, -2.0, 0.0]), 0.1)
    np.testing.assert_allclose(out.data, [2.0, -0.2, 0.0])


def test_leaky_relu_gradient_at_negative_point():
    rep = grad_check(lambda x: T.leaky_relu(x, 0.1).sum(), [_t([-3.0])])
    assert rep.analytic == pytest.approx(0.1, abs=1e-12)
    assert abs(rep.numeric - 0.1) < 1e-8


# ---------------------------------------------------------------- grad_check

def test_grad_check_constant_function():
    rep = grad_check(lambda x: Tensor(3.0) + 0.0 * x.sum(), [_t(np.ones(3))])
    assert rep.max_relative_error == 0.0


def test_grad_check_linear_seed3():
    g = np.random.default_rng(3)
    rep = grad_check(lambda x, W, b: linear_forward(x, W, b).sum(),
                     [_t(g.normal(size=3)), _t(g.normal(size=(4, 3))), _t(g.normal(size=4))], epsilon=1e-5)
    assert rep.max_relative_error < 1e-8


def test_grad_check_rejects_non_finite():
    with pytest.raises(GradCheckError), np.errstate(invalid="ignore"):
        grad_check(lambda x: T.log(x).sum(), [_t([-1.0])])


def test_grad_check_restores_inputs():
    x = _t([0.3, -0.7])
    before = x.data.copy()
    grad_check(lambda a: T.tanh(a).sum(), [x])
    assert np.array_equal(x.data, before)


SMOOTH_UNARY = {
    "exp": T.exp,
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
    "logsigmoid": T.logsigmoid,
    "sin": T.sin,
    "cos": T.cos,
    "square": T.square,
    "smooth_clamp": lambda a: T.smooth_clamp(a, np.array([2.0, 0.5, 3.0])),
}


@pytest.mark.parametrize("name", sorted(SMOOTH_UNARY))
@pytest.mark.parametrize("seed", range(20))
def test_smooth_unary_ops_pass_grad_check(name, seed):
    g = np.random.default_rng(seed)
    w = g.normal(size=3)
    rep = grad_check(lambda x: (SMOOTH_UNARY[name](x) * w).sum(), [_t(g.normal(size=3))])
    assert rep.max_relative_error < 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_binary_and_structural_ops_pass_grad_check(seed):
    g = np.random.default_rng(seed)
    a, b = _t(g.normal(size=(2, 3))), _t(g.uniform(0.5, 2.0, size=(2, 3)))
    c = _t(g.normal(size=(3, 4)))

    def fn(a, b, c):
        y = (a * b - a / b + T.sqrt(b) + T.log(b)) @ c
        y = T.concat([y, T.stack([a[:, 0], b[:, 1]], axis=0)], axis=1)
        return (T.transpose(y) * 0.3).sum() + T.mean(T.square(T.reshape(y, (-1,))))

    rep = grad_check(fn, [a, b, c])
    assert rep.max_relative_error < 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_masked_softmax_gradient(seed):
    g = np.random.default_rng(seed)
    mask = np.array([[True, True, False, True], [True, False, False, False]])
    w = g.normal(size=(2, 4))
    rep = grad_check(lambda s: (T.masked_softmax(s, mask, axis=-1) * w).sum(), [_t(g.normal(size=(2, 4)))])
    assert rep.max_relative_error < 1e-6


def test_masked_softmax_rows_sum_to_one_and_respect_mask():
    mask = np.array([[True, False, True], [False, True, False]])
    out = T.masked_softmax(Tensor([[1.0, 50.0, 2.0], [3.0, -4.0, 9.0]]), mask).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0)
    assert np.all(out[~mask] == 0.0)


@given(arrays(np.float64, 5, elements=finite), arrays(np.float64, 5, elements=finite))
def test_backward_is_linear_in_the_seed(x, w):
    # d(sum(w * f))/dx == backward(f, seed=w)
    a = Tensor(x, requires_grad=True)
    (T.tanh(a) * w).sum().backward()
    g1 = a.grad.copy()
    b = Tensor(x, requires_grad=True)
    T.tanh(b).backward(w)
    np.testing.assert_allclose(g1, b.grad, rtol=1e-12, atol=1e-15)


@given(arrays(np.float64, (2, 3), elements=finite), arrays(np.float64, (2, 3), elements=finite))
def test_adjoint_of_sum_is_sum_of_adjoints(x, y):
    a = Tensor(x, requires_grad=True)
    (T.sin(a).sum() + T.square(a).sum()).backward()
    combined = a.grad.copy()
    a1 = Tensor(x, requires_grad=True)
    T.sin(a1).sum().backward()
    a2 = Tensor(x, requires_grad=True)
    T.square(a2).sum().backward()
    np.testing.assert_allclose(combined, a1.grad + a2.grad, rtol=1e-12, atol=1e-14)


def test_backward_populates_every_reachable_leaf():
    a, b, c = _t([1.0, 2.0]), _t([3.0, 4.0]), _t([5.0, 6.0])
    ((a * b) + T.exp(c * 0.1)).sum().backward()
    assert all(t.grad is not None and t.grad.shape == t.shape for t in (a, b, c))


def test_backward_needs_scalar_without_seed():
    with pytest.raises(ShapeError):
        (_t([1.0, 2.0]) * 2.0).backward()


def test_no_grad_is_thread_local():
    seen = {}

    def worker():
        seen["other"] = is_grad_enabled()

    with no_grad():
        th = threading.Thread(target=worker)
        th.start()
        th.join()
        assert not is_grad_enabled()
        out = _t([1.0]) * 2.0
    assert seen["other"] is True
    assert is_grad_enabled()
    assert not out.requires_grad


def test_broadcast_gradient_reduces_to_operand_shape():
    a = _t(np.ones((3, 4)))
    b = _t(np.ones(4))
    (a * b).sum().backward()
    assert b.grad.shape == (4,)
    np.testing.assert_array_equal(b.grad, 3.0)


# ---------------------------------------------------------------- Adam

def _reference_adam(w, steps, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    trace = []
    for t in range(1, steps + 1):
        g = 2.0 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        w = w - lr * mhat / (vhat**0.5 + eps)
        trace.append(w)
    return trace


def test_adam_matches_reference_trace_on_quadratic():
    w = _t([1.0])
    opt = Adam([w])
    trace = []
    for _ in range(10):
        T.square(w).sum().backward()
        opt.step()
        trace.append(float(w.data[0]))
    np.testing.assert_allclose(trace, _reference_adam(1.0, 10), rtol=0, atol=1e-10)


def test_adam_zero_gradient_is_a_fixed_point():
    w = _t([0.5, -2.0])
    opt = Adam([w])
    w.grad = np.zeros(2)
    opt.step()
    assert w.data.tolist() == [0.5, -2.0]
    assert opt.state.step_count == 1


def test_adam_first_step_has_learning_rate_magnitude():
    w = _t([1.0, 1.0])
    opt = Adam([w], lr=1e-3)
    w.grad = np.array([4.0, -0.02])
    opt.step()
    np.testing.assert_allclose(np.abs(w.data - 1.0), 1e-3, rtol=1e-5)
    assert w.grad is None


def test_adam_missing_grad_is_usage_error():
    with pytest.raises(UsageError):
        Adam([_t([1.0])]).step()


@given(st.lists(arrays(np.float64, 3, elements=finite), min_size=1, max_size=6))
def test_adam_state_invariants(grads):
    w = _t(np.zeros(3))
    state = AdamState(learning_rate=1e-2)
    for k, g in enumerate(grads, start=1):
        w.grad = g
        adam_step([w], state)
        assert state.step_count == k
        assert all(np.all(v >= 0) for v in state.second_moment)
        assert np.all(np.isfinite(w.data))


def test_clip_grad_norm_scales_to_bound():
    a, b = _t([0.0]), _t([0.0, 0.0])
    a.grad, b.grad = np.array([3.0]), np.array([0.0, 4.0])
    total = clip_grad_norm([a, b], 1.0)
    assert total == pytest.approx(5.0)
    assert np.sqrt(a.grad @ a.grad + b.grad @ b.grad) == pytest.approx(1.0, rel=1e-9)


# ---------------------------------------------------------------- RNG / determinism

def test_rng_same_seed_same_stream():
    a, b = SeededRng(42), SeededRng(42)
    assert np.array_equal(a.normal(size=10), b.normal(size=10))
    assert np.array_equal(a.child("x").uniform(size=4), b.child("x").uniform(size=4))
    assert not np.array_equal(SeededRng(42).child("x").uniform(size=4), SeededRng(42).child("y").uniform(size=4))


def test_rng_rejects_out_of_range_seed():
    with pytest.raises(ValueError):
        SeededRng(-1)
    with pytest.raises(ValueError):
        SeededRng(2**64)
    SeededRng(2**64 - 1)


def test_parameter_traces_are_bit_identical_across_runs():
    def run():
        rng = SeededRng(9)
        lin = Linear(3, 2, rng.child("init"))
        opt = Adam(lin.parameters(), lr=1e-2)
        x = Tensor(rng.child("data").normal(size=(5, 3)))
        for _ in range(5):
            T.square(lin(x)).mean().backward()
            opt.step()
        return [p.data.copy() for p in lin.parameters()]

    for p, q in zip(run(), run()):
        assert np.array_equal(p, q)
