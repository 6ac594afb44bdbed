from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, no_grad


class GradCheckError(RuntimeError):
    """The checked function produced a non-finite or non-scalar value."""


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_coordinate: tuple  # (input index, flat index); (-1, -1) when there are no coordinates
    analytic: float = 0.0
    numeric: float = 0.0
    n_coordinates: int = 0

    def passed(self, tol: float) -> bool:
        return self.max_relative_error < tol


def _scalar(out) -> float:
    if not isinstance(out, Tensor) or out.size != 1:
        raise GradCheckError("checked function must return a scalar Tensor")
    val = float(out.data.reshape(-1)[0])
    if not np.isfinite(val):
        raise GradCheckError(f"checked function returned a non-finite value ({val})")
    return val


def grad_check(fn, inputs, epsilon: float = 1e-5) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn(*inputs)`` with central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    ``inputs`` are perturbed in place and restored.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    _scalar(out)
    out.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    worst = GradCheckReport(0.0, (-1, -1))
    count = 0
    with no_grad():
        for k, t in enumerate(inputs):
            flat = t.data.reshape(-1)
            ga = analytic[k].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + epsilon
                fp = _scalar(fn(*inputs))
                flat[j] = orig - epsilon
                fm = _scalar(fn(*inputs))
                flat[j] = orig
                num = (fp - fm) / (2.0 * epsilon)
                a = ga[j]
                err = abs(a - num) / max(abs(a), abs(num), 1e-8)
                count += 1
                if err > worst.max_relative_error or worst.worst_coordinate == (-1, -1):
                    worst = GradCheckReport(err, (k, j), float(a), float(num))
    for t in inputs:
        t.grad = None
    worst.n_coordinates = count
    return worst
