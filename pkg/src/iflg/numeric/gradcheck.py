"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


class ProbeError(RuntimeError):
    """The checked function produced a non-finite value while perturbed."""


def _value(f, params) -> float:
    out = f(params)
    val = out.item() if isinstance(out, Tensor) else float(out)
    if not np.isfinite(val):
        raise ProbeError(f"non-finite loss {val} during finite-difference probe")
    return val


def numeric_gradients(f: Callable, params: Sequence[Tensor], eps: float = 1e-5) -> list[np.ndarray]:
    """Central differences of ``f(params)`` for every coordinate of every param."""
    grads = []
    for p in params:
        g = np.zeros(p.shape)
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = _value(f, params)
            flat[k] = orig - eps
            down = _value(f, params)
            flat[k] = orig
            g.reshape(-1)[k] = (up - down) / (2.0 * eps)
        grads.append(g)
    return grads


def grad_check(f: Callable, params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Maximum relative error between backprop and central differences.

    ``f`` maps the list of leaf tensors to a scalar tensor.  The relative error
    of a coordinate is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = f(params)
    if not np.isfinite(out.item()):
        raise ProbeError("non-finite loss at the unperturbed point")
    backward(out)
    analytic = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]
    numeric = numeric_gradients(f, params, eps)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))
        worst = max(worst, float(err.max(initial=0.0)))
    return worst
