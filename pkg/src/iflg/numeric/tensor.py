"""Dense float64 matrices with reverse-mode differentiation.

Every operation on a tensor that tracks gradients appends one node to the
computation record: the op kind, its inputs and whatever intermediates the
backward rule needs.  Node ids come from a process-wide counter, so insertion
order is a topological order and :func:`backward` simply walks the reachable
nodes in decreasing id.

Backward rules live in :data:`BACKWARD_RULES`, keyed by op kind.  Each rule
receives the output tensor and the upstream gradient and returns one gradient
(or ``None``) per parent.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .sparse import SparseMatrix

__all__ = [
    "Tensor", "DimensionError", "DegenerateRowError", "ContractError",
    "BACKWARD_RULES", "tensor", "constant", "add", "sub", "mul", "div", "neg",
    "exp", "log", "relu", "matmul", "spmm", "transpose", "sum", "row_sum",
    "mean", "diag", "take", "take_rows", "cosine_rows", "logsumexp_rows",
    "backward",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateRowError(ValueError):
    """A zero-norm row reached an unguarded cosine."""


class ContractError(ValueError):
    """An operation was called outside its contract."""


_node_ids = itertools.count()


class Tensor:
    """A 2-D float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "saved", "node_id")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise DimensionError(f"tensors are 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor values must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = None
        self.parents = ()
        self.saved = None
        self.node_id = next(_node_ids) if requires_grad else None

    @classmethod
    def _result(cls, data: np.ndarray, op: str, parents: Sequence[Tensor], saved=None) -> Tensor:
        # internal results skip the finiteness check; divergence is caught by callers
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        tracked = any(p.requires_grad for p in parents)
        t.requires_grad = tracked
        if tracked:
            t.op = op
            t.parents = tuple(parents)
            t.saved = saved
            t.node_id = next(_node_ids)
        else:
            t.op = None
            t.parents = ()
            t.saved = None
            t.node_id = None
        return t

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def item(self) -> float:
        if self.data.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor._result(self.data, "detach", ())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def constant(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _check_broadcast(a: Tensor, b: Tensor, name: str) -> tuple[int, int]:
    # (matrix, matrix), (matrix, row), (matrix, column), (matrix, scalar) only
    try:
        out = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: cannot combine {a.shape} and {b.shape}") from None
    if out != a.shape and out != b.shape:
        raise DimensionError(f"{name}: outer broadcasting {a.shape} x {b.shape} not supported")
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    return grad.sum(axis=axes, keepdims=True)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "add")
    return Tensor._result(a.data + b.data, "add", (a, b))


def _add_backward(out, g):
    a, b = out.parents
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "sub")
    return Tensor._result(a.data - b.data, "sub", (a, b))


def _sub_backward(out, g):
    a, b = out.parents
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "mul")
    return Tensor._result(a.data * b.data, "mul", (a, b))


def _mul_backward(out, g):
    a, b = out.parents
    ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
    gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
    return ga, gb


def div(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _check_broadcast(a, b, "div")
    return Tensor._result(a.data / b.data, "div", (a, b))


def _div_backward(out, g):
    a, b = out.parents
    ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
    gb = _unbroadcast(-g * out.data / b.data, b.shape) if b.requires_grad else None
    return ga, gb


def neg(a) -> Tensor:
    a = constant(a)
    return Tensor._result(-a.data, "neg", (a,))


def _neg_backward(out, g):
    return (-g,)


def exp(a) -> Tensor:
    a = constant(a)
    return Tensor._result(np.exp(a.data), "exp", (a,))


def _exp_backward(out, g):
    return (g * out.data,)


def log(a) -> Tensor:
    a = constant(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        return Tensor._result(np.log(a.data), "log", (a,))


def _log_backward(out, g):
    return (g / out.parents[0].data,)


def relu(a) -> Tensor:
    a = constant(a)
    return Tensor._result(np.maximum(a.data, 0.0), "relu", (a,))


def _relu_backward(out, g):
    # subgradient 0 at 0
    return (g * (out.parents[0].data > 0.0),)


# ------------------------------------------------------------------- products

def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    return Tensor._result(a.data @ b.data, "matmul", (a, b))


def _matmul_backward(out, g):
    a, b = out.parents
    ga = g @ b.data.T if a.requires_grad else None
    gb = a.data.T @ g if b.requires_grad else None
    return ga, gb


def spmm(a: SparseMatrix, b) -> Tensor:
    """Sparse (constant) times dense (possibly tracked)."""
    b = constant(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"spmm: {a.shape} @ {b.shape}")
    out = np.asarray(a.csr @ b.data)
    return Tensor._result(out, "spmm", (b,), saved=a)


def _spmm_backward(out, g):
    return (np.asarray(out.saved.csr_t @ g),)


def transpose(a) -> Tensor:
    a = constant(a)
    return Tensor._result(np.ascontiguousarray(a.data.T), "transpose", (a,))


def _transpose_backward(out, g):
    return (g.T,)


# ----------------------------------------------------------------- reductions

def sum(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = constant(a)
    return Tensor._result(np.array([[a.data.sum()]]), "sum", (a,))


def _sum_backward(out, g):
    return (np.full(out.parents[0].shape, g[0, 0]),)


def row_sum(a) -> Tensor:
    a = constant(a)
    return Tensor._result(a.data.sum(axis=1, keepdims=True), "row_sum", (a,))


def _row_sum_backward(out, g):
    return (np.broadcast_to(g, out.parents[0].shape).copy(),)


def mean(a) -> Tensor:
    a = constant(a)
    return Tensor._result(np.array([[a.data.mean()]]), "mean", (a,))


def _mean_backward(out, g):
    a = out.parents[0]
    return (np.full(a.shape, g[0, 0] / a.data.size),)


def logsumexp_rows(a) -> Tensor:
    a = constant(a)
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=1, keepdims=True)
    return Tensor._result(m + np.log(s), "logsumexp_rows", (a,), saved=e / s)


def _logsumexp_rows_backward(out, g):
    return (g * out.saved,)


# ------------------------------------------------------------------- indexing

def diag(a) -> Tensor:
    a = constant(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"diag needs a square tensor, got {a.shape}")
    return Tensor._result(np.diagonal(a.data).copy().reshape(-1, 1), "diag", (a,))


def _diag_backward(out, g):
    n = out.parents[0].shape[0]
    ga = np.zeros((n, n))
    ga[np.arange(n), np.arange(n)] = g[:, 0]
    return (ga,)


def take(a, rows, cols) -> Tensor:
    """Gather ``a[rows[k], cols[k]]`` into a k x 1 column."""
    a = constant(a)
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    cols = np.asarray(cols, dtype=np.int64).reshape(-1)
    if rows.shape != cols.shape:
        raise DimensionError("take: row and column index lists differ in length")
    out = a.data[rows, cols].reshape(-1, 1)
    return Tensor._result(out, "take", (a,), saved=(rows, cols))


def _take_backward(out, g):
    rows, cols = out.saved
    ga = np.zeros(out.parents[0].shape)
    np.add.at(ga, (rows, cols), g[:, 0])
    return (ga,)


def take_rows(a, idx) -> Tensor:
    a = constant(a)
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    return Tensor._result(a.data[idx], "take_rows", (a,), saved=idx)


def _take_rows_backward(out, g):
    ga = np.zeros(out.parents[0].shape)
    np.add.at(ga, out.saved, g)
    return (ga,)


# ------------------------------------------------------------------- cosine

def cosine_rows(u, v, eps: float = 0.0) -> Tensor:
    """Full matrix of cosines between the rows of ``u`` and the rows of ``v``.

    With ``eps > 0`` the row norms are offset by ``eps`` so zero rows give a
    zero cosine instead of an error.
    """
    u, v = constant(u), constant(v)
    if u.shape[1] != v.shape[1]:
        raise DimensionError(f"cosine_rows: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u.data, axis=1, keepdims=True)
    nv = np.linalg.norm(v.data, axis=1, keepdims=True)
    if eps <= 0.0 and (np.any(nu == 0.0) or np.any(nv == 0.0)):
        raise DegenerateRowError("zero-norm row in cosine_rows (enable the epsilon guard)")
    inv_u = 1.0 / (nu + eps)
    inv_v = 1.0 / (nv + eps)
    uh = u.data * inv_u
    vh = v.data * inv_v
    out = uh @ vh.T
    return Tensor._result(out, "cosine_rows", (u, v), saved=(uh, vh, nu, nv, inv_u, inv_v))


def _normalize_backward(x, gx_hat, norm, inv):
    # x_hat = x / (|x| + eps); unit direction of a zero row taken as 0
    with np.errstate(divide="ignore", invalid="ignore"):
        direction = np.where(norm > 0, x / norm, 0.0)
    radial = (gx_hat * x).sum(axis=1, keepdims=True)
    return inv * gx_hat - (inv ** 2) * radial * direction


def _cosine_rows_backward(out, g):
    u, v = out.parents
    uh, vh, nu, nv, inv_u, inv_v = out.saved
    gu = _normalize_backward(u.data, g @ vh, nu, inv_u) if u.requires_grad else None
    gv = _normalize_backward(v.data, g.T @ uh, nv, inv_v) if v.requires_grad else None
    return gu, gv


# ------------------------------------------------------------------- backward

BACKWARD_RULES: dict[str, Callable[[Tensor, np.ndarray], tuple]] = {
    "add": _add_backward,
    "sub": _sub_backward,
    "mul": _mul_backward,
    "div": _div_backward,
    "neg": _neg_backward,
    "exp": _exp_backward,
    "log": _log_backward,
    "relu": _relu_backward,
    "matmul": _matmul_backward,
    "spmm": _spmm_backward,
    "transpose": _transpose_backward,
    "sum": _sum_backward,
    "row_sum": _row_sum_backward,
    "mean": _mean_backward,
    "logsumexp_rows": _logsumexp_rows_backward,
    "diag": _diag_backward,
    "take": _take_backward,
    "take_rows": _take_rows_backward,
    "cosine_rows": _cosine_rows_backward,
}


def _reachable(root: Tensor) -> list[Tensor]:
    seen = set()
    nodes = []
    stack = [root]
    while stack:
        t = stack.pop()
        if t.node_id in seen:
            continue
        seen.add(t.node_id)
        nodes.append(t)
        stack.extend(p for p in t.parents if p.requires_grad)
    nodes.sort(key=lambda t: t.node_id, reverse=True)
    return nodes


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Propagate d(root)/d(.) to every tracked leaf reachable from ``root``.

    Leaf gradients are stored on ``leaf.grad`` (overwriting any previous value)
    and also returned as a ``{leaf: gradient}`` mapping.
    """
    if root.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) root, got {root.shape}")
    if not root.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {root.node_id: np.ones((1, 1))}
    leaves = {}
    for node in _reachable(root):
        g = grads.pop(node.node_id, None)
        if g is None:
            g = np.zeros(node.shape)
        if node.op is None:
            node.grad = g
            leaves[node] = g
            continue
        parent_grads = BACKWARD_RULES[node.op](node, g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg
    return leaves

