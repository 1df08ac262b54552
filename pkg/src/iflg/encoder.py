"""Two-layer GCN encoder, Glorot initialisation, optimizers and checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numeric as nm
from .numeric import SparseMatrix, Tensor

CHECKPOINT_MAGIC = b"IFLG"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint."""


@dataclass(eq=False)
class EncoderParams:
    """GCN weights; ``proj1``/``proj2`` form the optional projection head."""

    W1: Tensor
    W2: Tensor
    proj1: Tensor | None = None
    proj2: Tensor | None = None

    def tensors(self) -> list[Tensor]:
        return [t for t in (self.W1, self.W2, self.proj1, self.proj2) if t is not None]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    def copy(self) -> EncoderParams:
        return EncoderParams(*(None if t is None else Tensor(t.data, requires_grad=True)
                               for t in (self.W1, self.W2, self.proj1, self.proj2)))

    @classmethod
    def from_arrays(cls, *arrays) -> EncoderParams:
        return cls(*(None if a is None else Tensor(a, requires_grad=True) for a in arrays))


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = glorot_bound(fan_in, fan_out)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(in_dim: int, hidden_dim: int, out_dim: int, seed: int = 0,
                projection: bool = False) -> EncoderParams:
    if min(in_dim, hidden_dim, out_dim) <= 0:
        raise ValueError("encoder dimensions must be positive")
    rng = np.random.default_rng(seed)
    w1 = glorot(rng, in_dim, hidden_dim)
    w2 = glorot(rng, hidden_dim, out_dim)
    p1 = p2 = None
    if projection:
        p1 = glorot(rng, out_dim, out_dim)
        p2 = glorot(rng, out_dim, out_dim)
    return EncoderParams.from_arrays(w1, w2, p1, p2)


def encode(params: EncoderParams, a_hat: SparseMatrix, x) -> Tensor:
    """H = A_hat . relu(A_hat . X . W1) . W2"""
    x = nm.constant(x)
    if x.shape[1] != params.W1.shape[0]:
        raise nm.DimensionError(
            f"features have {x.shape[1]} columns but the encoder expects {params.W1.shape[0]}")
    if a_hat.shape[0] != x.shape[0]:
        raise nm.DimensionError(f"adjacency {a_hat.shape} vs {x.shape[0]} nodes")
    # X.W1 first: F is usually far larger than the hidden width
    h = nm.relu(nm.spmm(a_hat, nm.matmul(x, params.W1)))
    return nm.spmm(a_hat, nm.matmul(h, params.W2))


def project(params: EncoderParams, h: Tensor) -> Tensor:
    if params.proj1 is None:
        return h
    return nm.matmul(nm.relu(nm.matmul(h, params.proj1)), params.proj2)


# ----------------------------------------------------------------- optimizers

def _check_grads(params, grads):
    if len(params) != len(grads):
        raise ValueError("one gradient per parameter required")
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise nm.DimensionError(f"gradient {i} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise DivergenceError(f"gradient {i} (shape {g.shape}) has {bad} non-finite entries")


@dataclass
class AdamState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: list[Tensor], grads: list[np.ndarray]) -> list[Tensor]:
    """One bias-corrected Adam update; returns fresh leaf tensors."""
    _check_grads(params, grads)
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    out = []
    for k, (p, g) in enumerate(zip(params, grads)):
        state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        out.append(Tensor(p.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps), requires_grad=True))
    return out


@dataclass
class SGDState:
    lr: float = 5e-4
    step: int = 0


def sgd_step(state: SGDState, params: list[Tensor], grads: list[np.ndarray]) -> list[Tensor]:
    _check_grads(params, grads)
    state.step += 1
    return [Tensor(p.data - state.lr * g, requires_grad=True) for p, g in zip(params, grads)]


def make_optimizer(name: str, lr: float):
    if name == "adam":
        return AdamState(lr=lr)
    if name == "sgd":
        return SGDState(lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")


def optimizer_step(state, params: EncoderParams, grads: list[np.ndarray]) -> EncoderParams:
    step = adam_step if isinstance(state, AdamState) else sgd_step
    new = iter(step(state, params.tensors(), grads))
    return EncoderParams(*(None if t is None else next(new)
                           for t in (params.W1, params.W2, params.proj1, params.proj2)))


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(params: EncoderParams, path) -> None:
    """Little-endian header then W1 and W2 as row-major float64."""
    f, h, d = params.dims
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, f, h, d))
        fh.write(np.ascontiguousarray(params.W1.data, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.W2.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> EncoderParams:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, f, h, d = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 8 * (f * h + h * d)
    if len(raw) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    w1 = body[:f * h].reshape(f, h)
    w2 = body[f * h:].reshape(h, d)
    if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
        raise CheckpointError(f"{path}: non-finite weights")
    return EncoderParams.from_arrays(w1.astype(np.float64), w2.astype(np.float64))
