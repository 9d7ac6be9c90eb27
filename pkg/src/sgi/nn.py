"""Two-layer perceptrons with hand-written forward/backward, plus Adam.

The networks are purely affine-ReLU-affine; output activations (sigmoid,
softplus, ...) belong to the callers that own their semantics.  Parameters
are float64 throughout; serialization rounds to little-endian float32.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-15


@dataclass
class Mlp:
    """in -> hidden (ReLU) -> out network.

    Weight matrices are stored row-major as (fan_out, fan_in).
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @property
    def in_dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w2.shape[0]

    @property
    def param_count(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass
class MlpGrads:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def params(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def mlp_init(in_dim: int, hidden_dim: int, out_dim: int, rng_seed: int) -> Mlp:
    """Weights uniform in +-1/sqrt(fan_in), biases zero; deterministic per seed."""
    if min(in_dim, hidden_dim, out_dim) < 1:
        raise ValueError("all dimensions must be positive")
    rng = np.random.default_rng(rng_seed)
    bound1 = 1.0 / np.sqrt(in_dim)
    bound2 = 1.0 / np.sqrt(hidden_dim)
    return Mlp(
        w1=rng.uniform(-bound1, bound1, size=(hidden_dim, in_dim)),
        b1=np.zeros(hidden_dim),
        w2=rng.uniform(-bound2, bound2, size=(out_dim, hidden_dim)),
        b2=np.zeros(out_dim),
    )


def mlp_forward(mlp: Mlp, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the network on a batch ``x`` of shape (..., in_dim).

    Returns (y, cache) where cache holds the hidden pre-activations needed
    by :func:`mlp_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != mlp.in_dim:
        raise ValueError(f"expected input dim {mlp.in_dim}, got {x.shape[-1]}")
    pre = x @ mlp.w1.T + mlp.b1
    y = np.maximum(pre, 0.0) @ mlp.w2.T + mlp.b2
    return y, pre


def mlp_backward(
    mlp: Mlp, x: np.ndarray, cache: np.ndarray, dy: np.ndarray
) -> tuple[np.ndarray, MlpGrads]:
    """Exact gradients of sum(y * dy) w.r.t. the input and every parameter.

    ``cache`` must come from the matching :func:`mlp_forward` call.  The
    ReLU subgradient at exactly zero pre-activation is zero.
    """
    x = np.asarray(x, dtype=np.float64)
    dy = np.asarray(dy, dtype=np.float64)
    if dy.shape[-1] != mlp.out_dim or dy.shape[:-1] != x.shape[:-1]:
        raise ValueError("dy shape does not match forward call")
    hidden = np.maximum(cache, 0.0)
    flat_x = x.reshape(-1, mlp.in_dim)
    flat_h = hidden.reshape(-1, mlp.hidden_dim)
    flat_dy = dy.reshape(-1, mlp.out_dim)

    d_w2 = flat_dy.T @ flat_h
    d_b2 = flat_dy.sum(axis=0)
    d_hidden = flat_dy @ mlp.w2
    d_pre = d_hidden * (cache.reshape(-1, mlp.hidden_dim) > 0.0)
    d_w1 = d_pre.T @ flat_x
    d_b1 = d_pre.sum(axis=0)
    dx = (d_pre @ mlp.w1).reshape(x.shape)
    return dx, MlpGrads(d_w1, d_b1, d_w2, d_b2)


@dataclass
class AdamState:
    """First/second moment estimates and step counter for one parameter array."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls(m=np.zeros_like(param, dtype=np.float64),
                   v=np.zeros_like(param, dtype=np.float64))


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> None:
    """One Adam update, in place.  ``lr=0`` advances the counter only."""
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape:
        raise ValueError(f"gradient shape {grad.shape} != param shape {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient; step rejected")
    state.t += 1
    if lr == 0.0:
        return
    state.m *= ADAM_BETA1
    state.m += (1.0 - ADAM_BETA1) * grad
    state.v *= ADAM_BETA2
    state.v += (1.0 - ADAM_BETA2) * grad * grad
    m_hat = state.m / (1.0 - ADAM_BETA1 ** state.t)
    v_hat = state.v / (1.0 - ADAM_BETA2 ** state.t)
    param -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


@dataclass
class MlpAdam:
    """Adam states for all four parameter arrays of one Mlp."""

    states: dict[str, AdamState] = field(default_factory=dict)

    @classmethod
    def like(cls, mlp: Mlp) -> "MlpAdam":
        return cls({name: AdamState.like(p) for name, p in mlp.params().items()})

    def step(self, mlp: Mlp, grads: MlpGrads, lr: float) -> None:
        params = mlp.params()
        for name, grad in grads.params().items():
            adam_step(params[name], grad, self.states[name], lr)


def serialize_mlp(mlp: Mlp) -> bytes:
    """Pack dims (u32 x3) then W1, b1, W2, b2 as little-endian float32."""
    out = bytearray(struct.pack("<III", mlp.in_dim, mlp.hidden_dim, mlp.out_dim))
    for arr in (mlp.w1, mlp.b1, mlp.w2, mlp.b2):
        out += arr.astype("<f4").tobytes()
    return bytes(out)


def deserialize_mlp(buf: bytes, offset: int = 0) -> tuple[Mlp, int]:
    """Inverse of :func:`serialize_mlp`; returns the Mlp and the next offset."""
    if len(buf) - offset < 12:
        raise ValueError("truncated MLP header")
    in_dim, hidden_dim, out_dim = struct.unpack_from("<III", buf, offset)
    offset += 12
    arrays = []
    for shape in ((hidden_dim, in_dim), (hidden_dim,), (out_dim, hidden_dim), (out_dim,)):
        n = int(np.prod(shape))
        end = offset + 4 * n
        if end > len(buf):
            raise ValueError("truncated MLP payload")
        arrays.append(
            np.frombuffer(buf, dtype="<f4", count=n, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset = end
    return Mlp(*arrays), offset


def round_trip_f32(mlp: Mlp) -> Mlp:
    """The Mlp as it will exist after serialization: float32-rounded weights."""
    mlp_rounded, _ = deserialize_mlp(serialize_mlp(mlp))
    return mlp_rounded
