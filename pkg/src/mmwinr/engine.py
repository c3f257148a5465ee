"""Hand-written reverse-mode pieces for the fixed graphs in this package.

No tape: each layer type has a forward that returns a cache and a matching
backward. All arithmetic is float64. Dense forwards go through a plain
``einsum`` (no BLAS) so a row's output never depends on which other rows
share the batch; sampling relies on that for bitwise grid nesting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NonFiniteLossError(FloatingPointError):
    """A loss term evaluated to NaN/Inf."""

    def __init__(self, term: str, value: float, where: str = ""):
        self.term = term
        self.value = value
        super().__init__(f"non-finite {term} loss ({value}){' ' + where if where else ''}")


def check_finite(term: str, value: float, where: str = "") -> float:
    if not math.isfinite(value):
        raise NonFiniteLossError(term, value, where)
    return value


# --- parameter layout ------------------------------------------------------


@dataclass(frozen=True)
class Layout:
    """Ordered named segments of a flat parameter vector."""

    segments: tuple[tuple[str, tuple[int, ...]], ...]
    offsets: dict = field(init=False, compare=False, repr=False)

    def __post_init__(self):
        offs, pos = {}, 0
        for name, shape in self.segments:
            if name in offs:
                raise ValueError(f"duplicate segment {name!r}")
            n = int(np.prod(shape, dtype=np.int64))
            offs[name] = (pos, n, tuple(shape))
            pos += n
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "_size", pos)

    @classmethod
    def of(cls, *segments) -> "Layout":
        return cls(tuple((name, tuple(shape)) for name, shape in segments))

    @property
    def size(self) -> int:
        return self._size

    def names(self):
        return [name for name, _ in self.segments]

    def count(self, *names) -> int:
        return sum(self.offsets[n][1] for n in names)


class ParamVector:
    """Flat float64 values with a :class:`Layout`; ``pv["W1"]`` is a shaped view."""

    def __init__(self, layout: Layout, values=None):
        self.layout = layout
        if values is None:
            values = np.zeros(layout.size)
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (layout.size,):
            raise ValueError(f"expected {layout.size} values, got {values.shape}")
        self.values = values

    def __getitem__(self, name) -> np.ndarray:
        off, n, shape = self.layout.offsets[name]
        return self.values[off:off + n].reshape(shape)

    def __setitem__(self, name, value):
        self[name][...] = value

    def zeros_like(self) -> "ParamVector":
        return ParamVector(self.layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self.layout, self.values.copy())

    def __len__(self):
        return self.layout.size


# --- dense -----------------------------------------------------------------


def dense(h: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``h @ w.T + b`` with row-independent arithmetic."""
    return np.einsum("nj,oj->no", h, w) + b


def dense_backward(dz: np.ndarray, h: np.ndarray, w: np.ndarray):
    """Returns ``(dh, dw, db)`` for ``z = dense(h, w, b)``."""
    return dz @ w, dz.T @ h, dz.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


# --- conv2d (3x3, stride 2, zero pad 1) --------------------------------------


def _conv_patches(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]  # (B, C, Ho, Wo, k, k)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int = 2, pad: int = 1):
    """``x`` (B, C, H, W), ``w`` (Co, C, k, k) -> ``(y, cache)``."""
    k = w.shape[-1]
    patches = _conv_patches(x, k, stride, pad)
    y = np.einsum("bchwij,ocij->bohw", patches, w) + b[None, :, None, None]
    return y, (x.shape, patches, w, stride, pad)


def conv2d_backward(dy: np.ndarray, cache, need_input_grad: bool = True):
    """Returns ``(dx, dw, db)``; ``dx`` is None when not requested."""
    xshape, patches, w, stride, pad = cache
    dw = np.einsum("bohw,bchwij->ocij", dy, patches)
    db = dy.sum(axis=(0, 2, 3))
    if not need_input_grad:
        return None, dw, db
    k = w.shape[-1]
    dpatch = np.einsum("bohw,ocij->bchwij", dy, w)
    bsz, c, hh, ww = xshape
    ho, wo = dy.shape[2], dy.shape[3]
    dxp = np.zeros((bsz, c, hh + 2 * pad, ww + 2 * pad))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dpatch[..., i, j]
    return dxp[:, :, pad:pad + hh, pad:pad + ww], dw, db


def conv_out_size(n: int, k: int = 3, stride: int = 2, pad: int = 1) -> int:
    return (n + 2 * pad - k) // stride + 1


# --- single-head self-attention with residual ---------------------------------


def attention(h: np.ndarray, wq, wk, wv):
    """``u = h + softmax(q k^T / sqrt(d)) v`` over the rows (time steps) of ``h``."""
    q, k, v = h @ wq.T, h @ wk.T, h @ wv.T
    scores = q @ k.T / math.sqrt(q.shape[1])
    scores = scores - scores.max(axis=1, keepdims=True)
    a = np.exp(scores)
    a /= a.sum(axis=1, keepdims=True)
    return h + a @ v, (h, q, k, v, a, wq, wk, wv)


def attention_backward(du: np.ndarray, cache):
    h, q, k, v, a, wq, wk, wv = cache
    scale = 1.0 / math.sqrt(q.shape[1])
    da = du @ v.T
    dv = a.T @ du
    ds = a * (da - (da * a).sum(axis=1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.T @ q
    dh = du + dq @ wq + dk @ wk + dv @ wv
    return dh, dq.T @ h, dk.T @ h, dv.T @ h


# --- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, layout_or_size, lr: float = 1e-4, **kw) -> "AdamState":
        n = layout_or_size.size if isinstance(layout_or_size, Layout) else int(layout_or_size)
        return cls(np.zeros(n), np.zeros(n), 0, lr, **kw)


def adam_step(params: ParamVector, grads: ParamVector, state: AdamState) -> tuple[ParamVector, AdamState]:
    """Bias-corrected Adam; returns new params and state (inputs untouched)."""
    if grads.layout != params.layout or state.m.shape != params.values.shape:
        raise ValueError("adam_step: parameter/gradient/state layout mismatch")
    g = grads.values
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new = params.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return (
        ParamVector(params.layout, new),
        AdamState(m, v, step, state.lr, state.beta1, state.beta2, state.eps),
    )
