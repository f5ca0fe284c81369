"""Differentiable ops over :class:`GradTensor`.

Shapes use a ``(..., C, T)`` layout with optional leading batch axes. There
is no general broadcasting: each op checks that its operands line up.
"""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from . import kernels as K
from .tensor import GradTensor, as_tensor, record


def _same_dtype(*tensors: GradTensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise DimensionError(f"mixed dtypes {sorted(map(str, dtypes))}")


def causal_conv1d(x, w, b) -> GradTensor:
    """Causal 1-D convolution: left-pads ``k - 1`` zeros so ``y[t]`` depends on ``x[:t+1]``.

    x: (..., Cin, T), w: (Cout, Cin, k), b: (Cout,) -> (..., Cout, T)
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    _same_dtype(x, w, b)
    K._check_conv(x.values, w.values, b.values)
    k = w.shape[-1]
    xp = K.causal_pad(x.values, k)
    y, cols = K.conv_forward(xp, w.values, b.values, 1)

    def grad_fn(g):
        gxp, gw, gb = K.conv_backward(g, cols, w.values, 1, xp.shape[-1])
        return gxp[..., k - 1 :], gw, gb

    return record(y, (x, w, b), grad_fn)


def down_conv2(x, w, b) -> GradTensor:
    """Kernel-2, stride-2 convolution halving the time axis."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    _same_dtype(x, w, b)
    K._check_conv(x.values, w.values, b.values)
    if w.shape[-1] != 2:
        raise DimensionError(f"down_conv2 needs kernel size 2, got {w.shape[-1]}")
    if x.shape[-1] % 2:
        raise DimensionError(f"down_conv2 needs an even length, got {x.shape[-1]}")
    y, cols = K.conv_forward(x.values, w.values, b.values, 2)

    def grad_fn(g):
        return K.conv_backward(g, cols, w.values, 2, x.shape[-1])

    return record(y, (x, w, b), grad_fn)


def conv1x1(x, w, b) -> GradTensor:
    """Pointwise channel projection. w: (Cout, Cin)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    _same_dtype(x, w, b)
    if b.shape != (w.shape[0],):
        raise DimensionError(f"bias shape {b.shape} does not match weight {w.shape}")
    y = K.conv1x1(x.values, w.values, b.values)

    def grad_fn(g):
        gx = np.matmul(w.values.T, g)
        gw = K._weight_grad(g, x.values)
        gb = g.sum(axis=tuple(range(g.ndim - 2)) + (g.ndim - 1,))
        return gx, gw, gb

    return record(y, (x, w, b), grad_fn)


def upsample2_nn(x) -> GradTensor:
    """Nearest-neighbour upsampling: out[2t] = out[2t+1] = x[t]."""
    x = as_tensor(x)
    return record(K.upsample2(x.values), (x,), lambda g: (K.upsample2_grad(g),))


def leaky_relu(x, slope: float = K.LEAKY_SLOPE) -> GradTensor:
    x = as_tensor(x)
    positive = x.values > 0
    return record(
        np.where(positive, x.values, slope * x.values),
        (x,),
        lambda g: (np.where(positive, g, slope * g),),
    )


def add(a, b) -> GradTensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shape mismatch {a.shape} vs {b.shape}")
    _same_dtype(a, b)
    return record(a.values + b.values, (a, b), lambda g: (g, g))


def concat_channels(a, b) -> GradTensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"concat_channels: incompatible shapes {a.shape} and {b.shape}")
    _same_dtype(a, b)
    ca = a.shape[-2]
    return record(
        np.concatenate([a.values, b.values], axis=-2),
        (a, b),
        lambda g: (g[..., :ca, :], g[..., ca:, :]),
    )


def slice_channels(x, start: int, stop: int) -> GradTensor:
    """Channels ``start:stop`` of a (..., C, T) tensor."""
    x = as_tensor(x)
    if not 0 <= start < stop <= x.shape[-2]:
        raise DimensionError(f"channel slice {start}:{stop} out of range for {x.shape}")

    def grad_fn(g):
        full = np.zeros_like(x.values)
        full[..., start:stop, :] = g
        return (full,)

    return record(x.values[..., start:stop, :], (x,), grad_fn)


def slice_last(x, start: int, stop: int) -> GradTensor:
    """Entries ``start:stop`` along the last axis."""
    x = as_tensor(x)
    if not 0 <= start < stop <= x.shape[-1]:
        raise DimensionError(f"slice {start}:{stop} out of range for {x.shape}")

    def grad_fn(g):
        full = np.zeros_like(x.values)
        full[..., start:stop] = g
        return (full,)

    return record(x.values[..., start:stop], (x,), grad_fn)


def select_channel(x, index: int) -> GradTensor:
    """(..., C, T) -> (..., T)."""
    x = as_tensor(x)
    if not 0 <= index < x.shape[-2]:
        raise DimensionError(f"channel {index} out of range for {x.shape}")

    def grad_fn(g):
        full = np.zeros_like(x.values)
        full[..., index, :] = g
        return (full,)

    return record(x.values[..., index, :], (x,), grad_fn)


def sum_all(x) -> GradTensor:
    x = as_tensor(x)
    return record(np.asarray(x.values.sum()), (x,), lambda g: (np.full_like(x.values, g),))


def weighted_sum(x, weights: np.ndarray) -> GradTensor:
    """sum(x * weights) with constant weights; used to scalarise outputs in checks."""
    x = as_tensor(x)
    if weights.shape != x.shape:
        raise DimensionError(f"weights {weights.shape} vs tensor {x.shape}")
    return record(np.asarray(np.sum(x.values * weights)), (x,), lambda g: (g * weights,))


def lstm_step(x_t, h, c, w_ih, w_hh, b) -> tuple[GradTensor, GradTensor]:
    """Single LSTM cell step.

    x_t: (..., D), h/c: (..., H), w_ih: (4H, D), w_hh: (4H, H), b: (4H,).
    Gates are ordered input, forget, candidate, output.
    """
    x_t, h, c = as_tensor(x_t), as_tensor(h), as_tensor(c)
    w_ih, w_hh, b = as_tensor(w_ih), as_tensor(w_hh), as_tensor(b)
    _same_dtype(x_t, h, c, w_ih, w_hh, b)
    hidden = h.shape[-1]
    if (
        c.shape != h.shape
        or w_ih.shape != (4 * hidden, x_t.shape[-1])
        or w_hh.shape != (4 * hidden, hidden)
        or b.shape != (4 * hidden,)
        or x_t.shape[:-1] != h.shape[:-1]
    ):
        raise DimensionError(
            f"lstm_step: x {x_t.shape}, h {h.shape}, c {c.shape}, "
            f"w_ih {w_ih.shape}, w_hh {w_hh.shape}, b {b.shape}"
        )
    gates_x = x_t.values @ w_ih.values.T + b.values
    h_new, c_new, cache = K.lstm_cell(gates_x, h.values, c.values, w_hh.values)

    def grad_fn(g):
        dz, dc_prev = K.lstm_cell_backward(g[..., :hidden], g[..., hidden:], cache)
        batch_dz = dz.reshape(-1, 4 * hidden)
        return (
            dz @ w_ih.values,
            dz @ w_hh.values,
            dc_prev,
            batch_dz.T @ x_t.values.reshape(-1, x_t.shape[-1]),
            batch_dz.T @ h.values.reshape(-1, hidden),
            batch_dz.sum(axis=0),
        )

    packed = record(np.concatenate([h_new, c_new], axis=-1), (x_t, h, c, w_ih, w_hh, b), grad_fn)
    return slice_last(packed, 0, hidden), slice_last(packed, hidden, 2 * hidden)


def lstm_sequence(gates_x, h0, c0, w_hh) -> GradTensor:
    """Unrolled LSTM over precomputed input gates.

    gates_x: (..., 4H, T) -- typically ``conv1x1`` of the input sequence.
    Returns a packed (..., 2H, T) tensor whose first H channels are the hidden
    states and last H the cell states at every step.
    """
    gates_x, h0, c0, w_hh = as_tensor(gates_x), as_tensor(h0), as_tensor(c0), as_tensor(w_hh)
    _same_dtype(gates_x, h0, c0, w_hh)
    hidden = w_hh.shape[-1]
    hs, cs, cache = K.lstm_sequence(gates_x.values, h0.values, c0.values, w_hh.values)

    def grad_fn(g):
        return K.lstm_sequence_backward(g[..., :hidden, :], g[..., hidden:, :], cache, w_hh.values)

    return record(np.concatenate([hs, cs], axis=-2), (gates_x, h0, c0, w_hh), grad_fn)
