"""Plain numpy forward/backward kernels.

Arrays follow a ``(..., channels, time)`` layout; any leading axes are
treated as batch. These functions hold no graph state: the differentiable
wrappers in :mod:`llse.core.ops` and the streaming engine both call them.
"""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError

LEAKY_SLOPE = 0.1


def _check_conv(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> None:
    if x.ndim < 2:
        raise DimensionError(f"expected input (..., C, T), got shape {x.shape}")
    if w.ndim != 3:
        raise DimensionError(f"expected kernel (Cout, Cin, k), got shape {w.shape}")
    if x.shape[-2] != w.shape[1]:
        raise DimensionError(f"input has {x.shape[-2]} channels, kernel expects {w.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise DimensionError(f"bias shape {b.shape} does not match {w.shape[0]} output channels")


def _columns(xp: np.ndarray, k: int, stride: int, t_out: int) -> np.ndarray:
    # cols[..., c*k + j, t] = xp[..., c, t*stride + j]
    span = stride * (t_out - 1) + 1
    cols = np.stack([xp[..., j : j + span : stride] for j in range(k)], axis=-2)
    return cols.reshape(*xp.shape[:-2], xp.shape[-2] * k, t_out)


def _columns_grad(gcols: np.ndarray, cin: int, k: int, stride: int, t_in: int) -> np.ndarray:
    t_out = gcols.shape[-1]
    g = gcols.reshape(*gcols.shape[:-2], cin, k, t_out)
    gxp = np.zeros((*gcols.shape[:-2], cin, t_in), dtype=gcols.dtype)
    span = stride * (t_out - 1) + 1
    for j in range(k):
        gxp[..., j : j + span : stride] += g[..., j, :]
    return gxp


def _weight_grad(gy: np.ndarray, x: np.ndarray) -> np.ndarray:
    """sum over batch and time of gy[..., o, t] * x[..., i, t] -> (O, I)."""
    if gy.ndim == 2:
        return gy @ x.T
    gy = gy.reshape(-1, *gy.shape[-2:])
    x = x.reshape(-1, *x.shape[-2:])
    return np.matmul(gy, x.transpose(0, 2, 1)).sum(axis=0)


def conv_forward(xp: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int):
    """Valid strided convolution of an already padded input. Returns (y, cols)."""
    cout, cin, k = w.shape
    t_out = (xp.shape[-1] - k) // stride + 1
    if t_out < 1:
        raise DimensionError(f"input of length {xp.shape[-1]} shorter than kernel {k}")
    cols = _columns(xp, k, stride, t_out)
    y = np.matmul(w.reshape(cout, cin * k), cols)
    y += b[:, None]
    return y, cols


def conv_backward(gy: np.ndarray, cols: np.ndarray, w: np.ndarray, stride: int, t_in: int):
    """Gradients (gxp, gw, gb) of :func:`conv_forward`."""
    cout, cin, k = w.shape
    gw = _weight_grad(gy, cols).reshape(w.shape)
    gb = gy.sum(axis=tuple(range(gy.ndim - 2)) + (gy.ndim - 1,))
    gcols = np.matmul(w.reshape(cout, cin * k).T, gy)
    gxp = _columns_grad(gcols, cin, k, stride, t_in)
    return gxp, gw, gb


def causal_pad(x: np.ndarray, k: int, context: np.ndarray | None = None) -> np.ndarray:
    """Prepend ``k - 1`` samples of left context (zeros unless given)."""
    if k == 1:
        return x
    if context is None:
        context = np.zeros((*x.shape[:-1], k - 1), dtype=x.dtype)
    elif context.shape != (*x.shape[:-1], k - 1):
        raise DimensionError(f"context shape {context.shape} != {(*x.shape[:-1], k - 1)}")
    return np.concatenate([context, x], axis=-1)


def causal_conv1d(x, w, b, context=None):
    """Causal convolution; ``y[..., t]`` sees ``x[..., :t+1]`` (plus context)."""
    _check_conv(x, w, b)
    y, _ = conv_forward(causal_pad(x, w.shape[-1], context), w, b, 1)
    return y


def down_conv2(x, w, b):
    _check_conv(x, w, b)
    if w.shape[-1] != 2:
        raise DimensionError(f"down_conv2 needs kernel size 2, got {w.shape[-1]}")
    if x.shape[-1] % 2:
        raise DimensionError(f"down_conv2 needs an even length, got {x.shape[-1]}")
    y, _ = conv_forward(x, w, b, 2)
    return y


def conv1x1(x, w, b):
    if w.ndim != 2 or x.ndim < 2 or x.shape[-2] != w.shape[1]:
        raise DimensionError(f"conv1x1: input {x.shape} incompatible with weight {w.shape}")
    y = np.matmul(w, x)
    y += b[:, None]
    return y


def upsample2(x):
    return np.repeat(x, 2, axis=-1)


def upsample2_grad(g):
    return g.reshape(*g.shape[:-1], g.shape[-1] // 2, 2).sum(axis=-1)


def leaky_relu(x, slope=LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


def sigmoid(x):
    # tanh form cannot overflow
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_cell(gates_x, h, c, w_hh):
    """One LSTM step from precomputed input gates ``gates_x`` (..., 4H).

    Gate order is input, forget, candidate, output. Returns
    ``(h_new, c_new, cache)`` where ``cache`` feeds :func:`lstm_cell_backward`.
    """
    hidden = h.shape[-1]
    z = gates_x + h @ w_hh.T
    i = sigmoid(z[..., :hidden])
    f = sigmoid(z[..., hidden : 2 * hidden])
    g = np.tanh(z[..., 2 * hidden : 3 * hidden])
    o = sigmoid(z[..., 3 * hidden :])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (i, f, g, o, c, tc)


def lstm_cell_backward(dh, dc, cache):
    """Returns (dz, dc_prev) where dz is the gradient of the gate pre-activations."""
    i, f, g, o, c_prev, tc = cache
    dc = dc + dh * o * (1.0 - tc * tc)
    do = dh * tc
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dz = np.concatenate(
        [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)], axis=-1
    )
    return dz, dc * f


def lstm_sequence(gates_x, h0, c0, w_hh):
    """Run the recurrence over time.

    gates_x: (..., 4H, T); h0, c0: (..., H). Returns hs, cs of shape
    (..., H, T) and a cache for :func:`lstm_sequence_backward`.
    """
    hidden = w_hh.shape[1]
    if gates_x.shape[-2] != 4 * hidden or w_hh.shape[0] != 4 * hidden:
        raise DimensionError(f"gates {gates_x.shape} / w_hh {w_hh.shape} inconsistent with width {hidden}")
    if h0.shape != gates_x.shape[:-2] + (hidden,) or c0.shape != h0.shape:
        raise DimensionError(f"state shapes {h0.shape}, {c0.shape} do not match gates {gates_x.shape}")
    steps = gates_x.shape[-1]
    gx = np.moveaxis(gates_x, -1, 0)
    hs = np.empty((steps, *h0.shape), dtype=gates_x.dtype)
    cs = np.empty_like(hs)
    caches = []
    h, c = h0, c0
    for t in range(steps):
        h, c, cache = lstm_cell(gx[t], h, c, w_hh)
        hs[t] = h
        cs[t] = c
        caches.append(cache)
    return np.moveaxis(hs, 0, -1), np.moveaxis(cs, 0, -1), (caches, h0, hs)


def lstm_sequence_backward(ghs, gcs, cache, w_hh):
    """Backpropagation through time. Returns (g_gates_x, g_h0, g_c0, g_w_hh)."""
    caches, h0, hs = cache
    steps = len(caches)
    ghs = np.moveaxis(ghs, -1, 0)
    gcs = np.moveaxis(gcs, -1, 0)
    hidden = w_hh.shape[1]
    dz_all = np.empty((steps, *h0.shape[:-1], 4 * hidden), dtype=ghs.dtype)
    dh_next = np.zeros_like(h0)
    dc_next = np.zeros_like(h0)
    for t in range(steps - 1, -1, -1):
        dz, dc_next = lstm_cell_backward(ghs[t] + dh_next, gcs[t] + dc_next, caches[t])
        dz_all[t] = dz
        dh_next = dz @ w_hh
    h_prev = np.concatenate([h0[None], hs[:-1]], axis=0)
    g_whh = dz_all.reshape(-1, 4 * hidden).T @ h_prev.reshape(-1, hidden)
    return np.moveaxis(dz_all, 0, -1), dh_next, dc_next, g_whh
