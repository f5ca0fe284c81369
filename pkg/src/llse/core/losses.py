"""Training objectives on (..., T) waveforms."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError
from .tensor import GradTensor, as_tensor, record

EPS = 1e-8
_DB = 10.0 / np.log(10.0)


def _check_pair(pred: GradTensor, target: GradTensor) -> None:
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ in shape")
    if pred.ndim < 1 or pred.shape[-1] == 0:
        raise DimensionError(f"expected non-empty (..., T) waveforms, got {pred.shape}")


def l1_loss(pred, target) -> GradTensor:
    """Mean absolute error. The subgradient at exact ties is 0."""
    pred, target = as_tensor(pred), as_tensor(target)
    _check_pair(pred, target)
    diff = pred.values - target.values
    n = diff.size

    def grad_fn(g):
        s = g * np.sign(diff) / n
        return s, -s

    return record(np.asarray(np.abs(diff).mean()), (pred, target), grad_fn)


def si_snr_loss(pred, target) -> GradTensor:
    """Negative scale-invariant SNR in dB, averaged over leading axes.

    The target is projected onto ``pred``'s direction as ``s = <p,t>/|t|^2 * t``
    and the loss is ``-10 log10(|s|^2 / |p - s|^2)``. The ratio is clamped to
    ``[EPS**2, 1/EPS**2]`` so a perfect (or hopeless) estimate stays finite;
    inside a clamp the gradient is zero. The target is treated as a constant.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    _check_pair(pred, target)
    p, t = pred.values, target.values
    t_energy = np.sum(t * t, axis=-1, keepdims=True)
    tt = np.maximum(t_energy, EPS)
    alpha = np.sum(p * t, axis=-1, keepdims=True) / tt
    s = alpha * t
    e = p - s
    num = (alpha * alpha * t_energy)[..., 0]
    den = np.sum(e * e, axis=-1)

    upper = (den <= EPS**2 * num) & (num > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(upper, 1.0 / EPS**2, num / np.where(den > 0, den, 1.0))
    lower = ~upper & (ratio < EPS**2)
    ratio = np.where(lower, EPS**2, ratio)
    per_item = -_DB * np.log(ratio)
    free = ~(upper | lower)
    count = per_item.size

    def grad_fn(g):
        safe_num = np.where(free, num, 1.0)[..., None]
        safe_den = np.where(free, den, 1.0)[..., None]
        d_num = 2.0 * alpha * t_energy * t / tt
        d_den = 2.0 * (e - t * np.sum(t * e, axis=-1, keepdims=True) / tt)
        gp = -_DB * (d_num / safe_num - d_den / safe_den)
        gp = np.where(free[..., None], gp, 0.0) * (g / count)
        return gp, None

    return record(np.asarray(per_item.mean()), (pred, target), grad_fn)
