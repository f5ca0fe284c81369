"""Central finite-difference oracle for the differentiable ops."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses, ops
from .tensor import GradTensor, backward, no_grad


def _outputs(out) -> tuple[GradTensor, ...]:
    return out if isinstance(out, tuple) else (out,)


def _scalarize(out, weights) -> float:
    return float(sum(np.sum(o.values * w) for o, w in zip(_outputs(out), weights)))


def analytic_grads(fn: Callable, arrays: list[np.ndarray], weights: list[np.ndarray]):
    tensors = [GradTensor(a.copy(), requires_grad=True) for a in arrays]
    terms = [ops.weighted_sum(o, w) for o, w in zip(_outputs(fn(*tensors)), weights)]
    total = terms[0]
    for term in terms[1:]:
        total = ops.add(total, term)
    backward(total)
    return [np.zeros_like(a) if t.grad is None else t.grad for a, t in zip(arrays, tensors)]


def numeric_grads(fn, arrays, weights, h=1e-6, wrt=None):
    wrt = range(len(arrays)) if wrt is None else wrt
    grads = [np.zeros_like(a) for a in arrays]
    with no_grad():
        for i in wrt:
            flat = grads[i].reshape(-1)
            probe = [a.copy() for a in arrays]
            pf = probe[i].reshape(-1)
            for j in range(pf.size):
                orig = pf[j]
                pf[j] = orig + h
                up = _scalarize(fn(*[GradTensor(a) for a in probe]), weights)
                pf[j] = orig - h
                down = _scalarize(fn(*[GradTensor(a) for a in probe]), weights)
                pf[j] = orig
                flat[j] = (up - down) / (2.0 * h)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0.0 else float(np.linalg.norm(a - b) / scale)


def check(fn, arrays, rng, h=1e-6, wrt=None) -> float:
    """Relative error between analytic and numeric gradients.

    The error is measured on the joint gradient vector over all inputs in
    ``wrt``; per-input ratios are meaningless for components that sit below
    the finite-difference noise floor (e.g. a long LSTM unroll's initial state).
    """
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    with no_grad():
        out = fn(*[GradTensor(a) for a in arrays])
    weights = [rng.standard_normal(o.shape) for o in _outputs(out)]
    wrt = list(range(len(arrays))) if wrt is None else list(wrt)
    ana = analytic_grads(fn, arrays, weights)
    num = numeric_grads(fn, arrays, weights, h, wrt)
    joint = lambda gs: np.concatenate([gs[i].reshape(-1) for i in wrt])
    return relative_error(joint(ana), joint(num))


def _away_from_zero(x, margin=1e-2):
    return x + np.where(x >= 0, margin, -margin)


def _lstm_unroll(steps):
    def fn(xs, h, c, w_ih, w_hh, b):
        for t in range(steps):
            h, c = ops.lstm_step(ops.select_channel(xs, t), h, c, w_ih, w_hh, b)
        return h, c

    return fn


def _cases():
    """name -> builder(rng) returning (fn, arrays, wrt)."""
    n = lambda rng, *s: rng.standard_normal(s)

    def conv(rng):
        cin, cout, k, t = rng.integers(1, 4), rng.integers(1, 4), rng.integers(1, 5), rng.integers(4, 13)
        return ops.causal_conv1d, [n(rng, cin, t), n(rng, cout, cin, k), n(rng, cout)], None

    def down(rng):
        cin, cout, t = rng.integers(1, 4), rng.integers(1, 4), 2 * rng.integers(1, 7)
        return ops.down_conv2, [n(rng, 2, cin, t), n(rng, cout, cin, 2), n(rng, cout)], None

    def up(rng):
        return ops.upsample2_nn, [n(rng, rng.integers(1, 4), rng.integers(1, 9))], None

    def pointwise(rng):
        cin, cout = rng.integers(1, 5), rng.integers(1, 5)
        return ops.conv1x1, [n(rng, cin, 7), n(rng, cout, cin), n(rng, cout)], None

    def lrelu(rng):
        return ops.leaky_relu, [_away_from_zero(n(rng, 3, 9))], None

    def add(rng):
        return ops.add, [n(rng, 2, 6), n(rng, 2, 6)], None

    def concat(rng):
        return ops.concat_channels, [n(rng, 2, 5), n(rng, 1, 5)], None

    def lstm_unroll(rng):
        d, hid = rng.integers(1, 4), rng.integers(1, 4)
        arrays = [n(rng, 8, d), 0.5 * n(rng, hid), 0.5 * n(rng, hid),
                  n(rng, 4 * hid, d), n(rng, 4 * hid, hid), n(rng, 4 * hid)]
        return _lstm_unroll(8), arrays, None

    def lstm_seq(rng):
        hid = rng.integers(1, 4)
        arrays = [n(rng, 2, 4 * hid, 6), 0.5 * n(rng, 2, hid), 0.5 * n(rng, 2, hid), n(rng, 4 * hid, hid)]
        return ops.lstm_sequence, arrays, None

    def l1(rng):
        p = n(rng, 10)
        return losses.l1_loss, [p, p + _away_from_zero(n(rng, 10))], None

    def sisnr(rng):
        t = n(rng, 12)
        return losses.si_snr_loss, [t + 0.5 * n(rng, 12), t], [0]

    return {
        "causal_conv1d": conv,
        "down_conv2": down,
        "upsample2_nn": up,
        "conv1x1": pointwise,
        "leaky_relu": lrelu,
        "add": add,
        "concat_channels": concat,
        "lstm_step_unroll8": lstm_unroll,
        "lstm_sequence": lstm_seq,
        "l1_loss": l1,
        "si_snr_loss": sisnr,
    }


CASES = _cases()


@dataclass
class CheckResult:
    name: str
    instances: int
    max_rel_error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def run_suite(instances: int = 50, seed: int = 0, tolerance: float = 1e-4, h: float = 1e-6,
              names=None) -> list[CheckResult]:
    results = []
    for name, builder in CASES.items():
        if names is not None and name not in names:
            continue
        rng = np.random.default_rng([seed, len(results)])
        start = time.perf_counter()
        worst = 0.0
        for _ in range(instances):
            fn, arrays, wrt = builder(rng)
            worst = max(worst, check(fn, arrays, rng, h=h, wrt=wrt))
        results.append(CheckResult(name, instances, worst, tolerance, time.perf_counter() - start))
    return results
