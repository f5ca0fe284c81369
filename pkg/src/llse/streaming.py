"""Free-running chunked inference.

:func:`process_chunk` consumes exactly one chunk of ``L = 2**K`` noisy
samples and emits ``L`` enhanced samples, carrying only fixed-size state
between calls: the left context of every causal convolution, the LSTM
``(h, c)`` and the previous output chunk, which becomes the next chunk's
autoregressive channel. :func:`free_run_offline` computes the same thing the
slow way, rerunning the full model on growing prefixes, and serves as the
reference for the cached engine.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .core import kernels as K
from .core.tensor import no_grad
from .errors import ContractError, DimensionError
from .model import ModelConfig, ModelParams, algorithmic_latency, assemble_ar_input, forward


@dataclass(frozen=True)
class InferenceWeights:
    """Detached, cast copy of the parameters used by the streaming engine."""

    config: ModelConfig
    arrays: dict[str, np.ndarray]

    @property
    def dtype(self):
        return self.arrays["out.w"].dtype


def prepare(model, dtype=np.float32) -> InferenceWeights:
    if isinstance(model, InferenceWeights):
        if model.dtype == dtype:
            return model
        return InferenceWeights(model.config, {k: v.astype(dtype) for k, v in model.arrays.items()})
    return InferenceWeights(model.config, model.arrays(dtype))


@dataclass
class StreamState:
    conv_context: dict[str, np.ndarray]
    h: np.ndarray
    c: np.ndarray
    ring: np.ndarray
    chunk_index: int = 0
    config: ModelConfig = field(default=None, repr=False)

    @property
    def dtype(self):
        return self.ring.dtype


def init_state(config: ModelConfig, batch_shape: tuple[int, ...] = (), dtype=np.float32) -> StreamState:
    """Zero state for ``batch_shape`` independent streams."""
    ctx = {}
    n = config.n
    for k in range(config.k):
        ctx[f"enc{k}.conv"] = np.zeros((*batch_shape, config.channels[k], n - 1), dtype=dtype)
        dec_in = (config.channels[k + 1] if k + 1 < config.k else config.channels[-1]) + config.channels[k]
        ctx[f"dec{k}.conv"] = np.zeros((*batch_shape, dec_in, n - 1), dtype=dtype)
    hidden = np.zeros((*batch_shape, config.lstm_width), dtype=dtype)
    return StreamState(
        conv_context=ctx,
        h=hidden,
        c=hidden.copy(),
        ring=np.zeros((*batch_shape, config.chunk), dtype=dtype),
        config=config,
    )


def _cached_conv(state: StreamState, name: str, x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    k = w.shape[-1]
    if k == 1:
        return K.conv_forward(x, w, b, 1)[0]
    xp = np.concatenate([state.conv_context[name], x], axis=-1)
    state.conv_context[name] = xp[..., -(k - 1) :].copy()
    return K.conv_forward(xp, w, b, 1)[0]


def process_chunk(model, state: StreamState, noisy_chunk) -> np.ndarray:
    """Enhance one chunk of ``2**K`` samples, updating ``state`` in place."""
    weights = prepare(model, state.dtype)
    cfg, w = weights.config, weights.arrays
    chunk = np.asarray(noisy_chunk, dtype=state.dtype)
    if chunk.shape != state.ring.shape:
        raise DimensionError(f"expected chunk of shape {state.ring.shape}, got {chunk.shape}")

    if cfg.ar_enabled:
        x = np.stack([chunk, state.ring], axis=-2)
    else:
        x = chunk[..., None, :]
    h = K.conv1x1(x, w["in_proj.w"], w["in_proj.b"])
    skips = []
    for k in range(cfg.k):
        h = K.leaky_relu(_cached_conv(state, f"enc{k}.conv", h, w[f"enc{k}.conv.w"], w[f"enc{k}.conv.b"]))
        skips.append(h)
        h = K.down_conv2(h, w[f"enc{k}.down.w"], w[f"enc{k}.down.b"])

    # one bottleneck frame per chunk
    gates = K.conv1x1(h, w["lstm.w_ih"], w["lstm.b"])[..., 0]
    state.h, state.c, _ = K.lstm_cell(gates, state.h, state.c, w["lstm.w_hh"])
    h = K.conv1x1(state.h[..., None], w["lstm.out.w"], w["lstm.out.b"])

    for k in reversed(range(cfg.k)):
        h = np.concatenate([K.upsample2(h), skips[k]], axis=-2)
        h = K.leaky_relu(_cached_conv(state, f"dec{k}.conv", h, w[f"dec{k}.conv.w"], w[f"dec{k}.conv.b"]))
    y = K.conv1x1(h, w["out.w"], w["out.b"])[..., 0, :]

    state.ring = y.copy()
    state.chunk_index += 1
    return y


def _check_length(config: ModelConfig, noisy: np.ndarray) -> int:
    L = config.chunk
    if noisy.shape[-1] == 0 or noisy.shape[-1] % L:
        raise DimensionError(f"length {noisy.shape[-1]} is not a positive multiple of the chunk size {L}")
    return noisy.shape[-1] // L


def free_run_streaming(model, noisy, dtype=np.float32) -> np.ndarray:
    """Run a whole (..., T) signal through :func:`process_chunk`."""
    weights = prepare(model, dtype)
    noisy = np.asarray(noisy, dtype=dtype)
    n_chunks = _check_length(weights.config, noisy)
    L = weights.config.chunk
    state = init_state(weights.config, noisy.shape[:-1], dtype)
    out = np.empty_like(noisy)
    for i in range(n_chunks):
        out[..., i * L : (i + 1) * L] = process_chunk(weights, state, noisy[..., i * L : (i + 1) * L])
    return out


def free_run_offline(params: ModelParams, noisy) -> np.ndarray:
    """Uncached free-running reference, O(T^2).

    For chunk ``i`` the full model is rerun on the prefix ending at chunk
    ``i``, with the AR channel holding the outputs emitted so far. A model
    without AR conditioning has nothing to feed back, so a single forward is
    already its free-running output.
    """
    cfg = params.config
    noisy = np.asarray(noisy, dtype=params.dtype)
    n_chunks = _check_length(cfg, noisy)
    L = cfg.chunk
    with no_grad():
        if not cfg.ar_enabled:
            return forward(params, noisy[..., None, :]).values.copy()
        out = np.zeros_like(noisy)
        for i in range(n_chunks):
            end = (i + 1) * L
            x = assemble_ar_input(noisy[..., :end], out[..., :end], L)
            out[..., i * L : end] = forward(params, x).values[..., i * L :]
    return out


def free_run_passes(config: ModelConfig, num_samples: int) -> int:
    """Forward passes needed by the offline reference for ``num_samples``."""
    return -(-num_samples // config.chunk)


def teacher_forced(params: ModelParams, noisy, clean) -> np.ndarray:
    """Single parallel forward with the shifted ground truth as AR channel."""
    cfg = params.config
    with no_grad():
        if cfg.ar_enabled:
            x = assemble_ar_input(noisy, clean, cfg.chunk)
        else:
            x = np.asarray(noisy)[..., None, :]
        return forward(params, x).values.copy()


@dataclass
class BenchReport:
    mode: str
    seconds: float
    forward_passes: int
    wall_time: float
    real_time_factor: float
    slowdown_vs_tf: float
    latency_ms: float

    def as_line(self) -> str:
        return " ".join(f"{k}={_fmt(v)}" for k, v in self.__dict__.items())


def _fmt(v) -> str:
    if not isinstance(v, float):
        return str(v)
    text = f"{v:.6g}"
    return text if any(ch in text for ch in ".ein") else text + ".0"


def format_table(reports: list[BenchReport]) -> str:
    head = f"{'mode':<15}{'passes':>8}{'wall s':>10}{'RTF':>10}{'vs TF':>9}{'latency ms':>12}"
    rows = [
        f"{r.mode:<15}{r.forward_passes:>8}{r.wall_time:>10.4f}{r.real_time_factor:>10.4f}"
        f"{r.slowdown_vs_tf:>9.2f}{r.latency_ms:>12.3f}"
        for r in reports
    ]
    return "\n".join([head, "-" * len(head), *rows])


MODES = ("teacher_forced", "free_offline", "streaming")


def bench(params: ModelParams, seconds: float = 1.0, mode: str = "streaming", seed: int = 0,
          repeats: int = 3) -> BenchReport:
    """Time one inference mode on ``seconds`` of random audio at 32-bit.

    ``slowdown_vs_tf`` divides by the best-of-``repeats`` wall time of a
    single teacher-forced forward on the same audio.
    """
    if mode not in MODES:
        raise ContractError(f"unknown bench mode {mode!r}; expected one of {MODES}")
    cfg = params.config
    L = cfg.chunk
    n = max(L, int(round(seconds * cfg.sample_rate / L)) * L)
    rng = np.random.default_rng(seed)
    noisy = (0.1 * rng.standard_normal(n)).astype(np.float32)
    p32 = params.astype(np.float32, requires_grad=False)

    def timed(fn):
        start = time.perf_counter()
        fn()
        return time.perf_counter() - start

    tf_time = min(timed(lambda: teacher_forced(p32, noisy, noisy)) for _ in range(repeats))
    if mode == "teacher_forced":
        wall, passes = tf_time, 1
    elif mode == "free_offline":
        wall, passes = timed(lambda: free_run_offline(p32, noisy)), free_run_passes(cfg, n)
        if not cfg.ar_enabled:
            passes = 1
    else:
        weights = prepare(p32)
        wall = min(timed(lambda: free_run_streaming(weights, noisy)) for _ in range(repeats))
        passes = n // L
    duration = n / cfg.sample_rate
    return BenchReport(
        mode=mode,
        seconds=duration,
        forward_passes=passes,
        wall_time=wall,
        real_time_factor=wall / duration,
        slowdown_vs_tf=wall / tf_time,
        latency_ms=algorithmic_latency(cfg).ms,
    )


def chunk_timings(model, num_chunks: int, seed: int = 0) -> np.ndarray:
    """Wall time of each successive :func:`process_chunk` call on one stream."""
    weights = prepare(model)
    L = weights.config.chunk
    rng = np.random.default_rng(seed)
    audio = (0.1 * rng.standard_normal(num_chunks * L)).astype(np.float32)
    state = init_state(weights.config)
    times = np.empty(num_chunks)
    for i in range(num_chunks):
        start = time.perf_counter()
        process_chunk(weights, state, audio[i * L : (i + 1) * L])
        times[i] = time.perf_counter() - start
    return times
