"""WaveUNet+LSTM denoiser with an optional autoregressive input channel.

Layout (K scales, channel list C, intra-scale kernel N)::

    input (1 or 2 ch) -> conv1x1 -> C[0]
    encoder k:   causal_conv(N) -> leaky_relu -> [skip k] -> down_conv2
    bottleneck:  conv1x1 (LSTM input gates) -> LSTM -> conv1x1
    decoder k:   upsample2_nn -> concat(skip k) -> causal_conv(N) -> leaky_relu
    output:      conv1x1 -> 1 ch

The only operations that look ahead are the aligned stride-2 downsamplings,
so output sample ``t`` depends on input up to the end of the ``2**K``-sample
chunk containing ``t`` and nothing later.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import ops
from .core.tensor import GradTensor, as_tensor
from .errors import ConfigError, ContractError, DimensionError

BASE_CHANNELS = (16, 24, 32, 48, 64, 96, 128)


@dataclass(frozen=True)
class ModelConfig:
    k: int = 7
    n: int = 4
    channels: tuple[int, ...] = BASE_CHANNELS
    lstm_width: int = 512
    ar_enabled: bool = True
    sample_rate: int = 16000

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.n < 1:
            raise ConfigError(f"n must be >= 1, got {self.n}")
        if len(self.channels) != self.k:
            raise ConfigError(f"need {self.k} channel counts, got {len(self.channels)}")
        if any(c < 1 for c in self.channels):
            raise ConfigError(f"channel counts must be positive: {self.channels}")
        if self.lstm_width < 1:
            raise ConfigError(f"lstm_width must be >= 1, got {self.lstm_width}")
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def chunk(self) -> int:
        return 2**self.k

    @property
    def in_channels(self) -> int:
        return 2 if self.ar_enabled else 1

    def replace(self, **changes) -> ModelConfig:
        fields = dict(self.__dict__)
        fields.update(changes)
        return ModelConfig(**fields)


def _down_out(config: ModelConfig, k: int) -> int:
    return config.channels[min(k + 1, config.k - 1)]


def _dec_in(config: ModelConfig, k: int) -> int:
    upper = config.channels[k + 1] if k + 1 < config.k else config.channels[-1]
    return upper + config.channels[k]


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Parameter names and shapes, in canonical order."""
    c, n, hid = config.channels, config.n, config.lstm_width
    shapes = {"in_proj.w": (c[0], config.in_channels), "in_proj.b": (c[0],)}
    for k in range(config.k):
        shapes[f"enc{k}.conv.w"] = (c[k], c[k], n)
        shapes[f"enc{k}.conv.b"] = (c[k],)
        shapes[f"enc{k}.down.w"] = (_down_out(config, k), c[k], 2)
        shapes[f"enc{k}.down.b"] = (_down_out(config, k),)
    shapes["lstm.w_ih"] = (4 * hid, c[-1])
    shapes["lstm.w_hh"] = (4 * hid, hid)
    shapes["lstm.b"] = (4 * hid,)
    shapes["lstm.out.w"] = (c[-1], hid)
    shapes["lstm.out.b"] = (c[-1],)
    for k in reversed(range(config.k)):
        shapes[f"dec{k}.conv.w"] = (c[k], _dec_in(config, k), n)
        shapes[f"dec{k}.conv.b"] = (c[k],)
    shapes["out.w"] = (1, c[0])
    shapes["out.b"] = (1,)
    return shapes


@dataclass
class ModelParams:
    config: ModelConfig
    seed: int
    tensors: dict[str, GradTensor]

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def num_parameters(self) -> int:
        return sum(t.values.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def arrays(self, dtype=None) -> dict[str, np.ndarray]:
        """Detached copies of the weights, optionally cast."""
        dtype = dtype or self.dtype
        return {name: t.values.astype(dtype, copy=True) for name, t in self.tensors.items()}

    def astype(self, dtype, requires_grad: bool = True) -> ModelParams:
        tensors = {name: GradTensor(a, requires_grad=requires_grad) for name, a in self.arrays(dtype).items()}
        return ModelParams(self.config, self.seed, tensors)

    def copy(self) -> ModelParams:
        return self.astype(self.dtype)


def build(config: ModelConfig, seed: int = 0, dtype=np.float64) -> ModelParams:
    """Fresh weights: uniform in +-sqrt(1/fan_in), zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b"):
            values = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(1.0 / fan_in)
            values = rng.uniform(-bound, bound, size=shape)
        tensors[name] = GradTensor(values.astype(dtype), requires_grad=True)
    return ModelParams(config, int(seed), tensors)


def check_input(config: ModelConfig, shape: tuple[int, ...]) -> None:
    if len(shape) < 2 or shape[-2] != config.in_channels:
        raise DimensionError(f"expected input (..., {config.in_channels}, T), got {shape}")
    if shape[-1] == 0 or shape[-1] % config.chunk:
        raise DimensionError(f"length {shape[-1]} is not a positive multiple of {config.chunk}")


def forward(params: ModelParams, x) -> GradTensor:
    """Enhanced waveform (..., T) from input channels (..., 1|2, T)."""
    cfg, w = params.config, params.tensors
    if isinstance(x, GradTensor) and x.dtype != params.dtype:
        x = x.values
    x = as_tensor(x, params.dtype)
    check_input(cfg, x.shape)

    h = ops.conv1x1(x, w["in_proj.w"], w["in_proj.b"])
    skips = []
    for k in range(cfg.k):
        h = ops.leaky_relu(ops.causal_conv1d(h, w[f"enc{k}.conv.w"], w[f"enc{k}.conv.b"]))
        skips.append(h)
        h = ops.down_conv2(h, w[f"enc{k}.down.w"], w[f"enc{k}.down.b"])

    hid = cfg.lstm_width
    gates = ops.conv1x1(h, w["lstm.w_ih"], w["lstm.b"])
    zeros = np.zeros((*x.shape[:-2], hid), dtype=params.dtype)
    packed = ops.lstm_sequence(gates, zeros, zeros, w["lstm.w_hh"])
    h = ops.conv1x1(ops.slice_channels(packed, 0, hid), w["lstm.out.w"], w["lstm.out.b"])

    for k in reversed(range(cfg.k)):
        h = ops.concat_channels(ops.upsample2_nn(h), skips[k])
        h = ops.leaky_relu(ops.causal_conv1d(h, w[f"dec{k}.conv.w"], w[f"dec{k}.conv.b"]))
    return ops.select_channel(ops.conv1x1(h, w["out.w"], w["out.b"]), 0)


class Latency(NamedTuple):
    samples: int
    ms: float


def algorithmic_latency(config_or_k, sample_rate: int | None = None) -> Latency:
    """Future context needed per output sample: ``2**K`` samples."""
    if isinstance(config_or_k, ModelConfig):
        k, rate = config_or_k.k, sample_rate or config_or_k.sample_rate
    else:
        k, rate = int(config_or_k), sample_rate or 16000
    if k < 0:
        raise ConfigError(f"k must be >= 0, got {k}")
    samples = 2**k
    return Latency(samples, 1000.0 * samples / rate)


def layer_macs(cout: int, cin: int, kernel: int, frames_per_second: float) -> float:
    return float(cout * cin * kernel * frames_per_second)


def mac_breakdown(config: ModelConfig) -> list[tuple[str, float]]:
    """(layer, multiply-accumulates per second of audio) for every weighted layer."""
    sr, c, n, hid = config.sample_rate, config.channels, config.n, config.lstm_width
    rows = [("in_proj", layer_macs(c[0], config.in_channels, 1, sr))]
    for k in range(config.k):
        rows.append((f"enc{k}.conv", layer_macs(c[k], c[k], n, sr / 2**k)))
        rows.append((f"enc{k}.down", layer_macs(_down_out(config, k), c[k], 2, sr / 2 ** (k + 1))))
    frames = sr / 2**config.k
    rows.append(("lstm.w_ih", layer_macs(4 * hid, c[-1], 1, frames)))
    rows.append(("lstm.w_hh", layer_macs(4 * hid, hid, 1, frames)))
    rows.append(("lstm.out", layer_macs(c[-1], hid, 1, frames)))
    for k in reversed(range(config.k)):
        rows.append((f"dec{k}.conv", layer_macs(c[k], _dec_in(config, k), n, sr / 2**k)))
    rows.append(("out", layer_macs(1, c[0], 1, sr)))
    return rows


def count_macs(config: ModelConfig) -> float:
    """Multiply-accumulates per second of audio (elementwise ops not counted)."""
    return sum(m for _, m in mac_breakdown(config))


def shift_right(x: np.ndarray, shift: int) -> np.ndarray:
    """``out[..., t] = x[..., t - shift]``, zeros for ``t < shift``."""
    out = np.zeros_like(x)
    if shift < x.shape[-1]:
        out[..., shift:] = x[..., : x.shape[-1] - shift]
    return out


def assemble_ar_input(noisy, ar_source, shift: int) -> GradTensor:
    """Stack the noisy waveform with ``ar_source`` delayed by ``shift`` samples.

    Channel 0 is ``noisy``; channel 1 at time ``t`` is ``ar_source[t - shift]``.
    With ``shift`` equal to the chunk size, chunk ``i`` only ever sees
    ``ar_source`` from chunks before ``i``. The result is never tracked:
    conditioning is an input, not a gradient path.
    """
    noisy = np.asarray(getattr(noisy, "values", noisy))
    ar_source = np.asarray(getattr(ar_source, "values", ar_source))
    if noisy.shape != ar_source.shape:
        raise DimensionError(f"noisy {noisy.shape} and AR source {ar_source.shape} differ in shape")
    if shift < 0:
        raise ContractError(f"shift must be non-negative, got {shift}")
    dtype = np.result_type(noisy.dtype, ar_source.dtype, np.float32)
    out = np.stack([noisy.astype(dtype), shift_right(ar_source.astype(dtype), shift)], axis=-2)
    return GradTensor(out)

