"""Binary checkpoint container.

Little-endian layout::

    b"IARD"                      magic
    u32 version                  (1)
    u32 k, u32 n, u32 len(C), u32 C[i]..., u32 lstm_width, u8 ar_enabled, u32 sample_rate
    u64 init seed
    u32 tensor count
    per tensor: u32 name length, name (utf-8), u8 dtype code (1 = float32),
                u32 rank, u32 dims..., raw float32 data
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .core.tensor import GradTensor
from .errors import CheckpointError, ConfigError
from .model import ModelConfig, ModelParams, param_shapes

MAGIC = b"IARD"
VERSION = 1
DTYPE_F32 = 1


def to_bytes(params: ModelParams) -> bytes:
    cfg = params.config
    out = [MAGIC, struct.pack("<I", VERSION)]
    out.append(struct.pack("<III", cfg.k, cfg.n, len(cfg.channels)))
    out.append(struct.pack(f"<{len(cfg.channels)}I", *cfg.channels))
    out.append(struct.pack("<IBI", cfg.lstm_width, int(cfg.ar_enabled), cfg.sample_rate))
    out.append(struct.pack("<QI", params.seed & 0xFFFFFFFFFFFFFFFF, len(params.tensors)))
    for name, tensor in params.tensors.items():
        raw = name.encode("utf-8")
        data = np.ascontiguousarray(tensor.values, dtype="<f4")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack("<BI", DTYPE_F32, data.ndim) + struct.pack(f"<{data.ndim}I", *data.shape))
        out.append(data.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes, expected: ModelConfig | None = None) -> ModelParams:
    r = _Reader(buf)
    if r.take(4) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    k, n, n_chan = r.unpack("<III")
    channels = r.unpack(f"<{n_chan}I")
    lstm_width, ar, rate = r.unpack("<IBI")
    try:
        config = ModelConfig(k, n, tuple(channels), lstm_width, bool(ar), rate)
    except ConfigError as exc:
        raise CheckpointError(f"invalid stored config: {exc}") from exc
    if expected is not None and expected != config:
        raise CheckpointError(f"checkpoint config {config} does not match expected {expected}")
    seed, count = r.unpack("<QI")
    shapes = param_shapes(config)
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        code, rank = r.unpack("<BI")
        if code != DTYPE_F32:
            raise CheckpointError(f"{name}: unsupported dtype code {code}")
        dims = r.unpack(f"<{rank}I")
        if shapes.get(name) != tuple(dims):
            raise CheckpointError(f"tensor {name!r} with shape {dims} does not fit the stored config")
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(dims).astype(np.float32)
        tensors[name] = GradTensor(data, requires_grad=True)
    if set(tensors) != set(shapes):
        missing = sorted(set(shapes) - set(tensors))
        raise CheckpointError(f"checkpoint is missing tensors {missing}")
    if r.pos != len(buf):
        raise CheckpointError("trailing bytes after tensor table")
    return ModelParams(config, int(seed), {name: tensors[name] for name in shapes})


def save(path, params: ModelParams) -> None:
    Path(path).write_bytes(to_bytes(params))


def load(path, expected: ModelConfig | None = None) -> ModelParams:
    """Load weights as float32 tensors, optionally asserting the config."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(buf, expected)
