"""Flat ``key = value`` run configuration files."""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .training import IASchedule, TrainConfig


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_int(text: str) -> int | None:
    return None if text.lower() in ("none", "") else int(text)


def _channels(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace("[", "").replace("]", "").split(",") if v.strip())


KEYS = {
    "model.k": int,
    "model.n": int,
    "model.channels": _channels,
    "model.lstm_width": int,
    "model.ar": _bool,
    "train.batch": int,
    "train.segment_s": float,
    "train.lr": float,
    "train.beta1": float,
    "train.beta2": float,
    "train.epochs": int,
    "train.iters_per_epoch": int,
    "train.dtype": str,
    "ia.e_start": int,
    "ia.e_step": int,
    "ia.max_passes": _optional_int,
    "loss": str,
    "seed": int,
    "sample_rate": int,
}


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    ia_e_start: int = 300
    ia_e_step: int = 100
    ia_max_passes: int | None = None

    def schedule(self, e_start: int | None = None, e_step: int | None = None) -> IASchedule:
        return IASchedule(
            self.ia_e_start if e_start is None else e_start,
            self.ia_e_step if e_step is None else e_step,
            self.ia_max_passes,
        )


def parse(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        try:
            values[key] = KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def build_run_config(values: dict) -> RunConfig:
    get = values.get
    model = ModelConfig(
        k=get("model.k", 7),
        n=get("model.n", 4),
        channels=get("model.channels", (16, 24, 32, 48, 64, 96, 128)),
        lstm_width=get("model.lstm_width", 512),
        ar_enabled=get("model.ar", True),
        sample_rate=get("sample_rate", 16000),
    )
    seg = int(round(get("train.segment_s", 2.0) * model.sample_rate))
    seg = max(model.chunk, (seg // model.chunk) * model.chunk)
    train = TrainConfig(
        batch_size=get("train.batch", 16),
        segment_samples=seg,
        iterations_per_epoch=get("train.iters_per_epoch", 1000),
        epochs=get("train.epochs", 1000),
        loss=get("loss", "l1"),
        lr=get("train.lr", 2e-4),
        beta1=get("train.beta1", 0.8),
        beta2=get("train.beta2", 0.9),
        seed=get("seed", 0),
        dtype=get("train.dtype", "float64"),
    )
    return RunConfig(model, train, get("ia.e_start", 300), get("ia.e_step", 100), get("ia.max_passes"))


def load_text(text: str, source: str = "<config>") -> RunConfig:
    return build_run_config(parse(text, source))


def load_file(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return load_text(text, str(path))


def default_text(name: str = "base") -> str:
    """Text of a bundled config (``base`` or ``desk``)."""
    try:
        return resources.files("llse").joinpath("configs", f"{name}.conf").read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ConfigError(f"no bundled config named {name!r}") from exc
