"""Teacher forcing, iterative autoregression and the training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .audio import segment
from .core import AdamState, adam_step, backward, l1_loss, no_grad, si_snr_loss
from .core.tensor import GradTensor
from .errors import ConfigError, ContractError, DataError, NumericError
from .metrics import si_sdr, tf_fr_gap
from .model import ModelParams, assemble_ar_input, forward
from .streaming import free_run_streaming

LOSSES = {"l1": l1_loss, "sisnr": si_snr_loss}


@dataclass(frozen=True)
class IASchedule:
    e_start: int = 300
    e_step: int = 100
    max_passes: int | None = None

    def __post_init__(self):
        if self.e_start < 0:
            raise ConfigError(f"e_start must be >= 0, got {self.e_start}")
        if self.e_step < 1:
            raise ConfigError(f"e_step must be >= 1, got {self.e_step}")
        if self.max_passes is not None and self.max_passes < 1:
            raise ConfigError(f"max_passes must be >= 1, got {self.max_passes}")


def ia_passes(epoch: int, schedule: IASchedule | None) -> int:
    """Forward passes per batch at ``epoch``; only the last one is differentiated.

    Pure teacher forcing (1 pass) before ``e_start``, then 2 passes, plus one
    more every ``e_step`` epochs, optionally capped at ``max_passes``.
    """
    if schedule is None or epoch < schedule.e_start:
        return 1
    passes = 2 + (epoch - schedule.e_start) // schedule.e_step
    if schedule.max_passes is not None:
        passes = min(passes, schedule.max_passes)
    return max(1, passes)


def ia_forward(params: ModelParams, noisy, clean, passes: int) -> GradTensor:
    """Iterative-autoregression forward.

    Pass 1 conditions on the shifted clean signal. Each later pass conditions
    on the previous pass's prediction, recomputed here from scratch and
    detached. Only the final pass is recorded for backward.
    """
    cfg = params.config
    if not cfg.ar_enabled:
        raise ContractError("iterative autoregression needs a model with the AR channel enabled")
    if passes < 1:
        raise ContractError(f"passes must be >= 1, got {passes}")
    L = cfg.chunk
    conditioning = np.asarray(clean, dtype=params.dtype)
    with no_grad():
        for _ in range(passes - 1):
            conditioning = forward(params, assemble_ar_input(noisy, conditioning, L)).values
    return forward(params, assemble_ar_input(noisy, conditioning, L))


@dataclass
class TrainConfig:
    batch_size: int = 16
    segment_samples: int = 32000
    iterations_per_epoch: int = 1000
    epochs: int = 1000
    loss: str = "l1"
    lr: float = 2e-4
    beta1: float = 0.8
    beta2: float = 0.9
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {sorted(LOSSES)}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        for name in ("batch_size", "segment_samples", "iterations_per_epoch", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_sisdr: float
    tf_fr_gap: float
    passes: int

    def line(self) -> str:
        return f"{self.epoch},{self.train_loss:.8g},{self.val_sisdr:.6g},{self.tf_fr_gap:.8g},{self.passes}"


LOG_HEADER = "epoch,train_loss,val_sisdr,tf_fr_gap,passes"


@dataclass
class TrainResult:
    best: ModelParams
    best_epoch: int
    best_val_sisdr: float
    final: ModelParams
    log: list[EpochLog] = field(default_factory=list)


def make_segments(pairs: Sequence[tuple[np.ndarray, np.ndarray]], segment_samples: int, chunk: int):
    """Stack (noisy, clean) pairs into equal-length (S, T) training arrays.

    Utterances are cut into ``segment_samples`` pieces (rounded to the chunk
    size); partial tails are dropped unless the utterance is shorter than a
    segment, in which case it is zero-padded.
    """
    seg = (segment_samples // chunk) * chunk
    noisy_out, clean_out = [], []
    for noisy, clean in pairs:
        for n_piece, c_piece in zip(segment(noisy, seg, chunk), segment(clean, seg, chunk)):
            if len(n_piece) == seg:
                noisy_out.append(n_piece)
                clean_out.append(c_piece)
            elif len(noisy) < seg:
                pad = seg - len(n_piece)
                noisy_out.append(np.pad(n_piece, (0, pad)))
                clean_out.append(np.pad(c_piece, (0, pad)))
    if not noisy_out:
        raise DataError("no training segments")
    return np.stack(noisy_out), np.stack(clean_out)


def validate(params: ModelParams, val_noisy, val_clean) -> tuple[float, float]:
    """(mean free-running SI-SDR, mean TF/FR L1 gap) on the validation set."""
    fr = free_run_streaming(params, val_noisy)
    score = float(np.mean(si_sdr(fr, val_clean)))
    gap = tf_fr_gap(params.astype(np.float32, False), val_noisy, val_clean, mode="streaming", fr_output=fr)["gap"]
    return score, gap


def train(params: ModelParams, data, config: TrainConfig, schedule: IASchedule | None = None,
          val=None, log_path=None, progress: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Train in place and return the best-validation checkpoint.

    ``data`` is a pair of (S, T) arrays ``(noisy, clean)``; ``val`` likewise
    (or None to keep the final weights). Each iteration draws a batch,
    runs the (iterative) forward, the loss, backward and one Adam step.
    After each epoch the validation set is enhanced in free-running mode and
    the checkpoint with the highest SI-SDR is kept.
    """
    cfg = params.config
    if schedule is not None and not cfg.ar_enabled:
        raise ContractError("an IA schedule requires a model with AR conditioning")
    noisy_all, clean_all = (np.asarray(a) for a in data)
    if noisy_all.ndim != 2 or noisy_all.shape[0] == 0:
        raise DataError("training data must be a non-empty (segments, samples) array")
    if noisy_all.shape != clean_all.shape:
        raise DataError(f"noisy {noisy_all.shape} and clean {clean_all.shape} differ in shape")
    if noisy_all.shape[1] % cfg.chunk:
        raise DataError(f"segment length {noisy_all.shape[1]} is not a multiple of {cfg.chunk}")

    dtype = np.dtype(config.dtype)
    if params.dtype != dtype:
        params = params.astype(dtype)
    noisy_all, clean_all = noisy_all.astype(dtype), clean_all.astype(dtype)
    loss_fn = LOSSES[config.loss]
    opt = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    rng = np.random.default_rng(config.seed)
    batch = min(config.batch_size, noisy_all.shape[0])

    log_file = None
    if log_path is not None:
        log_path = Path(log_path)
        fresh = not log_path.exists() or log_path.stat().st_size == 0
        log_file = log_path.open("a", encoding="utf-8")
        if fresh:
            log_file.write(LOG_HEADER + "\n")

    result = TrainResult(best=params.copy(), best_epoch=-1, best_val_sisdr=-math.inf, final=params)
    try:
        for epoch in range(config.epochs):
            passes = ia_passes(epoch, schedule)
            total = 0.0
            for it in range(config.iterations_per_epoch):
                idx = rng.integers(0, noisy_all.shape[0], size=batch)
                noisy, clean = noisy_all[idx], clean_all[idx]
                params.zero_grad()
                if cfg.ar_enabled:
                    pred = ia_forward(params, noisy, clean, passes)
                else:
                    pred = forward(params, noisy[:, None, :])
                loss = loss_fn(pred, clean)
                value = loss.item()
                if not math.isfinite(value):
                    raise NumericError(
                        f"non-finite loss {value} at epoch {epoch}, iteration {it} (passes={passes})"
                    )
                backward(loss)
                adam_step(params.tensors, None, opt)
                total += value

            if val is not None:
                score, gap = validate(params, *val)
            else:
                score, gap = math.nan, math.nan
            entry = EpochLog(epoch, total / config.iterations_per_epoch, score, gap, passes)
            result.log.append(entry)
            if log_file is not None:
                log_file.write(entry.line() + "\n")
                log_file.flush()
            if progress is not None:
                progress(entry)
            if val is None or score > result.best_val_sisdr:
                result.best = params.copy()
                result.best_epoch = epoch
                result.best_val_sisdr = score
    finally:
        if log_file is not None:
            log_file.close()
    result.final = params
    return result
