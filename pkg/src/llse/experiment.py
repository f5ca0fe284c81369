"""Scaled-down comparison of non-AR, AR teacher-forced and AR+IA training.

Synthetic voiced-speech proxies are mixed with noise, three models are
trained with the same budget per seed, and each best checkpoint is scored in
free-running mode on held-out pairs.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .audio import synth_pair
from .metrics import si_sdr, tf_fr_gap
from .model import ModelConfig, build
from .streaming import free_run_streaming
from .training import IASchedule, TrainConfig, make_segments, train

DESK_MODEL = ModelConfig(k=4, n=4, channels=(8, 12, 16, 24), lstm_width=64, ar_enabled=True)
VARIANTS = ("non_ar", "ar_tf", "ar_ia")


@dataclass
class DeskSetup:
    model: ModelConfig = DESK_MODEL
    minutes: float = 20.0
    utterance_s: float = 4.0
    snrs: tuple[float, ...] = (15.0, 10.0, 5.0, 0.0)
    noise: str = "white"
    e_start: int = 30
    e_step: int = 10
    epochs: int = 100
    iterations_per_epoch: int = 24
    batch_size: int = 8
    segment_samples: int = 2048
    lr: float = 2e-3
    dtype: str = "float32"
    val_clips: int = 6
    test_clips: int = 12
    eval_s: float = 2.0


@dataclass
class VariantResult:
    name: str
    fr_sisdr: float
    gap: float
    loss_tf: float
    loss_fr: float
    best_epoch: int
    seconds: float
    log: list = field(default_factory=list, repr=False)


@dataclass
class SeedOutcome:
    seed: int
    results: dict[str, VariantResult]

    @property
    def sisdr_gain(self) -> float:
        return self.results["ar_ia"].fr_sisdr - self.results["ar_tf"].fr_sisdr

    @property
    def gap_ratio(self) -> float:
        ia = abs(self.results["ar_ia"].gap)
        return abs(self.results["ar_tf"].gap) / ia if ia > 0 else float("inf")

    @property
    def check_a(self) -> bool:
        return self.sisdr_gain >= 1.0

    @property
    def check_b(self) -> bool:
        return self.gap_ratio >= 2.0

    @property
    def check_c(self) -> bool:
        return self.results["ar_ia"].fr_sisdr >= self.results["non_ar"].fr_sisdr

    @property
    def passed(self) -> bool:
        return self.check_a and self.check_b and self.check_c


def _pairs(count: int, duration: float, setup: DeskSetup, rng) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for i in range(count):
        mix = synth_pair(duration, setup.snrs[i % len(setup.snrs)], int(rng.integers(2**31 - 1)),
                         setup.noise, setup.model.sample_rate)
        out.append((mix.noisy.astype(np.float32), mix.clean.astype(np.float32)))
    return out


def make_data(setup: DeskSetup, seed: int):
    """(train, val, test) with train as stacked segments and val/test as (V, T) arrays."""
    rng = np.random.default_rng([seed, 7])
    n_train = max(1, int(round(setup.minutes * 60.0 / setup.utterance_s)))
    train_pairs = _pairs(n_train, setup.utterance_s, setup, rng)
    train_data = make_segments(train_pairs, setup.segment_samples, setup.model.chunk)
    n_eval = int(round(setup.eval_s * setup.model.sample_rate / setup.model.chunk)) * setup.model.chunk

    def stacked(count):
        pairs = _pairs(count, n_eval / setup.model.sample_rate, setup, rng)
        return np.stack([p[0][:n_eval] for p in pairs]), np.stack([p[1][:n_eval] for p in pairs])

    return train_data, stacked(setup.val_clips), stacked(setup.test_clips)


def score(params, test) -> dict:
    noisy, clean = test
    fr = free_run_streaming(params, noisy)
    gap = tf_fr_gap(params.astype(np.float32, False), noisy, clean, mode="streaming", fr_output=fr)
    return {"fr_sisdr": float(np.mean(si_sdr(fr, clean))), **gap}


def run_variant(name: str, setup: DeskSetup, seed: int, data, progress=None) -> VariantResult:
    train_data, val, test = data
    config = setup.model.replace(ar_enabled=name != "non_ar")
    schedule = IASchedule(setup.e_start, setup.e_step) if name == "ar_ia" else None
    tc = TrainConfig(
        batch_size=setup.batch_size,
        segment_samples=setup.segment_samples,
        iterations_per_epoch=setup.iterations_per_epoch,
        epochs=setup.epochs,
        lr=setup.lr,
        seed=seed,
        dtype=setup.dtype,
    )
    start = time.perf_counter()
    result = train(build(config, seed), train_data, tc, schedule, val=val, progress=progress)
    s = score(result.best, test)
    return VariantResult(name, s["fr_sisdr"], s["gap"], s["loss_tf"], s["loss_fr"], result.best_epoch,
                         time.perf_counter() - start, result.log)


def run_seed(setup: DeskSetup, seed: int, progress=None) -> SeedOutcome:
    data = make_data(setup, seed)
    return SeedOutcome(seed, {name: run_variant(name, setup, seed, data, progress) for name in VARIANTS})
