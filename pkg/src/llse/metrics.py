"""Objective evaluation: SI-SDR, L1 and the teacher-forcing/free-running gap."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .audio import DatasetManifest, load_pairs
from .errors import ContractError, DataError
from .model import ModelParams
from .streaming import free_run_offline, free_run_streaming, teacher_forced

SI_SDR_CAP = 100.0


def si_sdr(estimate, reference) -> np.ndarray | float:
    """Scale-invariant SDR in dB over the last axis, capped at 100 dB.

    A perfect estimate (zero residual) reports the cap; a zero reference
    gives NaN.
    """
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape:
        raise ContractError(f"estimate {est.shape} and reference {ref.shape} differ in shape")
    ref_energy = np.sum(ref * ref, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.sum(est * ref, axis=-1) / ref_energy
        target = alpha[..., None] * ref
        residual = np.sum((est - target) ** 2, axis=-1)
        db = 10.0 * np.log10(np.sum(target * target, axis=-1) / residual)
    db = np.where(ref_energy > 0, np.minimum(db, SI_SDR_CAP), np.nan)
    return float(db) if db.ndim == 0 else db


def l1(estimate, reference) -> float:
    return float(np.mean(np.abs(np.asarray(estimate, np.float64) - np.asarray(reference, np.float64))))


def _trim(config, *arrays):
    n = (arrays[0].shape[-1] // config.chunk) * config.chunk
    if n == 0:
        raise DataError(f"signal shorter than one chunk ({config.chunk} samples)")
    return [np.asarray(a)[..., :n] for a in arrays]


def free_run(params: ModelParams, noisy, mode: str = "offline", dtype=None) -> np.ndarray:
    if mode == "offline":
        return free_run_offline(params if dtype is None else params.astype(dtype, False), noisy)
    if mode == "streaming":
        return free_run_streaming(params, noisy, dtype or np.float32)
    raise ContractError(f"unknown free-running mode {mode!r}")


def tf_fr_gap(params: ModelParams, noisy, clean, mode: str = "offline", fr_output=None) -> dict:
    """L1 loss with ground-truth conditioning vs. with self-conditioning.

    ``mode`` picks the free-running implementation: the uncached
    ``"offline"`` reference or the cached ``"streaming"`` engine.
    ``fr_output`` can pass a precomputed free-running estimate.
    """
    noisy, clean = _trim(params.config, noisy, clean)
    tf = teacher_forced(params, noisy, clean)
    fr = free_run(params, noisy, mode) if fr_output is None else fr_output
    loss_tf, loss_fr = l1(tf, clean), l1(fr, clean)
    return {"loss_tf": loss_tf, "loss_fr": loss_fr, "gap": loss_fr - loss_tf}


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)

    @property
    def mean_si_sdr(self) -> float:
        return float(np.mean([r["si_sdr"] for r in self.rows]))

    @property
    def mean_l1(self) -> float:
        return float(np.mean([r["l1"] for r in self.rows]))

    @property
    def mean_gap(self) -> float:
        return float(np.mean([r["gap"] for r in self.rows]))

    def to_csv(self) -> str:
        lines = ["file,snr_db,si_sdr,l1,gap"]
        lines += [f"{r['file']},{r['snr_db']:g},{r['si_sdr']:.4f},{r['l1']:.6f},{r['gap']:.6f}" for r in self.rows]
        lines.append(f"MEAN,,{self.mean_si_sdr:.4f},{self.mean_l1:.6f},{self.mean_gap:.6f}")
        return "\n".join(lines) + "\n"


def eval_dataset(model: ModelParams | Callable, manifest: DatasetManifest, base=".",
                 mode: str = "streaming") -> EvalReport:
    """Score every manifest pair in free-running mode.

    ``model`` may also be a plain callable ``noisy -> estimate``; it then has
    no conditioning to speak of and its gap is reported as 0.
    """
    if len(manifest) == 0:
        raise DataError("manifest is empty")
    report = EvalReport()
    for entry, (noisy, clean) in zip(manifest.entries, load_pairs(manifest, Path(base))):
        if isinstance(model, ModelParams):
            noisy, clean = _trim(model.config, noisy, clean)
            est = free_run(model, noisy, mode)
            gap = tf_fr_gap(model, noisy, clean, mode, fr_output=est)["gap"]
        else:
            est, gap = np.asarray(model(noisy)), 0.0
        report.rows.append(
            {"file": entry.noisy, "snr_db": entry.snr_db, "si_sdr": si_sdr(est, clean), "l1": l1(est, clean), "gap": gap}
        )
    return report
