"""Command-line entry point.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from pathlib import Path

import numpy as np

from . import checkpoint
from .audio import NOISE_KINDS, AudioBuffer, DatasetManifest, load_pairs, make_dataset, read_wav, write_wav
from .config import RunConfig, default_text, load_file, load_text
from .core.gradcheck import run_suite
from .errors import ConfigError, ContractError, DataError, NumericError
from .metrics import eval_dataset
from .model import algorithmic_latency, build
from .streaming import MODES, bench, format_table, free_run_offline, free_run_streaming
from .training import make_segments, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _snr_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad SNR list {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("at least one SNR is required")
    return values


def _run_config(spec: str | None) -> RunConfig:
    if spec is None:
        return load_text(default_text("base"), "base.conf")
    if not Path(spec).exists() and spec in ("base", "desk"):
        return load_text(default_text(spec), f"{spec}.conf")
    return load_file(spec)


def cmd_synth_data(args) -> int:
    manifests = make_dataset(args.out, args.minutes, args.snrs, args.seed, args.noise, args.utterance_s)
    for split, m in manifests.items():
        print(f"{split}: {len(m)} pairs -> {Path(args.out) / (split + '.csv')}")
    return EXIT_OK


def _load_split(data_dir: Path, split: str, required: bool):
    path = data_dir / f"{split}.csv"
    if not path.exists():
        if required:
            raise DataError(f"missing manifest {path}")
        return None
    manifest = DatasetManifest.load(path)
    if len(manifest) == 0:
        if required:
            raise DataError(f"manifest {path} is empty")
        return None
    return manifest, load_pairs(manifest, data_dir)


def cmd_train(args) -> int:
    run = _run_config(args.config)
    model_cfg = run.model if args.ar is None else run.model.replace(ar_enabled=args.ar)
    overrides = {"loss": args.loss, "epochs": args.epochs, "seed": args.seed}
    tc = dataclasses.replace(run.train, **{k: v for k, v in overrides.items() if v is not None})
    schedule = None
    if args.ia_start is not None:
        if not model_cfg.ar_enabled:
            raise UsageError("--ia-start needs an AR model (--ar)")
        schedule = run.schedule(args.ia_start, args.ia_step)
    elif args.ia_step is not None:
        raise UsageError("--ia-step given without --ia-start")

    data_dir = Path(args.data)
    manifest, pairs = _load_split(data_dir, "train", required=True)
    if manifest.sample_rate != model_cfg.sample_rate:
        raise DataError(f"data sample rate {manifest.sample_rate} != model sample rate {model_cfg.sample_rate}")
    segments = make_segments(pairs, tc.segment_samples, model_cfg.chunk)
    val = None
    loaded = _load_split(data_dir, "val", required=False)
    if loaded is not None:
        noisy, clean = make_segments(loaded[1], tc.segment_samples, model_cfg.chunk)
        val = (noisy, clean)

    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log")
    params = build(model_cfg, tc.seed)
    mode = "IA" if schedule else ("teacher forcing" if model_cfg.ar_enabled else "non-AR")
    print(f"training {mode}: {params.num_parameters()} parameters, {len(segments[0])} segments, "
          f"latency {algorithmic_latency(model_cfg).ms:g} ms")

    def progress(entry):
        print(entry.line(), flush=True)

    result = train(params, segments, tc, schedule, val=val, log_path=log_path, progress=progress)
    checkpoint.save(args.out, result.best)
    print(f"best epoch {result.best_epoch} (val SI-SDR {result.best_val_sisdr:.3f} dB) -> {args.out}")
    return EXIT_OK


def cmd_enhance(args) -> int:
    expected = _run_config(args.config).model if args.config else None
    params = checkpoint.load(args.ckpt, expected)
    audio = read_wav(args.input)
    cfg = params.config
    if audio.sample_rate != cfg.sample_rate:
        raise DataError(f"input sample rate {audio.sample_rate} != model sample rate {cfg.sample_rate}")
    n = len(audio)
    padded = -(-n // cfg.chunk) * cfg.chunk
    noisy = np.pad(audio.samples, (0, padded - n))
    start = time.perf_counter()
    if args.mode == "streaming":
        out = free_run_streaming(params, noisy)
    else:
        out = free_run_offline(params, noisy)
    wall = time.perf_counter() - start
    write_wav(args.output, AudioBuffer(out[:n], cfg.sample_rate))
    duration = max(n, 1) / cfg.sample_rate
    print(f"latency_ms={algorithmic_latency(cfg).ms:g} real_time_factor={wall / duration:.4f} mode={args.mode}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.ckpt:
        params = checkpoint.load(args.ckpt)
    else:
        params = build(_run_config(args.config).model, args.seed)
    modes = MODES if args.mode == "all" else (args.mode,)
    reports = [bench(params, args.seconds, m, args.seed) for m in modes]
    print(format_table(reports))
    for r in reports:
        print(r.as_line())
    return EXIT_OK


def cmd_eval(args) -> int:
    params = checkpoint.load(args.ckpt)
    manifest = DatasetManifest.load(args.manifest)
    base = Path(args.base) if args.base else Path(args.manifest).parent
    report = eval_dataset(params, manifest, base, mode=args.mode)
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(instances=args.instances, seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name:<20} max_rel_err={r.max_rel_error:.3e} "
              f"instances={r.instances} ({r.seconds:.2f}s)")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"gradient check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="llse", description="Low-latency autoregressive speech enhancement")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth-data", help="synthesise paired clean/noisy WAVs and manifests")
    p.add_argument("--out", required=True)
    p.add_argument("--minutes", type=float, required=True)
    p.add_argument("--snrs", type=_snr_list, default=[15.0, 10.0, 5.0, 0.0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", choices=NOISE_KINDS, default="white")
    p.add_argument("--utterance-s", type=float, default=4.0)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train a model and keep the best-validation checkpoint")
    p.add_argument("--config", help="config file, or 'base'/'desk' for a bundled one (default: base)")
    p.add_argument("--data", required=True, help="directory with train.csv (and optionally val.csv)")
    p.add_argument("--out", required=True)
    p.add_argument("--ar", action=argparse.BooleanOptionalAction, default=None,
                   help="enable/disable the AR channel (default: model.ar from the config)")
    p.add_argument("--ia-start", type=int, help="enable iterative autoregression from this epoch")
    p.add_argument("--ia-step", type=int, help="epochs per additional pass (default: ia.e_step)")
    p.add_argument("--loss", choices=("l1", "sisnr"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--log", help="training log path (default: <out>.log)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance a WAV file in free-running mode")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    p.add_argument("--mode", choices=("streaming", "offline"), default="streaming")
    p.add_argument("--config", help="fail unless the checkpoint matches this config's model")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("bench", help="time teacher-forced, offline free-running and streaming inference")
    p.add_argument("--ckpt")
    p.add_argument("--config", help="config for a freshly built model when no --ckpt (default: base)")
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("--mode", choices=("all", *MODES), default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="score a checkpoint on a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--base", help="directory manifest paths are relative to (default: its folder)")
    p.add_argument("--mode", choices=("streaming", "offline"), default="streaming")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ContractError) as exc:
        print(f"llse {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"llse {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"llse {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
