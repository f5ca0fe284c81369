"""WAV I/O, synthetic speech/noise, SNR mixing and dataset assembly."""
from __future__ import annotations

import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ContractError, DataError, DimensionError, WavParseError

SAMPLE_RATE = 16000
PCM_SCALE = 32768.0
NOISE_KINDS = ("white", "pink", "babble-proxy")
SPLITS = ("train", "val", "test")


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1:
            raise DimensionError(f"mono audio expected, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ContractError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ContractError("audio contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


def read_wav(path) -> AudioBuffer:
    """Read a 16-bit PCM mono WAV file, scaling samples by 1/32768."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, frames = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            if w.getcomptype() != "NONE":
                raise WavParseError(f"{path}: compressed WAV ({w.getcomptype()}) is not supported")
            data = w.readframes(frames)
    except WavParseError:
        raise
    except (wave.Error, EOFError, ValueError) as exc:
        raise WavParseError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if width != 2:
        raise WavParseError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if channels != 1:
        raise WavParseError(f"{path}: expected mono, got {channels} channels")
    if len(data) != frames * 2:
        raise WavParseError(f"{path}: data chunk truncated ({len(data)} of {frames * 2} bytes)")
    pcm = np.frombuffer(data, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float32) / PCM_SCALE, rate)


def to_pcm16(samples) -> np.ndarray:
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0 - 1.0 / PCM_SCALE)
    return np.round(clipped * PCM_SCALE).astype("<i2")


def write_wav(path, audio: AudioBuffer) -> None:
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(audio.sample_rate))
        w.writeframes(to_pcm16(audio.samples).tobytes())


def power(x) -> float:
    x = np.asarray(x, dtype=np.float64)
    return float(np.mean(x * x))


class Mix(NamedTuple):
    noisy: np.ndarray
    clean: np.ndarray
    gain: float


def mix_at_snr(clean, noise, snr_db: float, headroom: float = 0.99) -> Mix:
    """``clean + g * noise`` with ``g`` chosen for the requested SNR.

    If the mixture would clip, noisy and clean are scaled down together by
    the same factor, which leaves the SNR unchanged. ``gain`` is ``g``.
    """
    clean = np.asarray(clean, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if clean.shape != noise.shape:
        raise DimensionError(f"clean {clean.shape} and noise {noise.shape} differ in length")
    p_noise = power(noise)
    if p_noise <= 0.0:
        raise ContractError("noise has zero power")
    gain = float(np.sqrt(power(clean) / (p_noise * 10.0 ** (snr_db / 10.0))))
    noisy = clean + gain * noise
    peak = np.max(np.abs(noisy)) if noisy.size else 0.0
    if peak > 1.0:
        scale = headroom / peak
        noisy, clean = noisy * scale, clean * scale
    return Mix(noisy, clean, gain)


def measured_snr(clean, noisy) -> float:
    clean = np.asarray(clean, dtype=np.float64)
    return 10.0 * np.log10(power(clean) / power(np.asarray(noisy, dtype=np.float64) - clean))


def _smooth_walk(rng, n: int, step_every: int, sigma: float) -> np.ndarray:
    knots = np.cumsum(rng.normal(0.0, sigma, size=n // step_every + 2))
    return np.interp(np.arange(n) / step_every, np.arange(len(knots)), knots)


def synth_clean(duration: float, seed: int, sample_rate: int = SAMPLE_RATE) -> AudioBuffer:
    """Voiced-speech proxy: harmonic series with drifting f0 in [80, 300] Hz.

    Harmonic amplitudes fall off as 1/h with a random spectral tilt, and a
    syllable-like envelope of 80-300 ms bursts separated by short pauses
    gates the signal.
    """
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    base = rng.uniform(np.log(100.0), np.log(250.0))
    log_f0 = np.clip(base + _smooth_walk(rng, n, sample_rate // 50, 0.04), np.log(80.0), np.log(300.0))
    f0 = np.exp(log_f0)
    phase = 2.0 * np.pi * np.cumsum(f0) / sample_rate
    n_harm = int(min(30, (sample_rate / 2) // 300))
    tilt = rng.uniform(0.8, 1.4)
    signal = np.zeros(n)
    for h in range(1, n_harm + 1):
        amp = h ** -tilt
        # harmonics above Nyquist are silenced per-sample
        signal += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi)) * (h * f0 < sample_rate / 2)

    envelope = np.zeros(n)
    pos = int(rng.uniform(0.0, 0.1) * sample_rate)
    while pos < n:
        length = int(rng.uniform(0.08, 0.3) * sample_rate)
        seg = np.sin(np.linspace(0.0, np.pi, length)) ** 2 * rng.uniform(0.4, 1.0)
        end = min(n, pos + length)
        envelope[pos:end] = seg[: end - pos]
        pos = end + int(rng.uniform(0.02, 0.15) * sample_rate)
    signal *= envelope
    peak = np.max(np.abs(signal))
    if peak > 0:
        signal *= 0.5 / peak
    return AudioBuffer(signal.astype(np.float32), sample_rate)


def synth_noise(duration: float, kind: str, seed: int, sample_rate: int = SAMPLE_RATE) -> AudioBuffer:
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    if kind == "white":
        x = rng.standard_normal(n)
    elif kind == "pink":
        spectrum = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
        spectrum[1:] /= np.sqrt(freqs[1:])
        spectrum[0] = 0.0
        x = np.fft.irfft(spectrum, n)
    elif kind == "babble-proxy":
        x = np.zeros(n)
        for talker in range(6):
            x += synth_clean(duration, int(rng.integers(2**31)), sample_rate).samples
    else:
        raise ContractError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    peak = np.max(np.abs(x))
    return AudioBuffer((0.5 * x / peak if peak > 0 else x).astype(np.float32), sample_rate)


def segment(samples, segment_samples: int, chunk: int) -> list[np.ndarray]:
    """Cut into consecutive segments whose lengths are multiples of ``chunk``.

    Full segments have ``segment_samples`` rounded down to a chunk multiple;
    the tail is zero-padded up to the next chunk multiple.
    """
    samples = np.asarray(samples)
    seg = (segment_samples // chunk) * chunk
    if seg <= 0:
        raise ContractError(f"segment of {segment_samples} samples is shorter than one chunk ({chunk})")
    out = []
    for start in range(0, len(samples), seg):
        piece = samples[start : start + seg]
        padded = -(-len(piece) // chunk) * chunk
        if padded != len(piece):
            piece = np.concatenate([piece, np.zeros(padded - len(piece), dtype=piece.dtype)])
        out.append(piece)
    return out


@dataclass
class ManifestEntry:
    clean: str
    noisy: str
    snr_db: float
    seed: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    sample_rate: int = SAMPLE_RATE
    split: str = "train"

    def __len__(self) -> int:
        return len(self.entries)

    def to_text(self) -> str:
        lines = [f"# sample_rate={self.sample_rate} split={self.split}"]
        lines += [f"{e.clean},{e.noisy},{e.snr_db:g},{e.seed}" for e in self.entries]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> DatasetManifest:
        manifest = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    key, _, value = token.partition("=")
                    if key == "sample_rate":
                        manifest.sample_rate = int(value)
                    elif key == "split":
                        manifest.split = value
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DataError(f"manifest line {lineno}: expected clean,noisy,snr_db,seed")
            try:
                manifest.entries.append(ManifestEntry(parts[0], parts[1], float(parts[2]), int(parts[3])))
            except ValueError as exc:
                raise DataError(f"manifest line {lineno}: {exc}") from exc
        paths = [e.clean for e in manifest.entries] + [e.noisy for e in manifest.entries]
        if len(set(paths)) != len(paths):
            raise DataError("manifest paths must be unique")
        return manifest

    def save(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> DatasetManifest:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read manifest {path}: {exc}") from exc
        return cls.from_text(text)

    def resolve(self, base) -> list[tuple[Path, Path]]:
        base = Path(base)
        return [(base / e.clean, base / e.noisy) for e in self.entries]


def synth_pair(duration: float, snr_db: float, seed: int, kind: str = "white",
               sample_rate: int = SAMPLE_RATE) -> Mix:
    clean = synth_clean(duration, seed, sample_rate)
    noise = synth_noise(duration, kind, seed + 1_000_003, sample_rate)
    return mix_at_snr(clean.samples, noise.samples, snr_db)


def make_dataset(out_dir, minutes: float, snrs, seed: int, kind: str = "white",
                 utterance_s: float = 4.0, val_fraction: float = 0.1, test_fraction: float = 0.1,
                 sample_rate: int = SAMPLE_RATE) -> dict[str, DatasetManifest]:
    """Synthesise paired clean/noisy WAVs and per-split manifests.

    Writes ``{split}.csv`` manifests with paths relative to ``out_dir``.
    SNRs cycle through ``snrs``; each utterance gets its own derived seed.
    """
    snrs = list(snrs)
    if not snrs:
        raise ContractError("at least one SNR is required")
    if kind not in NOISE_KINDS:
        raise ContractError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    total = max(1, int(round(minutes * 60.0 / utterance_s)))
    n_val = int(round(total * val_fraction))
    n_test = int(round(total * test_fraction))
    n_train = max(1, total - n_val - n_test)
    counts = {"train": n_train, "val": n_val, "test": n_test}
    seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=sum(counts.values()))
    manifests = {}
    index = 0
    for split in SPLITS:
        manifest = DatasetManifest(sample_rate=sample_rate, split=split)
        (out / split).mkdir(exist_ok=True)
        for _ in range(counts[split]):
            item_seed = int(seeds[index])
            snr = float(snrs[index % len(snrs)])
            mix = synth_pair(utterance_s, snr, item_seed, kind, sample_rate)
            clean_rel, noisy_rel = f"{split}/{index:05d}_clean.wav", f"{split}/{index:05d}_noisy.wav"
            write_wav(out / clean_rel, AudioBuffer(mix.clean, sample_rate))
            write_wav(out / noisy_rel, AudioBuffer(mix.noisy, sample_rate))
            manifest.entries.append(ManifestEntry(clean_rel, noisy_rel, snr, item_seed))
            index += 1
        manifest.save(out / f"{split}.csv")
        manifests[split] = manifest
    return manifests


def load_pairs(manifest: DatasetManifest, base) -> list[tuple[np.ndarray, np.ndarray]]:
    """(noisy, clean) sample arrays for every manifest entry."""
    pairs = []
    for clean_path, noisy_path in manifest.resolve(base):
        clean, noisy = read_wav(clean_path), read_wav(noisy_path)
        if len(clean) != len(noisy):
            raise DataError(f"{clean_path} and {noisy_path} differ in length")
        if clean.sample_rate != manifest.sample_rate or noisy.sample_rate != manifest.sample_rate:
            raise DataError(f"{clean_path}: sample rate differs from manifest ({manifest.sample_rate})")
        pairs.append((noisy.samples, clean.samples))
    return pairs
