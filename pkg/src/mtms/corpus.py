"""Noisy-mixture construction, noise splits, synthetic corpora and WAV I/O."""

from __future__ import annotations

import json
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import DataError, FormatError
from .spectral import SAMPLE_RATE, Waveform

SEGMENTS = ("train", "val", "test")
TEST_SNRS = (-5.0, 0.0, 5.0, 10.0, 15.0)
TRAIN_SNR_RANGE = (-5.0, 15.0)
NOISE_KINDS = ("white", "pink", "am_white")
PEAK = 0.5


# --- WAV -------------------------------------------------------------------------


def read_wav(path: str | Path) -> Waveform:
    """16-bit PCM mono 16 kHz WAV -> samples in [-1, 1)."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE":
                raise FormatError(f"{path}: compression type {w.getcomptype()!r}, expected PCM")
            if w.getnchannels() != 1:
                raise FormatError(f"{path}: {w.getnchannels()} channels, expected mono (1 channel)")
            if w.getsampwidth() != 2:
                raise FormatError(f"{path}: sample width {8 * w.getsampwidth()} bits, expected 16")
            if w.getframerate() != SAMPLE_RATE:
                raise FormatError(f"{path}: sample rate {w.getframerate()} Hz, expected {SAMPLE_RATE}")
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: not a RIFF/WAVE file ({exc})") from exc
    except FileNotFoundError as exc:
        raise FileNotFoundError(f"{path}: no such file") from exc
    return Waveform(np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0)


def write_wav(path: str | Path, wav: Waveform) -> None:
    """Inverse of :func:`read_wav`; out-of-range samples saturate."""
    pcm = np.clip(np.round(wav.samples * 32768.0), -32768, 32767).astype("<i2")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.tobytes())


# --- mixing --------------------------------------------------------------------------


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def tile_noise(noise: np.ndarray, n: int, offset: int = 0) -> np.ndarray:
    """``n`` samples of ``noise`` read cyclically from ``offset``."""
    if noise.size == 0:
        raise DataError("noise is empty")
    idx = (offset + np.arange(n)) % noise.size
    return noise[idx]


@dataclass(frozen=True)
class Mixture:
    noisy: Waveform
    scaled_noise: Waveform
    gain: float


def mix_at_snr(speech: Waveform, noise: Waveform, snr_db: float) -> Mixture:
    """Scale ``noise`` so the full-utterance SNR equals ``snr_db``; shorter noise is tiled."""
    if not np.isfinite(snr_db):
        raise DataError(f"snr_db must be finite, got {snr_db}")
    ps = power(speech.samples)
    if ps == 0.0:
        raise DataError("speech is silent; SNR undefined")
    n = tile_noise(noise.samples, len(speech)) if len(noise) != len(speech) else noise.samples
    pn = power(n)
    if pn == 0.0:
        raise DataError("noise is silent; SNR undefined")
    gain = np.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0)))
    scaled = n * gain
    return Mixture(Waveform(speech.samples + scaled), Waveform(scaled), float(gain))


def split_noise(noise: Waveform) -> dict[str, Waveform]:
    """First 60% / middle 20% / last 20% of a noise recording."""
    n = len(noise)
    if n < 5:
        raise DataError(f"noise has {n} samples; need at least 5 to split")
    a, b = int(np.floor(0.6 * n)), int(np.floor(0.8 * n))
    s = noise.samples
    return {"train": Waveform(s[:a]), "val": Waveform(s[a:b]), "test": Waveform(s[b:])}


def segment_bounds(n: int) -> dict[str, tuple[int, int]]:
    a, b = int(np.floor(0.6 * n)), int(np.floor(0.8 * n))
    return {"train": (0, a), "val": (a, b), "test": (b, n)}


# --- synthetic corpus ---------------------------------------------------------------


def synth_speech(duration: float, rng: np.random.Generator) -> np.ndarray:
    """Voiced 'syllables': harmonic complexes with gliding f0, formant-like tilt and silences."""
    n = int(round(duration * SAMPLE_RATE))
    out = np.zeros(n)
    t0 = int(rng.uniform(0.05, 0.2) * SAMPLE_RATE)
    while t0 < n:
        seg = int(rng.uniform(0.15, 0.45) * SAMPLE_RATE)
        seg = min(seg, n - t0)
        if seg < 160:
            break
        tt = np.arange(seg) / SAMPLE_RATE
        f_start = rng.uniform(100.0, 300.0)
        f_end = np.clip(f_start * rng.uniform(0.8, 1.25), 100.0, 300.0)
        f0 = np.linspace(f_start, f_end, seg)
        phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
        formants = rng.uniform([300, 900, 2000], [900, 2000, 3200])
        sig = np.zeros(seg)
        for h in range(1, int(4000 // f_start) + 1):
            fh = h * f_start
            amp = sum(np.exp(-0.5 * ((fh - fm) / 150.0) ** 2) for fm in formants) + 0.05 / h
            sig += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
        ramp = min(int(0.03 * SAMPLE_RATE), seg // 2)
        env = np.ones(seg)
        env[:ramp] = np.sin(0.5 * np.pi * np.arange(ramp) / ramp) ** 2
        env[seg - ramp:] = env[:ramp][::-1]
        env *= 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(3.0, 6.0) * tt)
        out[t0:t0 + seg] += sig * env * rng.uniform(0.5, 1.0)
        t0 += seg + int(rng.uniform(0.05, 0.25) * SAMPLE_RATE)
    return out


def synth_noise(kind: str, duration: float, rng: np.random.Generator) -> np.ndarray:
    n = int(round(duration * SAMPLE_RATE))
    white = rng.standard_normal(n)
    if kind == "white":
        return white
    if kind == "pink":
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
        shape = np.ones_like(f)
        shape[1:] = 1.0 / np.sqrt(f[1:])
        shape[0] = 0.0
        return np.fft.irfft(spec * shape, n)
    if kind == "am_white":
        t = np.arange(n) / SAMPLE_RATE
        return white * (1.0 + 0.8 * np.sin(2 * np.pi * rng.uniform(2.0, 8.0) * t + rng.uniform(0, 2 * np.pi)))
    raise DataError(f"unknown noise kind {kind!r}; choose from {NOISE_KINDS}")


def _normalize(x: np.ndarray) -> tuple[np.ndarray, float]:
    peak = float(np.max(np.abs(x)))
    if peak == 0.0:
        return x, 1.0
    scale = PEAK / peak
    return x * scale, scale


@dataclass(frozen=True)
class CorpusSpec:
    n_speech: int = 20
    n_noise: int = 3
    speech_dur: float = 3.0
    noise_dur: float = 30.0
    seed: int = 0


def synth_corpus(root: str | Path, spec: CorpusSpec) -> list[dict]:
    """Write speech/ and noise/ WAVs under ``root``; returns one entry per file.

    Noise kinds cycle white, pink, amplitude-modulated white.  Every file is
    peak-normalized to 0.5 and the applied factor is recorded.
    """
    root = Path(root)
    rng = np.random.default_rng(spec.seed)
    entries = []
    for i in range(spec.n_speech):
        x, scale = _normalize(synth_speech(spec.speech_dur, rng))
        rel = f"speech/speech_{i:04d}.wav"
        _write_checked(root / rel, x)
        entries.append({"path": rel, "kind": "speech", "scale": scale})
    for j in range(spec.n_noise):
        kind = NOISE_KINDS[j % len(NOISE_KINDS)]
        x, scale = _normalize(synth_noise(kind, spec.noise_dur, rng))
        rel = f"noise/noise_{j:03d}_{kind}.wav"
        _write_checked(root / rel, x)
        entries.append({"path": rel, "kind": f"noise:{kind}", "scale": scale})
    return entries


def _write_checked(path: Path, x: np.ndarray):
    try:
        write_wav(path, Waveform(x))
    except OSError as exc:
        raise OSError(f"{path}: cannot write ({exc.strerror or exc})") from exc


# --- manifests -------------------------------------------------------------------------


@dataclass(frozen=True)
class MixingPlan:
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    mixes_per_utterance: int = 1


@dataclass(frozen=True)
class MixtureSpec:
    id: str
    speech: str
    noise: str
    segment: str
    snr_db: float
    seed: int
    split: str

    def __post_init__(self):
        if self.segment not in SEGMENTS or self.split not in SEGMENTS:
            raise DataError(f"{self.id}: invalid segment/split {self.segment}/{self.split}")
        if not np.isfinite(self.snr_db):
            raise DataError(f"{self.id}: snr_db must be finite")


def build_manifest(root: str | Path, plan: MixingPlan = MixingPlan(), seed: int = 0,
                   out: str | Path | None = None) -> list[MixtureSpec]:
    """Assign speech files to train/val/test and draw a noise file and SNR for each mixture.

    Train/val SNRs are uniform on [-5, 15] dB, test SNRs come from the
    5-level grid.  Each split mixes with the matching noise segment.
    """
    root = Path(root)
    speech = sorted(p.relative_to(root).as_posix() for p in (root / "speech").glob("*.wav"))
    noise = sorted(p.relative_to(root).as_posix() for p in (root / "noise").glob("*.wav"))
    missing = [d for d, files in (("speech/", speech), ("noise/", noise)) if not files]
    if missing:
        raise DataError(f"no WAV files under {', '.join(str(root / m) for m in missing)}")
    rng = np.random.default_rng(seed)
    n = len(speech)
    a = int(round(plan.split_fractions[0] * n))
    b = a + int(round(plan.split_fractions[1] * n))
    records = []
    for i, sp in enumerate(speech):
        split = "train" if i < a else ("val" if i < b else "test")
        for r in range(plan.mixes_per_utterance):
            nz = noise[int(rng.integers(len(noise)))]
            if split == "test":
                snr = float(TEST_SNRS[int(rng.integers(len(TEST_SNRS)))])
            else:
                snr = float(rng.uniform(*TRAIN_SNR_RANGE))
            records.append(MixtureSpec(f"{split}_{i:04d}_{r}", sp, nz, split, snr,
                                       int(rng.integers(2**31 - 1)), split))
    if out is not None:
        write_manifest(records, out)
    return records


def write_manifest(records, path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def read_manifest(path: str | Path) -> list[MixtureSpec]:
    path = Path(path)
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(MixtureSpec(**json.loads(line)))
            except (json.JSONDecodeError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: bad manifest record ({exc})") from exc
    return out


def check_files(records, root: str | Path) -> None:
    root = Path(root)
    missing = sorted({p for r in records for p in (r.speech, r.noise) if not (root / p).is_file()})
    if missing:
        raise DataError("missing corpus files: " + ", ".join(str(root / m) for m in missing))


@dataclass
class RealizedMixture:
    spec: MixtureSpec
    clean: Waveform
    noise: Waveform
    noisy: Waveform
    wrap_offset: int = field(default=0)


def realize(record: MixtureSpec, root: str | Path, cache: dict | None = None) -> RealizedMixture:
    """Load speech and the record's noise segment, pick a seeded offset and mix."""
    root = Path(root)
    cache = {} if cache is None else cache

    def load(rel):
        if rel not in cache:
            cache[rel] = read_wav(root / rel)
        return cache[rel]

    speech = load(record.speech)
    seg = split_noise(load(record.noise))[record.segment]
    offset = int(np.random.default_rng(record.seed).integers(len(seg)))
    noise = Waveform(tile_noise(seg.samples, len(speech), offset))
    mix = mix_at_snr(speech, noise, record.snr_db)
    return RealizedMixture(record, speech, mix.scaled_noise, mix.noisy, offset)
