"""Framing, STFT/iSTFT and spectral views at the fixed 16 kHz / 20 ms / 10 ms setting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import get_window

from . import DimensionError, FormatError, LengthError

SAMPLE_RATE = 16000
EPS_FLOOR = 1e-12


@dataclass(frozen=True)
class FrameConfig:
    sample_rate: int = SAMPLE_RATE
    frame_len: int = 320
    hop: int = 160
    fft_size: int = 320
    window: str = "hamming"

    def __post_init__(self):
        if self.frame_len != self.fft_size:
            raise FormatError(f"frame_len ({self.frame_len}) must equal fft_size ({self.fft_size})")
        if self.frame_len % 2 or self.hop != self.frame_len // 2:
            raise FormatError(f"hop ({self.hop}) must be frame_len/2 ({self.frame_len / 2})")
        if self.sample_rate != SAMPLE_RATE:
            raise FormatError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_values(self) -> np.ndarray:
        # periodic window: w[n] + w[n + N/2] is constant at 50% overlap
        return get_window(self.window, self.frame_len, fftbins=True)

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_len:
            return 0
        return (n_samples - self.frame_len) // self.hop + 1

    def n_samples(self, n_frames: int) -> int:
        """Length reconstructable from ``n_frames`` frames."""
        return (n_frames - 1) * self.hop + self.frame_len if n_frames > 0 else 0


DEFAULT_FRAME = FrameConfig()


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise FormatError(f"waveform must be mono (1-D), got shape {s.shape}")
        if self.sample_rate != SAMPLE_RATE:
            raise FormatError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        if not np.all(np.isfinite(s)):
            raise FormatError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", s)

    def __len__(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class ComplexSpectrogram:
    """T x K one-sided spectrogram."""

    data: np.ndarray
    cfg: FrameConfig = field(default=DEFAULT_FRAME)

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.complex128)
        if d.ndim != 2 or d.shape[1] != self.cfg.n_bins:
            raise DimensionError(f"expected T x {self.cfg.n_bins} spectrogram, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise DimensionError("spectrogram contains non-finite entries")
        object.__setattr__(self, "data", d)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


def frame_signal(wave: Waveform, cfg: FrameConfig = DEFAULT_FRAME) -> np.ndarray:
    """Left-aligned windowed frames, shape (T, frame_len). Trailing partial frame is dropped."""
    x = wave.samples
    if x.shape[0] < cfg.frame_len:
        raise LengthError(f"signal has {x.shape[0]} samples, need at least {cfg.frame_len}")
    n = cfg.n_frames(x.shape[0])
    idx = np.arange(n)[:, None] * cfg.hop + np.arange(cfg.frame_len)[None, :]
    return x[idx] * cfg.window_values()[None, :]


def stft(wave: Waveform, cfg: FrameConfig = DEFAULT_FRAME) -> ComplexSpectrogram:
    frames = frame_signal(wave, cfg)
    return ComplexSpectrogram(np.fft.rfft(frames, n=cfg.fft_size, axis=1), cfg)


def istft(spec: ComplexSpectrogram) -> Waveform:
    """Overlap-add of inverse DFT frames, normalized by the summed analysis window.

    The analysis window never reaches zero, so every sample of the
    reconstructable range is recovered exactly from an unmodified spectrogram.
    """
    cfg = spec.cfg
    t = spec.n_frames
    if t == 0:
        return Waveform(np.zeros(0))
    frames = np.fft.irfft(spec.data, n=cfg.fft_size, axis=1)[:, : cfg.frame_len]
    n = cfg.n_samples(t)
    out = np.zeros(n)
    norm = np.zeros(n)
    w = cfg.window_values()
    for i in range(t):
        s = i * cfg.hop
        out[s : s + cfg.frame_len] += frames[i]
        norm[s : s + cfg.frame_len] += w
    return Waveform(out / norm)


@dataclass(frozen=True)
class SpectralViews:
    lps: np.ndarray
    mag: np.ndarray
    phase: np.ndarray
    ri: np.ndarray


def phase_of(data: np.ndarray) -> np.ndarray:
    # np.angle(0) is already 0; atan2 maps -0.0 imaginary parts to -pi, fold those onto +pi
    ph = np.angle(data)
    return np.where(ph <= -np.pi, np.pi, ph)


def spectral_views(spec: ComplexSpectrogram) -> SpectralViews:
    d = spec.data
    mag = np.abs(d)
    return SpectralViews(
        lps=np.log(mag**2 + EPS_FLOOR),
        mag=mag,
        phase=phase_of(d),
        ri=np.concatenate([d.real, d.imag], axis=1),
    )


def ri_to_complex(ri: np.ndarray) -> np.ndarray:
    k = ri.shape[-1] // 2
    if ri.shape[-1] != 2 * k:
        raise DimensionError(f"RI feature width must be even, got {ri.shape[-1]}")
    return ri[..., :k] + 1j * ri[..., k:]
