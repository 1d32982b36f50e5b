"""Training targets: IRM, clean RI and CDF-compressed a-priori SNR."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.special import ndtr, ndtri

from . import DataError, DimensionError, FormatError
from .spectral import EPS_FLOOR, ComplexSpectrogram

SIGMA_MIN_DB = 1e-3
CLAMP_DELTA = 1e-7
STATS_VERSION = 1


@dataclass(frozen=True)
class SnrStats:
    """Per-bin mean/std of the instantaneous prior SNR in dB."""

    mu: np.ndarray
    sigma: np.ndarray
    n_frames: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.shape != sigma.shape or mu.ndim != 1:
            raise DimensionError(f"mu/sigma shape mismatch: {mu.shape} vs {sigma.shape}")
        if np.any(sigma <= 0):
            raise DataError("sigma must be strictly positive")
        if self.n_frames < 2:
            raise DataError("statistics need at least 2 frames")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_bins(self) -> int:
        return self.mu.shape[0]

    def to_bytes(self) -> bytes:
        k = self.n_bins
        return (
            struct.pack("<II", STATS_VERSION, k)
            + self.mu.astype("<f8").tobytes()
            + self.sigma.astype("<f8").tobytes()
            + struct.pack("<Q", self.n_frames)
        )

    @classmethod
    def from_bytes(cls, buf: bytes, offset: int = 0) -> tuple["SnrStats", int]:
        """Parse a stats record at ``offset``; returns the stats and the offset after it."""
        try:
            version, k = struct.unpack_from("<II", buf, offset)
            if version != STATS_VERSION:
                raise FormatError(f"unsupported stats version {version}")
            offset += 8
            mu = np.frombuffer(buf, dtype="<f8", count=k, offset=offset).astype(np.float64)
            offset += 8 * k
            sigma = np.frombuffer(buf, dtype="<f8", count=k, offset=offset).astype(np.float64)
            offset += 8 * k
            (n,) = struct.unpack_from("<Q", buf, offset)
        except (struct.error, ValueError) as exc:
            raise FormatError(f"truncated stats record: {exc}") from exc
        return cls(mu, sigma, int(n)), offset + 8


def _check_pair(clean: ComplexSpectrogram, noise: ComplexSpectrogram):
    if clean.data.shape != noise.data.shape:
        raise DimensionError(f"clean {clean.data.shape} and noise {noise.data.shape} differ")


def compute_irm(clean: ComplexSpectrogram, noise: ComplexSpectrogram) -> np.ndarray:
    _check_pair(clean, noise)
    px = np.abs(clean.data) ** 2
    pn = np.abs(noise.data) ** 2
    return np.sqrt(px / (px + pn + EPS_FLOOR))


def instantaneous_prior_snr(clean: ComplexSpectrogram, noise: ComplexSpectrogram) -> np.ndarray:
    _check_pair(clean, noise)
    return np.abs(clean.data) ** 2 / (np.abs(noise.data) ** 2 + EPS_FLOOR)


def _to_db(xi: np.ndarray) -> np.ndarray:
    return 10.0 * np.log10(np.maximum(xi, EPS_FLOOR))


def fit_compression_stats(corpus: Iterable[tuple[ComplexSpectrogram, ComplexSpectrogram]]) -> SnrStats:
    """Per-bin sample mean and std (ddof=1) of the prior SNR in dB over every frame of ``corpus``."""
    # running sums in float64; accumulated per utterance to avoid holding the whole corpus
    n = 0
    s1 = s2 = None
    shift = None
    for clean, noise in corpus:
        db = _to_db(instantaneous_prior_snr(clean, noise))
        if shift is None:
            shift = db[0].copy()
            s1 = np.zeros_like(shift)
            s2 = np.zeros_like(shift)
        d = db - shift
        s1 += d.sum(axis=0)
        s2 += (d**2).sum(axis=0)
        n += db.shape[0]
    if n < 2:
        raise DataError(f"need at least 2 frames to fit statistics, got {n}")
    mean_d = s1 / n
    var = np.maximum((s2 - n * mean_d**2) / (n - 1), 0.0)
    return SnrStats(shift + mean_d, np.maximum(np.sqrt(var), SIGMA_MIN_DB), n)


def compress_snr(xi: np.ndarray, stats: SnrStats) -> np.ndarray:
    return ndtr((_to_db(xi) - stats.mu) / stats.sigma)


def decompress_snr(xibar: np.ndarray, stats: SnrStats) -> np.ndarray:
    z = ndtri(np.clip(xibar, CLAMP_DELTA, 1.0 - CLAMP_DELTA))
    return 10.0 ** ((stats.mu + stats.sigma * z) / 10.0)
