"""Objective metrics: STOI, SI-SDR and segmental SNR."""

from __future__ import annotations

import numpy as np
from scipy.signal import resample_poly

from . import DataError, DimensionError
from .spectral import SAMPLE_RATE

SI_SDR_CAP = 60.0
SEG_SNR_RANGE = (-10.0, 35.0)
SEG_SILENCE_DB = 40.0
_EPS = np.finfo(np.float64).eps

# STOI constants of the reference algorithm
STOI_FS = 10000
STOI_FRAME = 256
STOI_NFFT = 512
STOI_BANDS = 15
STOI_MINFREQ = 150.0
STOI_SEGMENT = 30
STOI_BETA = -15.0
STOI_DYN_RANGE = 40.0


def _pair(clean, processed) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(getattr(clean, "samples", clean), dtype=np.float64)
    y = np.asarray(getattr(processed, "samples", processed), dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError(f"signals must be 1-D of equal length, got {x.shape} and {y.shape}")
    return x, y


def si_sdr(clean, processed) -> float:
    """Scale-invariant SDR in dB, limited to +-60 dB."""
    x, y = _pair(clean, processed)
    xx = float(np.dot(x, x))
    if xx == 0.0:
        raise DataError("clean signal is all zeros")
    target = (np.dot(y, x) / xx) * x
    err = y - target
    num, den = float(np.dot(target, target)), float(np.dot(err, err))
    if num == 0.0:
        return -SI_SDR_CAP
    if den == 0.0:
        return SI_SDR_CAP
    return float(np.clip(10.0 * np.log10(num / den), -SI_SDR_CAP, SI_SDR_CAP))


def segmental_snr(clean, processed, frame: int = 320, hop: int = 160) -> float:
    """Mean per-frame SNR, each clamped to [-10, 35] dB.

    Frames of the clean signal more than 40 dB below its loudest frame are
    treated as silent and skipped.
    """
    x, y = _pair(clean, processed)
    if x.size < frame:
        raise DataError(f"signals shorter than one frame ({frame} samples)")
    n = (x.size - frame) // hop + 1
    idx = np.arange(n)[:, None] * hop + np.arange(frame)[None, :]
    ex = np.sum(x[idx] ** 2, axis=1)
    ee = np.sum((x[idx] - y[idx]) ** 2, axis=1)
    if ex.max() <= 0:
        raise DataError("clean signal has no voiced frames")
    voiced = ex > ex.max() * 10 ** (-SEG_SILENCE_DB / 10)
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(ex[voiced] / ee[voiced])
    return float(np.mean(np.clip(snr, *SEG_SNR_RANGE)))


# --- STOI ----------------------------------------------------------------------------


def _third_octave_matrix() -> np.ndarray:
    f = np.linspace(0, STOI_FS, STOI_NFFT + 1)[: STOI_NFFT // 2 + 1]
    k = np.arange(STOI_BANDS, dtype=float)
    lo = STOI_MINFREQ * 2.0 ** ((2 * k - 1) / 6)
    hi = STOI_MINFREQ * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((STOI_BANDS, f.size))
    for i in range(STOI_BANDS):
        a = int(np.argmin((f - lo[i]) ** 2))
        b = int(np.argmin((f - hi[i]) ** 2))
        obm[i, a:b] = 1.0
    return obm


_OBM = _third_octave_matrix()


def _hann(n: int) -> np.ndarray:
    return np.hanning(n + 2)[1:-1]


def _frames(x: np.ndarray, n: int, hop: int) -> np.ndarray:
    starts = range(0, len(x) - n, hop)
    return np.array([x[i:i + n] for i in starts]).reshape(-1, n)


def _drop_silent(x: np.ndarray, y: np.ndarray, hop: int) -> tuple[np.ndarray, np.ndarray]:
    w = _hann(STOI_FRAME)
    xf = _frames(x, STOI_FRAME, hop) * w
    yf = _frames(y, STOI_FRAME, hop) * w
    if xf.shape[0] == 0:
        raise DataError("signal too short for STOI")
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + _EPS)
    keep = energy > energy.max() - STOI_DYN_RANGE
    xf, yf = xf[keep], yf[keep]

    def ola(frames):
        out = np.zeros((len(frames) - 1) * hop + STOI_FRAME)
        for i, fr in enumerate(frames):
            out[i * hop:i * hop + STOI_FRAME] += fr
        return out

    return ola(xf), ola(yf)


def stoi(clean, processed, fs: int = SAMPLE_RATE) -> float:
    """Short-time objective intelligibility of ``processed`` against ``clean``.

    Resamples to 10 kHz, removes silent frames, and averages clipped
    correlations of 384 ms one-third-octave band envelopes.
    """
    x, y = _pair(clean, processed)
    if not np.any(x):
        raise DataError("clean signal is silent")
    if fs != STOI_FS:
        g = np.gcd(fs, STOI_FS)
        x = resample_poly(x, STOI_FS // g, fs // g)
        y = resample_poly(y, STOI_FS // g, fs // g)
    x, y = _drop_silent(x, y, STOI_FRAME // 2)
    w = _hann(STOI_FRAME)
    xs = np.fft.rfft(_frames(x, STOI_FRAME, STOI_FRAME // 2) * w, n=STOI_NFFT, axis=1)
    ys = np.fft.rfft(_frames(y, STOI_FRAME, STOI_FRAME // 2) * w, n=STOI_NFFT, axis=1)
    if xs.shape[0] < STOI_SEGMENT:
        raise DataError(f"not enough speech frames for STOI ({xs.shape[0]} < {STOI_SEGMENT})")
    x_tob = np.sqrt(_OBM @ (np.abs(xs) ** 2).T)
    y_tob = np.sqrt(_OBM @ (np.abs(ys) ** 2).T)
    idx = np.arange(STOI_SEGMENT, x_tob.shape[1] + 1)
    xseg = np.stack([x_tob[:, m - STOI_SEGMENT:m] for m in idx])
    yseg = np.stack([y_tob[:, m - STOI_SEGMENT:m] for m in idx])
    scale = np.linalg.norm(xseg, axis=2, keepdims=True) / (np.linalg.norm(yseg, axis=2, keepdims=True) + _EPS)
    yp = np.minimum(yseg * scale, xseg * (1 + 10 ** (-STOI_BETA / 20)))
    yp = yp - yp.mean(axis=2, keepdims=True)
    xc = xseg - xseg.mean(axis=2, keepdims=True)
    yp /= np.linalg.norm(yp, axis=2, keepdims=True) + _EPS
    xc /= np.linalg.norm(xc, axis=2, keepdims=True) + _EPS
    return float(np.sum(yp * xc) / (xc.shape[0] * xc.shape[1]))
