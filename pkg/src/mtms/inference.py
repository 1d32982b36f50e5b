"""Multi-target fusion at inference time and single-target ablation modes.

Modes:

* ``irm``     masked noisy magnitude, noisy phase
* ``ri``      magnitude of the RI estimate, RI phase
* ``prisnr``  MMSE-LSA magnitude from the estimated a-priori SNR, noisy phase
* ``fused``   mean of the three magnitudes, RI phase

The model is causal, so output frame t depends only on input frames up to
t; the frame-synchronous latency is one frame (20 ms) plus the 10 ms hop
needed to complete overlap-add of that frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import ConfigError, DimensionError, FormatError
from .features import noisy_features
from .mmse import enhance_magnitude_mmse
from .model import MTMSNet, to_tk
from .spectral import (
    DEFAULT_FRAME,
    ComplexSpectrogram,
    FrameConfig,
    Waveform,
    istft,
    phase_of,
    spectral_views,
    stft,
)
from .targets import SnrStats, compute_irm, decompress_snr, instantaneous_prior_snr


class Mode(str, Enum):
    IRM = "irm"
    RI = "ri"
    PRISNR = "prisnr"
    FUSED = "fused"


MODES = tuple(m.value for m in Mode)


def _same(*arrays):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) != 1:
        raise DimensionError(f"shape mismatch: {sorted(shapes)}")


def masked_magnitude(noisy_lps: np.ndarray, irm_hat: np.ndarray) -> np.ndarray:
    _same(noisy_lps, irm_hat)
    return np.sqrt(np.exp(noisy_lps)) * irm_hat


def ri_magnitude(ri_hat: np.ndarray) -> np.ndarray:
    k = ri_hat.shape[-1] // 2
    return np.hypot(ri_hat[..., :k], ri_hat[..., k:])


def stage1_fused_magnitude(ri_hat: np.ndarray, masked: np.ndarray) -> np.ndarray:
    if ri_hat.shape[-1] != 2 * masked.shape[-1] or ri_hat.shape[:-1] != masked.shape[:-1]:
        raise DimensionError(f"RI {ri_hat.shape} does not pair with magnitude {masked.shape}")
    return 0.5 * (ri_magnitude(ri_hat) + masked)


def fuse_three(mag_ri: np.ndarray, mag_irm: np.ndarray, mag_prisnr: np.ndarray) -> np.ndarray:
    _same(mag_ri, mag_irm, mag_prisnr)
    return (mag_ri + mag_irm + mag_prisnr) / 3.0


def phase_from_ri(ri_hat: np.ndarray) -> np.ndarray:
    k = ri_hat.shape[-1] // 2
    return phase_of(ri_hat[..., :k] + 1j * ri_hat[..., k:])


@dataclass(frozen=True)
class Estimates:
    """Per-utterance target estimates, all (T, K) except ``ri`` (T, 2K); ``xi`` is linear."""

    irm: np.ndarray
    ri: np.ndarray
    xi: np.ndarray | None


def network_estimates(net: MTMSNet, noisy: Waveform, stats: SnrStats | None,
                      noisy_only: bool | None = None, need_xi: bool = True) -> Estimates:
    feats = noisy_features(noisy)
    if noisy_only is None:
        noisy_only = net.cfg.prisnr_noisy_only
    if need_xi:
        s1, _, xibar = net.forward(feats.frames, feats.lps, feats.ri, training=False, noisy_only=noisy_only)
        xi = decompress_snr(to_tk(xibar), stats)
    else:
        s1 = net.stage1(feats.frames, feats.lps, feats.ri, training=False)
        xi = None
    return Estimates(to_tk(s1.irm_hat), to_tk(s1.ri_hat), xi)


def oracle_estimates(clean: Waveform, noise: Waveform, cfg: FrameConfig = DEFAULT_FRAME) -> Estimates:
    """Ground-truth IRM, clean RI and instantaneous prior SNR in place of network outputs."""
    cs, ns = stft(clean, cfg), stft(noise, cfg)
    return Estimates(compute_irm(cs, ns), spectral_views(cs).ri, instantaneous_prior_snr(cs, ns))


def synthesize(noisy_spec: ComplexSpectrogram, est: Estimates, mode: Mode | str) -> ComplexSpectrogram:
    """Enhanced complex spectrogram for ``mode`` (magnitude and phase recombined)."""
    mode = Mode(mode)
    views = spectral_views(noisy_spec)
    if mode is Mode.IRM:
        mag, phase = masked_magnitude(views.lps, est.irm), views.phase
    elif mode is Mode.RI:
        mag, phase = ri_magnitude(est.ri), phase_from_ri(est.ri)
    elif mode is Mode.PRISNR:
        mag, phase = enhance_magnitude_mmse(views.lps, est.xi), views.phase
    else:
        mag = fuse_three(ri_magnitude(est.ri), masked_magnitude(views.lps, est.irm),
                         enhance_magnitude_mmse(views.lps, est.xi))
        phase = phase_from_ri(est.ri)
    return ComplexSpectrogram(mag * np.exp(1j * phase), noisy_spec.cfg)


def _validate_input(noisy) -> Waveform:
    if isinstance(noisy, Waveform):
        return noisy
    arr = np.asarray(noisy)
    if arr.ndim != 1:
        raise FormatError(f"expected mono audio, got array of shape {arr.shape} (channels must be 1)")
    return Waveform(arr)


def enhance_utterance(noisy: Waveform, net: MTMSNet, stats: SnrStats | None, mode: Mode | str = Mode.FUSED,
                      noisy_only: bool | None = None) -> Waveform:
    """Enhance one utterance; output has the length reconstructable from its frames."""
    mode = Mode(mode)
    noisy = _validate_input(noisy)
    if mode in (Mode.PRISNR, Mode.FUSED) and stats is None:
        raise ConfigError(f"mode {mode.value!r} needs SNR compression statistics")
    if net.cfg.n_bins != DEFAULT_FRAME.n_bins or net.cfg.frame_len != DEFAULT_FRAME.frame_len:
        raise ConfigError(f"model geometry ({net.cfg.frame_len}, {net.cfg.n_bins}) does not match 320/161 STFT")
    spec = stft(noisy)
    if not np.any(noisy.samples):
        return Waveform(np.zeros(DEFAULT_FRAME.n_samples(spec.n_frames)))
    est = network_estimates(net, noisy, stats, noisy_only, need_xi=mode in (Mode.PRISNR, Mode.FUSED))
    return istft(synthesize(spec, est, mode))


def enhance_all_modes(noisy: Waveform, net: MTMSNet, stats: SnrStats,
                      modes=MODES) -> dict[str, Waveform]:
    """One network pass shared by several modes."""
    noisy = _validate_input(noisy)
    spec = stft(noisy)
    if not np.any(noisy.samples):
        z = Waveform(np.zeros(DEFAULT_FRAME.n_samples(spec.n_frames)))
        return {m: z for m in modes}
    est = network_estimates(net, noisy, stats)
    return {Mode(m).value: istft(synthesize(spec, est, m)) for m in modes}


def enhance_with_oracle(clean: Waveform, noise: Waveform, mode: Mode | str = Mode.FUSED) -> Waveform:
    noisy = Waveform(clean.samples + noise.samples)
    return istft(synthesize(stft(noisy), oracle_estimates(clean, noise), mode))
