"""Per-utterance model inputs and supervision targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import DimensionError
from .spectral import DEFAULT_FRAME, FrameConfig, Waveform, frame_signal, spectral_views, stft
from .targets import SnrStats, compress_snr, compute_irm, instantaneous_prior_snr


@dataclass(frozen=True)
class FeatureBundle:
    """Arrays are (T, C): frames 320, lps 161, ri 322; targets irm 161, clean_ri 322, xibar 161."""

    frames: np.ndarray
    lps: np.ndarray
    ri: np.ndarray
    irm: np.ndarray | None = None
    clean_ri: np.ndarray | None = None
    xibar: np.ndarray | None = None

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def has_targets(self) -> bool:
        return self.irm is not None


def noisy_features(noisy: Waveform, cfg: FrameConfig = DEFAULT_FRAME) -> FeatureBundle:
    views = spectral_views(stft(noisy, cfg))
    return FeatureBundle(frame_signal(noisy, cfg), views.lps, views.ri)


def make_bundle(clean: Waveform, noise: Waveform, stats: SnrStats,
                cfg: FrameConfig = DEFAULT_FRAME) -> FeatureBundle:
    """Features of ``clean + noise`` with targets derived from the separate components."""
    if len(clean) != len(noise):
        raise DimensionError(f"clean ({len(clean)}) and noise ({len(noise)}) lengths differ")
    noisy = Waveform(clean.samples + noise.samples)
    base = noisy_features(noisy, cfg)
    cs, ns = stft(clean, cfg), stft(noise, cfg)
    clean_views = spectral_views(cs)
    return FeatureBundle(
        base.frames, base.lps, base.ri,
        irm=compute_irm(cs, ns),
        clean_ri=clean_views.ri,
        xibar=compress_snr(instantaneous_prior_snr(cs, ns), stats),
    )


def concat_bundles(bundles) -> FeatureBundle:
    bundles = list(bundles)
    cat = lambda name: np.concatenate([getattr(b, name) for b in bundles], axis=0)
    return FeatureBundle(cat("frames"), cat("lps"), cat("ri"), cat("irm"), cat("clean_ri"), cat("xibar"))
