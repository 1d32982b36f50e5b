import numpy as np
import pytest

from conftest import make_mixtures
from mtms import ConfigError, DimensionError, FormatError
from mtms.config import preset
from mtms.inference import (
    MODES,
    enhance_all_modes,
    enhance_utterance,
    enhance_with_oracle,
    fuse_three,
    masked_magnitude,
    phase_from_ri,
    ri_magnitude,
    stage1_fused_magnitude,
)
from mtms.metrics import si_sdr
from mtms.model import MTMSNet
from mtms.spectral import DEFAULT_FRAME, Waveform, stft
from mtms.targets import fit_compression_stats


class TestMagnitudes:
    def test_masked(self):
        lps = np.full((2, 161), np.log(9.0))
        assert np.allclose(masked_magnitude(lps, np.full((2, 161), 0.5)), 1.5)
        assert np.allclose(masked_magnitude(lps, np.ones((2, 161))), 3.0)
        assert not np.any(masked_magnitude(lps, np.zeros((2, 161))))
        with pytest.raises(DimensionError):
            masked_magnitude(lps, np.ones((3, 161)))

    def test_stage1_average(self):
        ri = np.zeros((1, 322))
        ri[0, :161] = 0.24
        ri[0, 161:] = 0.32  # magnitude 0.4
        assert np.allclose(stage1_fused_magnitude(ri, np.full((1, 161), 0.6)), 0.5)
        assert not np.any(stage1_fused_magnitude(np.zeros((1, 322)), np.zeros((1, 161))))
        m = ri_magnitude(ri)
        assert np.allclose(stage1_fused_magnitude(ri, m), m)
        with pytest.raises(DimensionError):
            stage1_fused_magnitude(np.zeros((1, 320)), np.zeros((1, 161)))

    def test_fuse_three(self, rng):
        assert np.allclose(fuse_three(*(np.full((1, 161), v) for v in (0.3, 0.6, 0.9))), 0.6)
        a, b, c = rng.uniform(size=(3, 4, 161))
        np.testing.assert_allclose(fuse_three(a, b, c), fuse_three(c, a, b), rtol=1e-15)
        np.testing.assert_allclose(fuse_three(a, a, a), a, rtol=1e-15)
        with pytest.raises(DimensionError):
            fuse_three(a, b, c[:2])

    def test_phase(self):
        ri = np.zeros((1, 322))
        ri[0, 161] = 1.0  # bin 0: (0, 1)
        ri[0, 1] = 1.0  # bin 1: (1, 0)
        ri[0, 2] = -1.0  # bin 2: (-1, 0)
        ph = phase_from_ri(ri)
        assert ph[0, 0] == pytest.approx(np.pi / 2)
        assert ph[0, 1] == 0.0 and ph[0, 2] == pytest.approx(np.pi) and ph[0, 3] == 0.0


@pytest.fixture(scope="module")
def toy_setup():
    mixes = make_mixtures(3, 0.0, "train", seed=1, duration=1.0, noise_dur=10.0)
    stats = fit_compression_stats((stft(c), stft(n)) for c, n, _ in mixes)
    return MTMSNet(preset("toy"), seed=0), stats, mixes


class TestEnhance:
    def test_all_modes_contract(self, toy_setup):
        net, stats, mixes = toy_setup
        noisy = mixes[0][2]
        outs = enhance_all_modes(noisy, net, stats)
        assert set(outs) == set(MODES)
        n = DEFAULT_FRAME.n_samples(DEFAULT_FRAME.n_frames(len(noisy)))
        for m, w in outs.items():
            assert len(w) == n and np.all(np.isfinite(w.samples))
            single = enhance_utterance(noisy, net, stats, m)
            np.testing.assert_allclose(single.samples, w.samples, atol=1e-12)

    def test_zero_in_zero_out(self, toy_setup):
        net, stats, _ = toy_setup
        out = enhance_utterance(Waveform(np.zeros(4100)), net, stats, "fused")
        assert len(out) == 4000 and not np.any(out.samples)

    def test_missing_stats(self, toy_setup):
        net, _, mixes = toy_setup
        for mode in ("prisnr", "fused"):
            with pytest.raises(ConfigError):
                enhance_utterance(mixes[0][2], net, None, mode)
        enhance_utterance(mixes[0][2], net, None, "irm")

    def test_format_errors(self, toy_setup):
        net, stats, _ = toy_setup
        with pytest.raises(FormatError):
            enhance_utterance(np.zeros((2, 1000)), net, stats)
        with pytest.raises(FormatError):
            enhance_utterance(Waveform(np.zeros(1000), sample_rate=8000), net, stats)

    def test_geometry_mismatch(self, toy_setup):
        _, stats, mixes = toy_setup
        with pytest.raises(ConfigError):
            enhance_utterance(mixes[0][2], MTMSNet(preset("micro")), stats)

    def test_unknown_mode(self, toy_setup):
        net, stats, mixes = toy_setup
        with pytest.raises(ValueError):
            enhance_utterance(mixes[0][2], net, stats, "bogus")


def test_oracle_targets_beat_noisy():
    for clean, noise, noisy in make_mixtures(3, 0.0, "test", seed=2, duration=2.0, noise_dur=20.0):
        base = si_sdr(clean.samples, noisy.samples)
        for mode in MODES:
            out = enhance_with_oracle(clean, noise, mode)
            L = len(out)
            assert si_sdr(clean.samples[:L], out.samples) > base + 5.0, mode


def test_oracle_ri_mode_reconstructs_clean():
    clean, noise, _ = make_mixtures(1, 0.0, "test", seed=3, duration=1.0, noise_dur=10.0)[0]
    out = enhance_with_oracle(clean, noise, "ri")
    np.testing.assert_allclose(out.samples, clean.samples[:len(out)], atol=1e-9)
