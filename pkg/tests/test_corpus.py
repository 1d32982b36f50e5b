import json
import wave

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.signal import welch

from mtms import DataError, FormatError
from mtms.corpus import (
    TEST_SNRS,
    CorpusSpec,
    MixingPlan,
    build_manifest,
    check_files,
    mix_at_snr,
    power,
    read_manifest,
    read_wav,
    realize,
    segment_bounds,
    split_noise,
    synth_corpus,
    synth_noise,
    tile_noise,
    write_wav,
)
from mtms.spectral import Waveform


class TestMix:
    def test_equal_power_zero_db(self, rng):
        s = Waveform(rng.normal(size=1000))
        n = Waveform(s.samples[::-1].copy())
        m = mix_at_snr(s, n, 0.0)
        assert m.gain == pytest.approx(1.0, abs=1e-12)

    def test_plus_ten_db(self, rng):
        s, n = Waveform(rng.normal(size=2000)), Waveform(rng.normal(size=2000))
        m = mix_at_snr(s, n, 10.0)
        assert power(m.scaled_noise.samples) == pytest.approx(power(s.samples) / 10, rel=1e-12)

    @given(st.floats(-20, 30), st.integers(0, 2**31 - 1))
    def test_achieved_snr_and_additivity(self, snr, seed):
        r = np.random.default_rng(seed)
        s = Waveform(r.normal(size=500))
        m = mix_at_snr(s, Waveform(r.normal(size=321)), snr)
        got = 10 * np.log10(power(s.samples) / power(m.scaled_noise.samples))
        assert abs(got - snr) < 1e-9
        assert np.array_equal(m.noisy.samples, s.samples + m.scaled_noise.samples)

    def test_silent_inputs(self, rng):
        with pytest.raises(DataError):
            mix_at_snr(Waveform(np.zeros(10)), Waveform(rng.normal(size=10)), 0.0)
        with pytest.raises(DataError):
            mix_at_snr(Waveform(rng.normal(size=10)), Waveform(np.zeros(10)), 0.0)

    def test_tiling(self):
        np.testing.assert_array_equal(tile_noise(np.arange(4.0), 6, 3), [3, 0, 1, 2, 3, 0])


class TestSplit:
    @pytest.mark.parametrize("L, bounds", [(1000, [(0, 600), (600, 800), (800, 1000)]),
                                           (10, [(0, 6), (6, 8), (8, 10)])])
    def test_bounds(self, L, bounds):
        b = segment_bounds(L)
        assert [b["train"], b["val"], b["test"]] == bounds
        parts = split_noise(Waveform(np.arange(float(L))))
        assert [len(parts[k]) for k in ("train", "val", "test")] == [e - s for s, e in bounds]

    @given(st.integers(5, 5000))
    def test_exhaustive(self, L):
        x = np.arange(float(L))
        p = split_noise(Waveform(x))
        np.testing.assert_array_equal(np.concatenate([p["train"].samples, p["val"].samples, p["test"].samples]), x)

    def test_too_short(self):
        with pytest.raises(DataError):
            split_noise(Waveform(np.ones(4)))


class TestWav:
    def test_round_trip(self, tmp_path, rng):
        x = np.round(rng.uniform(-1, 1, 500) * 32768).clip(-32768, 32767) / 32768
        write_wav(tmp_path / "a.wav", Waveform(x))
        np.testing.assert_array_equal(read_wav(tmp_path / "a.wav").samples, x)

    def test_saturation(self, tmp_path):
        write_wav(tmp_path / "s.wav", Waveform(np.array([2.0, -2.0])))
        np.testing.assert_array_equal(read_wav(tmp_path / "s.wav").samples, [32767 / 32768, -1.0])

    def _raw(self, path, channels, rate, width=2):
        with wave.open(str(path), "wb") as w:
            w.setnchannels(channels)
            w.setsampwidth(width)
            w.setframerate(rate)
            w.writeframes(b"\x00" * (width * channels * 10))

    def test_sample_rate_error(self, tmp_path):
        self._raw(tmp_path / "r.wav", 1, 44100)
        with pytest.raises(FormatError, match="sample rate"):
            read_wav(tmp_path / "r.wav")

    def test_channels_error(self, tmp_path):
        self._raw(tmp_path / "c.wav", 2, 16000)
        with pytest.raises(FormatError, match="channels"):
            read_wav(tmp_path / "c.wav")

    def test_width_error(self, tmp_path):
        self._raw(tmp_path / "w.wav", 1, 16000, width=1)
        with pytest.raises(FormatError, match="sample width"):
            read_wav(tmp_path / "w.wav")

    def test_not_wave(self, tmp_path):
        (tmp_path / "x.wav").write_bytes(b"hello world, not riff")
        with pytest.raises(FormatError):
            read_wav(tmp_path / "x.wav")


class TestSynth:
    def test_pink_slope(self):
        x = synth_noise("pink", 30.0, np.random.default_rng(0))
        f, p = welch(x, fs=16000, nperseg=4096)
        band = (f >= 100) & (f <= 4000)
        slope = np.polyfit(np.log2(f[band]), 10 * np.log10(p[band]), 1)[0]
        assert abs(slope - (-3.0103)) < 1.0

    def test_white_is_flat(self):
        x = synth_noise("white", 10.0, np.random.default_rng(0))
        f, p = welch(x, fs=16000, nperseg=1024)
        band = (f >= 100) & (f <= 7000)
        assert abs(np.polyfit(np.log2(f[band]), 10 * np.log10(p[band]), 1)[0]) < 0.3

    def test_unknown_kind(self):
        with pytest.raises(DataError):
            synth_noise("brown", 1.0, np.random.default_rng(0))

    def test_corpus_counts_and_determinism(self, tmp_path):
        spec = CorpusSpec(4, 2, 1.0, 2.0, seed=5)
        a = synth_corpus(tmp_path / "a", spec)
        b = synth_corpus(tmp_path / "b", spec)
        assert len(a) == 6 and a == b
        for e in a:
            assert (tmp_path / "a" / e["path"]).read_bytes() == (tmp_path / "b" / e["path"]).read_bytes()
            x = read_wav(tmp_path / "a" / e["path"]).samples
            assert np.max(np.abs(x)) <= 0.5 + 1 / 32768 and np.all(np.abs(x) < 1)


class TestManifest:
    @pytest.fixture
    def corpus(self, tmp_path):
        synth_corpus(tmp_path, CorpusSpec(20, 3, 0.5, 2.0, seed=1))
        return tmp_path

    def test_split_and_snr_rules(self, corpus):
        recs = build_manifest(corpus, MixingPlan(mixes_per_utterance=3), seed=2)
        assert len(recs) == 60
        by = {s: [r for r in recs if r.split == s] for s in ("train", "val", "test")}
        assert [len(by[s]) for s in ("train", "val", "test")] == [36, 12, 12]
        assert all(r.snr_db in TEST_SNRS for r in by["test"])
        assert all(-5 <= r.snr_db <= 15 for r in by["train"] + by["val"])
        assert all(r.segment == r.split for r in recs)
        assert not {r.speech for r in by["train"]} & {r.speech for r in by["test"]}

    def test_same_seed_same_bytes(self, corpus):
        build_manifest(corpus, seed=4, out=corpus / "m1.jsonl")
        build_manifest(corpus, seed=4, out=corpus / "m2.jsonl")
        assert (corpus / "m1.jsonl").read_bytes() == (corpus / "m2.jsonl").read_bytes()
        recs = read_manifest(corpus / "m1.jsonl")
        assert all(isinstance(json.loads(l), dict) for l in open(corpus / "m1.jsonl"))
        assert recs == build_manifest(corpus, seed=4)

    def test_missing_files(self, corpus, tmp_path_factory):
        empty = tmp_path_factory.mktemp("empty")
        with pytest.raises(DataError, match="speech"):
            build_manifest(empty)
        recs = build_manifest(corpus, seed=0)
        (corpus / recs[0].speech).unlink()
        with pytest.raises(DataError, match=recs[0].speech):
            check_files(recs, corpus)

    def test_bad_record(self, tmp_path):
        (tmp_path / "m.jsonl").write_text('{"id": "x"}\n')
        with pytest.raises(DataError):
            read_manifest(tmp_path / "m.jsonl")

    def test_realize_uses_segment(self, corpus):
        recs = build_manifest(corpus, seed=0)
        r = next(x for x in recs if x.split == "test")
        m = realize(r, corpus)
        assert np.array_equal(m.noisy.samples, m.clean.samples + m.noise.samples)
        snr = 10 * np.log10(power(m.clean.samples) / power(m.noise.samples))
        assert snr == pytest.approx(r.snr_db, abs=1e-9)
        seg = split_noise(read_wav(corpus / r.noise))["test"].samples
        gain = np.sqrt(power(m.noise.samples) / power(tile_noise(seg, len(m.clean), m.wrap_offset)))
        np.testing.assert_allclose(m.noise.samples, gain * tile_noise(seg, len(m.clean), m.wrap_offset))
