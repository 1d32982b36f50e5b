import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from mtms import DataError, DimensionError
from mtms.spectral import ComplexSpectrogram
from mtms.targets import (
    SIGMA_MIN_DB,
    SnrStats,
    compress_snr,
    compute_irm,
    decompress_snr,
    fit_compression_stats,
    instantaneous_prior_snr,
)


def spec(values):
    d = np.zeros((np.size(values), 161), dtype=complex)
    d[:, 0] = values
    return ComplexSpectrogram(d)


def _phi_quadrature(z):
    return 0.5 + quad(lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi), 0, z)[0]


def _phi_inverse_bisection(p):
    lo, hi = -12.0, 12.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1 + math.erf(mid / math.sqrt(2))) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# frozen from _phi_quadrature(1.0)
PHI_ONE = 0.8413447460685429


def test_frozen_phi_matches_quadrature():
    assert _phi_quadrature(1.0) == pytest.approx(PHI_ONE, abs=1e-12)


def uniform_stats(mu=0.0, sigma=1.0):
    return SnrStats(np.full(161, mu), np.full(161, sigma), 10)


class TestIrm:
    def test_noise_free(self):
        assert compute_irm(spec([1.0]), spec([0.0]))[0, 0] == pytest.approx(1.0)

    def test_speech_free(self):
        assert compute_irm(spec([0.0]), spec([1.0]))[0, 0] == 0.0

    def test_equal(self):
        assert compute_irm(spec([2.0]), spec([2j]))[0, 0] == pytest.approx(1 / np.sqrt(2))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            compute_irm(spec([1.0, 2.0]), spec([1.0]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
    def test_range_and_consistency_with_xi(self, seed, scale):
        r = np.random.default_rng(seed)
        x = ComplexSpectrogram(scale * (r.normal(size=(4, 161)) + 1j * r.normal(size=(4, 161))))
        n = ComplexSpectrogram(r.normal(size=(4, 161)) + 1j * r.normal(size=(4, 161)))
        irm = compute_irm(x, n)
        assert np.all((irm >= 0) & (irm <= 1))
        xi = instantaneous_prior_snr(x, n)
        np.testing.assert_allclose(irm, np.sqrt(xi / (1 + xi)), atol=1e-9)


class TestPriorSnr:
    def test_values(self):
        xi = instantaneous_prior_snr(spec([2.0, 0.0, 1.0]), spec([1.0, 1.0, 1j]))[:, 0]
        np.testing.assert_allclose(xi, [4.0, 0.0, 1.0], rtol=1e-10)
        assert 10 * np.log10(xi[0]) == pytest.approx(6.0206, abs=1e-4)


class TestFitStats:
    def test_constant_bin_has_clamped_sigma(self):
        s = fit_compression_stats([(spec([2.0, 2.0, 2.0]), spec([1.0, 1.0, 1.0]))])
        assert s.mu[0] == pytest.approx(10 * np.log10(4))
        assert s.sigma[0] == SIGMA_MIN_DB

    def test_two_point_statistics(self):
        # xi_dB in {0, 10}
        s = fit_compression_stats([(spec([1.0, np.sqrt(10)]), spec([1.0, 1.0]))])
        assert s.mu[0] == pytest.approx(5.0)
        assert s.sigma[0] == pytest.approx(np.sqrt(50), rel=1e-12)
        assert s.n_frames == 2

    def test_order_invariant(self, rng):
        x = rng.normal(size=(20, 161)) + 1j * rng.normal(size=(20, 161))
        n = rng.normal(size=(20, 161)) + 1j * rng.normal(size=(20, 161))
        perm = rng.permutation(20)
        a = fit_compression_stats([(ComplexSpectrogram(x[:7]), ComplexSpectrogram(n[:7])),
                                   (ComplexSpectrogram(x[7:]), ComplexSpectrogram(n[7:]))])
        b = fit_compression_stats([(ComplexSpectrogram(x[perm]), ComplexSpectrogram(n[perm]))])
        np.testing.assert_allclose(a.mu, b.mu, rtol=1e-12)
        np.testing.assert_allclose(a.sigma, b.sigma, rtol=1e-10)

    def test_matches_numpy(self, rng):
        x = rng.normal(size=(50, 161)) + 1j * rng.normal(size=(50, 161))
        n = rng.normal(size=(50, 161)) + 1j * rng.normal(size=(50, 161))
        s = fit_compression_stats([(ComplexSpectrogram(x), ComplexSpectrogram(n))])
        db = 10 * np.log10(np.abs(x) ** 2 / (np.abs(n) ** 2 + 1e-12))
        np.testing.assert_allclose(s.mu, db.mean(axis=0), rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(s.sigma, db.std(axis=0, ddof=1), rtol=1e-10)

    def test_empty(self):
        with pytest.raises(DataError):
            fit_compression_stats([])
        with pytest.raises(DataError):
            fit_compression_stats([(spec([1.0]), spec([1.0]))])

    def test_serialization_round_trip(self, rng):
        s = SnrStats(rng.normal(size=161), rng.uniform(1, 5, size=161), 1234)
        t, end = SnrStats.from_bytes(s.to_bytes())
        assert end == len(s.to_bytes())
        assert np.array_equal(t.mu, s.mu) and np.array_equal(t.sigma, s.sigma) and t.n_frames == 1234


class TestCompression:
    def test_at_mean(self):
        assert compress_snr(np.ones((1, 161)), uniform_stats())[0, 0] == 0.5

    def test_one_sigma(self):
        stats = uniform_stats(0.0, 10.0)
        assert compress_snr(np.full((1, 161), 10.0), stats)[0, 0] == pytest.approx(PHI_ONE, abs=1e-12)

    def test_monotone(self):
        xi = np.logspace(-4, 4, 161)[:, None] * np.ones((1, 161))
        c = compress_snr(xi, uniform_stats(0.0, 10.0))
        assert np.all(np.diff(c[:, 7]) > 0)

    def test_decompress_at_half(self):
        stats = SnrStats(np.linspace(-10, 10, 161), np.ones(161), 5)
        xi = decompress_snr(np.full((1, 161), 0.5), stats)
        np.testing.assert_allclose(10 * np.log10(xi[0]), stats.mu, atol=1e-12)

    def test_round_trip_unit(self):
        xi = decompress_snr(compress_snr(np.ones((1, 161)), uniform_stats()), uniform_stats())
        np.testing.assert_allclose(xi, 1.0, rtol=1e-6)

    def test_decompress_one_sigma(self):
        # target derived from the bisection inverse of Phi: z = 1 -> 10 dB
        p = 0.84134
        z = _phi_inverse_bisection(p)
        xi = decompress_snr(np.full((1, 161), p), uniform_stats(0.0, 10.0))[0, 0]
        assert xi == pytest.approx(10 ** z, rel=1e-9)
        assert xi == pytest.approx(10.0, abs=1e-3)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-5, 5), st.floats(-20, 20), st.floats(0.5, 15))
    def test_mutual_inverse(self, z, mu, sigma):
        stats = uniform_stats(mu, sigma)
        xi = np.full((1, 161), 10 ** ((mu + z * sigma) / 10))
        np.testing.assert_allclose(decompress_snr(compress_snr(xi, stats), stats), xi, rtol=1e-6)
        p = np.full((1, 161), 0.5 * (1 + math.erf(z / math.sqrt(2))))
        np.testing.assert_allclose(compress_snr(decompress_snr(p, stats), stats), p, rtol=1e-6, atol=1e-12)

    def test_clamped_extremes_are_finite(self):
        xi = decompress_snr(np.array([[0.0] * 161, [1.0] * 161]), uniform_stats(0.0, 10.0))
        assert np.all(np.isfinite(xi)) and np.all(xi > 0)
