"""MMSE log-spectral amplitude gain driven by an a-priori SNR estimate."""

from __future__ import annotations

import numpy as np

from . import DimensionError

XI_FLOOR = 1e-7
_EULER_GAMMA = 0.57721566490153286061


def _e1_series(x: np.ndarray) -> np.ndarray:
    # E1(x) = -gamma - ln x - sum_{k>=1} (-x)^k / (k k!)
    total = np.zeros_like(x)
    term = np.ones_like(x)
    for k in range(1, 60):
        term = term * (-x) / k
        total += term / k
    return -_EULER_GAMMA - np.log(x) - total


def _e1_contfrac(x: np.ndarray) -> np.ndarray:
    # modified Lentz evaluation of e^-x / (x + 1 - 1/(x + 3 - 4/(x + 5 - ...)))
    tiny = 1e-300
    b = x + 1.0
    c = np.full_like(x, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, 200):
        an = -float(i * i)
        b = b + 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if np.all(np.abs(delta - 1.0) < 1e-16):
            break
    return h * np.exp(-x)


def expint_e1(x) -> np.ndarray | float:
    """Exponential integral E1(x) for x > 0.

    Power series below 1, continued fraction from 1 upwards.
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise ValueError("expint_e1 is defined for x > 0 only")
    flat = arr.reshape(-1)
    out = np.empty_like(flat)
    lo = flat < 1.0
    if lo.any():
        out[lo] = _e1_series(flat[lo])
    if (~lo).any():
        out[~lo] = _e1_contfrac(flat[~lo])
    out = out.reshape(arr.shape)
    return float(out) if np.ndim(x) == 0 else out


def mmse_lsa_gain(xi, gamma=None):
    """Gain ``xi/(1+xi) * exp(E1(v)/2)`` with ``v = xi/(1+xi) * gamma``, capped at 1.

    ``gamma`` defaults to ``1 + xi``.
    """
    xi = np.maximum(np.asarray(xi, dtype=np.float64), XI_FLOOR)
    gamma = 1.0 + xi if gamma is None else np.asarray(gamma, dtype=np.float64)
    ratio = xi / (1.0 + xi)
    v = np.maximum(ratio * gamma, 1e-300)
    g = np.minimum(ratio * np.exp(0.5 * expint_e1(v)), 1.0)
    return float(g) if g.ndim == 0 else g


def enhance_magnitude_mmse(noisy_lps: np.ndarray, xi: np.ndarray) -> np.ndarray:
    if noisy_lps.shape != xi.shape:
        raise DimensionError(f"lps {noisy_lps.shape} and xi {xi.shape} differ")
    return np.sqrt(np.exp(noisy_lps)) * mmse_lsa_gain(xi)
