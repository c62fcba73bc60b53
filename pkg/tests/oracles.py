"""Reference implementations kept deliberately naive.

Everything here trades speed for obviousness, so the vectorized production
code can be checked against versions whose correctness is visible by
inspection.
"""

import cmath
import math

import numpy as np
from scipy.special import erfc


def dft_direct(x):
    """O(n^2) DFT by the definition, one scalar product per output bin."""
    x = list(x)
    n = len(x)
    out = []
    for f in range(n):
        acc = 0j
        for t in range(n):
            acc += complex(x[t]) * cmath.exp(-2j * cmath.pi * f * t / n)
        out.append(acc)
    return np.asarray(out)


def essfm_phase_direct(block, gamma, dz_eff, c):
    """Sample-by-sample filtered-intensity rotation, cyclic indexing."""
    block = np.asarray(block, dtype=np.complex128)
    n = block.shape[1]

    def intensity(j):
        j %= n
        return abs(block[0, j]) ** 2 + abs(block[1, j]) ** 2

    out = np.empty_like(block)
    for k in range(n):
        acc = c[0] * intensity(k)
        for i in range(1, len(c)):
            acc += c[i] * (intensity(k - i) + intensity(k + i))
        out[:, k] = block[:, k] * cmath.exp(-1j * gamma * dz_eff * acc)
    return out


def golden_section_min(fun, lo, hi, tol=1e-10):
    """Scalar minimizer on [lo, hi]; assumes a single minimum inside."""
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - g * (b - a)
    d = a + g * (b - a)
    fc, fd = fun(c), fun(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def gaussian_width_after_dispersion(t0_s, beta2_ps2_km, z_km):
    """Width parameter T of a chirp-free Gaussian field exp(-t^2 / (2 T^2))
    after pure dispersion."""
    b2_z = beta2_ps2_km * 1e-24 * z_km
    return t0_s * math.sqrt(1.0 + (b2_z / t0_s**2) ** 2)


def rms_width(t_s, power):
    """RMS width of a sampled intensity profile."""
    p = np.asarray(power, dtype=np.float64)
    p = p / np.sum(p)
    mean = np.sum(t_s * p)
    return math.sqrt(np.sum((t_s - mean) ** 2 * p))


def qpsk_ber_theory(esn0_db):
    """Gray-coded QPSK bit error probability in AWGN."""
    esn0 = 10.0 ** (esn0_db / 10.0)
    return 0.5 * erfc(math.sqrt(esn0) / math.sqrt(2.0))
