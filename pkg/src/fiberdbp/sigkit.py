"""Core signal and link datatypes, unit conversions.

Conventions used throughout the package:

* |sample|^2 is instantaneous power in watts; launch power settings refer to
  the mean dual-polarization power (sum of both polarizations).
* beta2 is stored signed in ps^2/km (anomalous dispersion negative).
* gamma is in 1/(W km).
* Attenuation is entered in dB/km and converted once to the natural power
  coefficient alpha = ln(10)/10 * alpha_dB in 1/km.
* Frequencies in Hz, distances in km.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LN10_OVER_10 = math.log(10.0) / 10.0


def dbm_to_watts(p_dbm: float) -> float:
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def watts_to_dbm(p_w: float) -> float:
    if p_w <= 0.0:
        raise ValueError("power must be positive to express in dBm")
    return 10.0 * math.log10(p_w) + 30.0


def alpha_from_db_per_km(alpha_db_per_km: float) -> float:
    """Natural power attenuation coefficient (1/km) from a dB/km figure."""
    return LN10_OVER_10 * alpha_db_per_km


@dataclass(frozen=True)
class DualPolSignal:
    """Uniformly sampled dual-polarization complex baseband waveform.

    Parameters
    ----------
    x, y : ndarray
        Complex field samples of the two polarization tributaries. Both
        arrays must be one-dimensional, non-empty and of equal length.
    sample_rate : float
        Sampling rate in Hz, strictly positive.
    """

    x: np.ndarray
    y: np.ndarray
    sample_rate: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.complex128)
        y = np.asarray(self.y, dtype=np.complex128)
        if x.ndim != 1 or y.ndim != 1:
            raise ValueError("polarization sample arrays must be one-dimensional")
        if x.size == 0:
            raise ValueError("signal must contain at least one sample")
        if x.size != y.size:
            raise ValueError(f"polarization lengths differ: {x.size} != {y.size}")
        if not (self.sample_rate > 0.0) or not math.isfinite(self.sample_rate):
            raise ValueError("sample_rate must be positive and finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.x.size

    def stack(self) -> np.ndarray:
        """Both polarizations as one (2, n) array (copy)."""
        return np.stack([self.x, self.y])

    @classmethod
    def from_stack(cls, samples: np.ndarray, sample_rate: float) -> "DualPolSignal":
        samples = np.asarray(samples)
        if samples.ndim != 2 or samples.shape[0] != 2:
            raise ValueError("expected a (2, n) sample array")
        return cls(samples[0], samples[1], sample_rate)


@dataclass(frozen=True)
class FiberParams:
    """Physical parameters of one fiber span.

    Attenuation is taken in dB/km; the natural coefficient is exposed as
    the ``alpha`` property.
    """

    beta2: float               # group-velocity dispersion, ps^2/km, signed
    gamma: float               # nonlinear coefficient, 1/(W km)
    alpha_db_per_km: float     # power attenuation, dB/km
    length: float              # span length, km

    def __post_init__(self):
        if not (self.length > 0.0):
            raise ValueError("span length must be positive")
        if self.alpha_db_per_km < 0.0:
            raise ValueError("attenuation must be non-negative")
        if self.gamma < 0.0:
            raise ValueError("gamma must be non-negative")
        for name in ("beta2", "gamma", "alpha_db_per_km", "length"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @property
    def alpha(self) -> float:
        """Natural power attenuation coefficient, 1/km."""
        return alpha_from_db_per_km(self.alpha_db_per_km)


@dataclass(frozen=True)
class LinkConfig:
    """A chain of identical amplified spans.

    ``amp_gain_db=None`` selects transparent operation: each amplifier
    exactly compensates the span loss. ``amp_noise_figure_db=None`` disables
    ASE generation (noiseless amplifiers).
    """

    span: FiberParams
    num_spans: int
    amp_gain_db: float | None = None        # None: transparent (gain = span loss)
    amp_noise_figure_db: float | None = 5.0  # None: noiseless amplifier
    pol_rotation: bool = True               # random unitary rotation once per span
    center_wavelength_nm: float = 1550.0

    def __post_init__(self):
        if self.num_spans < 1:
            raise ValueError("num_spans must be >= 1")
        if self.center_wavelength_nm <= 0.0:
            raise ValueError("center_wavelength_nm must be positive")
        if self.amp_noise_figure_db is not None and self.amp_noise_figure_db < 0.0:
            raise ValueError("noise figure must be non-negative (or None to disable)")

    @property
    def gain_db(self) -> float:
        """Per-amplifier gain in dB (span loss when transparent)."""
        if self.amp_gain_db is None:
            return self.span.alpha_db_per_km * self.span.length
        return self.amp_gain_db

    @property
    def total_length(self) -> float:
        """End-to-end fiber length, km."""
        return self.span.length * self.num_spans


@dataclass(frozen=True)
class EssfmCoefficients:
    """Real coefficients (c_0 .. c_Nc) of the symmetric intensity filter
    used by the enhanced nonlinear sub-step."""

    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("need at least one coefficient (c_0)")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "c", c)

    @property
    def n_coeffs(self) -> int:
        """Number of side coefficients Nc (total length is Nc + 1)."""
        return self.c.size - 1

    def __len__(self) -> int:
        return self.c.size

    @classmethod
    def identity(cls, n_coeffs: int) -> "EssfmCoefficients":
        """c = (1, 0, ..., 0): the enhanced sub-step degenerates to the
        plain single-sample nonlinear phase rotation."""
        if n_coeffs < 0:
            raise ValueError("n_coeffs must be >= 0")
        c = np.zeros(n_coeffs + 1)
        c[0] = 1.0
        return cls(c)


def effective_length(alpha: float, dz: float) -> float:
    """Effective nonlinear interaction length (1 - exp(-alpha dz)) / alpha.

    Parameters
    ----------
    alpha : float
        Natural power attenuation coefficient, 1/km, >= 0.
    dz : float
        Segment length, km, > 0.

    Returns
    -------
    float
        Effective length in km. Equals dz in the lossless limit; the
        small-argument regime (alpha dz < 1e-8) is evaluated by series
        expansion to avoid cancellation.
    """
    if alpha < 0.0:
        raise ValueError("alpha must be non-negative")
    if not (dz > 0.0):
        raise ValueError("dz must be positive")
    if alpha == 0.0:
        return dz
    u = alpha * dz
    if u < 1e-8:
        return dz * (1.0 - u / 2.0 + u * u / 6.0)
    return (1.0 - math.exp(-u)) / alpha


def signal_power(sig: DualPolSignal) -> float:
    """Mean dual-polarization power, watts: mean_k(|x_k|^2 + |y_k|^2)."""
    return float(np.mean(np.abs(sig.x) ** 2 + np.abs(sig.y) ** 2))


def scale_to_power(sig: DualPolSignal, target_dbm: float) -> DualPolSignal:
    """Rescale both polarizations so the mean dual-pol power hits target_dbm."""
    p = signal_power(sig)
    if p <= 0.0:
        raise ValueError("cannot scale an all-zero signal to a target power")
    g = math.sqrt(dbm_to_watts(target_dbm) / p)
    return DualPolSignal(sig.x * g, sig.y * g, sig.sample_rate)
