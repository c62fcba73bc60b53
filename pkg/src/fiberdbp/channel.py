"""Forward propagation model: split-step Manakov solver, EDFA with ASE,
polarization rotation, laser phase noise.

The solver works on one circular block (power-of-two length). Each step is
FFT -> linear sub-step -> IFFT -> nonlinear sub-step -> half-step loss
factor applied once per step. The nonlinear phase is common to both
polarizations and driven by the total instantaneous intensity
|x_k|^2 + |y_k|^2 (Manakov averaging; fold any 8/9 factor into gamma if
desired).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sigkit import DualPolSignal, FiberParams, LinkConfig, effective_length
from .spectral import fft, fft_frequencies, ifft

PLANCK = 6.62607015e-34       # J s
SPEED_OF_LIGHT = 299792458.0  # m/s

RngLike = "int | np.random.SeedSequence | np.random.Generator"


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class SsfmStepConfig:
    """Discretization of the split-step solver. Steps are uniform within a
    span; ``nonlinear_enabled=False`` reduces the span to dispersion plus
    loss."""

    steps_per_span: int = 50
    nonlinear_enabled: bool = True

    def __post_init__(self):
        if self.steps_per_span < 1:
            raise ValueError("steps_per_span must be >= 1")


def linear_substep(spectrum: np.ndarray, beta2: float, dz: float, freqs: np.ndarray) -> np.ndarray:
    """Dispersion operator in the frequency domain.

    Multiplies each bin by exp(-j 2 pi^2 beta2 f^2 dz) with beta2 in
    ps^2/km, f in Hz and dz in km. ``spectrum`` is any (..., n) array
    aligned with ``freqs``.
    """
    spectrum = np.asarray(spectrum)
    if spectrum.shape[-1] != freqs.shape[-1]:
        raise ValueError("spectrum and frequency grid lengths differ")
    phase = -2.0 * np.pi**2 * (beta2 * 1e-24) * freqs**2 * dz
    return spectrum * np.exp(1j * phase)


def nonlinear_substep_ssfm(block: np.ndarray, gamma: float, dz_eff: float) -> np.ndarray:
    """Single-sample nonlinear phase rotation.

    Both polarizations of the (2, n) block are rotated by
    exp(-j gamma dz_eff (|x_k|^2 + |y_k|^2)).
    """
    block = np.asarray(block)
    if block.ndim != 2 or block.shape[0] != 2:
        raise ValueError("expected a (2, n) dual-polarization block")
    intensity = np.abs(block[0]) ** 2 + np.abs(block[1]) ** 2
    return block * np.exp(-1j * gamma * dz_eff * intensity)


def propagate_span(sig: DualPolSignal, fiber: FiberParams, cfg: SsfmStepConfig) -> DualPolSignal:
    """Propagate one circular block through a single fiber span.

    The signal length must be a power of two (the block is treated as
    periodic). Per step: dispersion over dz, nonlinear rotation weighted by
    the step effective length, then the amplitude loss factor
    exp(-alpha dz / 2).
    """
    n = len(sig)
    freqs = fft_frequencies(n, sig.sample_rate)
    dz = fiber.length / cfg.steps_per_span
    dz_eff = effective_length(fiber.alpha, dz) if fiber.alpha > 0.0 else dz
    loss = np.exp(-fiber.alpha * dz / 2.0)

    block = sig.stack()
    for _ in range(cfg.steps_per_span):
        block = ifft(linear_substep(fft(block), fiber.beta2, dz, freqs))
        if cfg.nonlinear_enabled:
            block = nonlinear_substep_ssfm(block, fiber.gamma, dz_eff)
        block = block * loss
    return DualPolSignal(block[0], block[1], sig.sample_rate)


def amplify_with_ase(
    sig: DualPolSignal,
    gain_db: float,
    noise_figure_db: float | None,
    center_wavelength_nm: float = 1550.0,
    rng=None,
) -> DualPolSignal:
    """Flat-gain amplifier with circular Gaussian ASE.

    The per-polarization ASE spectral density is (G - 1) F h nu / 2 with G
    the linear gain and F the linear noise figure; the variance added to
    each complex sample is that density times the sampling rate. A
    ``noise_figure_db`` of None disables noise (pure scaling).
    """
    if gain_db < 0.0:
        raise ValueError("gain_db must be non-negative")
    g_amp = 10.0 ** (gain_db / 20.0)
    x = sig.x * g_amp
    y = sig.y * g_amp
    if noise_figure_db is not None:
        g_lin = 10.0 ** (gain_db / 10.0)
        f_lin = 10.0 ** (noise_figure_db / 10.0)
        nu = SPEED_OF_LIGHT / (center_wavelength_nm * 1e-9)
        s_ase = (g_lin - 1.0) * f_lin * PLANCK * nu / 2.0  # W/Hz per polarization
        var = s_ase * sig.sample_rate
        gen = _as_generator(rng)
        n = len(sig)
        scale = np.sqrt(var / 2.0)
        noise = gen.normal(scale=scale, size=(2, 2, n))
        x = x + noise[0, 0] + 1j * noise[0, 1]
        y = y + noise[1, 0] + 1j * noise[1, 1]
    return DualPolSignal(x, y, sig.sample_rate)


def haar_random_unitary(rng=None) -> np.ndarray:
    """Haar-distributed 2x2 unitary (QR of a complex Gaussian matrix with
    the phase convention fixed on the diagonal of R)."""
    gen = _as_generator(rng)
    z = gen.normal(size=(2, 2)) + 1j * gen.normal(size=(2, 2))
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def apply_jones_matrix(sig: DualPolSignal, jones: np.ndarray) -> DualPolSignal:
    """Apply one 2x2 Jones matrix to every sample."""
    jones = np.asarray(jones, dtype=np.complex128)
    if jones.shape != (2, 2):
        raise ValueError("jones must be a 2x2 matrix")
    out = jones @ sig.stack()
    return DualPolSignal(out[0], out[1], sig.sample_rate)


def random_polarization_rotation(sig: DualPolSignal, rng=None) -> DualPolSignal:
    """Rotate the polarization state by a Haar-random unitary (one matrix
    for the whole block). Preserves total power exactly."""
    return apply_jones_matrix(sig, haar_random_unitary(rng))


def apply_laser_phase_noise(sig: DualPolSignal, linewidth_hz: float, rng=None) -> DualPolSignal:
    """Common Wiener phase noise on both polarizations.

    Increment variance per sample is 2 pi linewidth / sample_rate
    (Lorentzian line of the given FWHM). linewidth 0 returns the input
    unchanged.
    """
    if linewidth_hz < 0.0:
        raise ValueError("linewidth must be non-negative")
    if linewidth_hz == 0.0:
        return sig
    gen = _as_generator(rng)
    sigma = np.sqrt(2.0 * np.pi * linewidth_hz / sig.sample_rate)
    phi = np.cumsum(gen.normal(scale=sigma, size=len(sig)))
    rot = np.exp(1j * phi)
    return DualPolSignal(sig.x * rot, sig.y * rot, sig.sample_rate)


def propagate_link(
    sig: DualPolSignal,
    link: LinkConfig,
    cfg: SsfmStepConfig,
    rng=None,
) -> DualPolSignal:
    """Propagate through every span of the link.

    Per span: split-step fiber propagation, then the amplifier (with ASE
    unless disabled), then one random polarization rotation when enabled.
    Noise and rotations draw from independent child streams of the given
    seed, so results are reproducible for any span count.
    """
    if isinstance(rng, np.random.SeedSequence):
        ss = rng
    elif isinstance(rng, np.random.Generator):
        raise ValueError("pass an integer seed or SeedSequence, not a Generator")
    else:
        ss = np.random.SeedSequence(rng)
    children = ss.spawn(2 * link.num_spans)

    out = sig
    for s in range(link.num_spans):
        out = propagate_span(out, link.span, cfg)
        out = amplify_with_ase(
            out,
            link.gain_db,
            link.amp_noise_figure_db,
            link.center_wavelength_nm,
            rng=children[2 * s],
        )
        if link.pol_rotation:
            out = random_polarization_rotation(out, rng=children[2 * s + 1])
    return out
