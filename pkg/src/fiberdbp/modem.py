"""PM-QPSK transmitter and receiver DSP chain.

Transmit side: maximal-length PRBS data, Gray-mapped QPSK on each
polarization with delay decorrelation between the four tributaries, NRZ or
raised-cosine pulses at an integer number of samples per symbol.

Receive side: optional ADC-rate emulation, 2x2 adaptive butterfly equalizer
(constant-modulus update, fractionally spaced, decimating to symbol rate),
4th-power frequency-offset and carrier-phase recovery, hard decision and
bit-error counting with circular alignment and polarization-permutation
search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numba import njit
from scipy.signal import resample_poly
from scipy.special import erfcinv

from .sigkit import DualPolSignal

# feedback polynomial x^order + x^tap + 1 per standard test-pattern practice
PRBS_TAPS = {7: 6, 9: 5, 11: 9, 15: 14, 23: 18}

_SQRT1_2 = 1.0 / math.sqrt(2.0)


class AlignmentError(RuntimeError):
    """No bit alignment with an error rate below the plausibility bound."""


class FrequencyOffsetError(RuntimeError):
    """Frequency offset at or beyond the estimable range (symbol rate / 8)."""


@dataclass(frozen=True)
class TxConfig:
    """Transmitter settings. The product num_symbols * samples_per_symbol
    must be a power of two (the waveform is one circular block)."""

    symbol_rate: float = 28e9
    prbs_order: int = 11
    samples_per_symbol: int = 2
    pulse: str = "nrz"            # "nrz" or "rc"
    rolloff: float = 0.2          # raised-cosine only
    num_symbols: int = 2**15
    rng_seed: int = 1

    def __post_init__(self):
        if self.symbol_rate <= 0.0:
            raise ValueError("symbol_rate must be positive")
        if self.prbs_order not in PRBS_TAPS:
            raise ValueError(f"prbs_order must be one of {sorted(PRBS_TAPS)}")
        if self.samples_per_symbol < 2:
            raise ValueError("samples_per_symbol must be >= 2")
        if self.pulse not in ("nrz", "rc"):
            raise ValueError("pulse must be 'nrz' or 'rc'")
        if self.pulse == "rc" and not (0.0 < self.rolloff <= 1.0):
            raise ValueError("rolloff must be in (0, 1]")
        n = self.num_symbols * self.samples_per_symbol
        if n < 2 or (n & (n - 1)) != 0:
            raise ValueError("num_symbols * samples_per_symbol must be a power of two")

    @property
    def sample_rate(self) -> float:
        return self.symbol_rate * self.samples_per_symbol


@dataclass(frozen=True)
class RxMetrics:
    ber: float
    q_factor_db: float
    evm_percent: float
    bits_counted: int

    def __post_init__(self):
        if not (0.0 <= self.ber <= 1.0):
            raise ValueError("ber out of range")
        if self.bits_counted <= 0:
            raise ValueError("bits_counted must be positive")


def generate_prbs(order: int, seed_state: int) -> np.ndarray:
    """Maximal-length LFSR bit sequence of period 2^order - 1.

    Fibonacci register with feedback polynomial x^order + x^tap + 1 (taps
    per PRBS_TAPS, order 11 uses stages 11 and 9). seed_state initializes
    the register and must be nonzero modulo 2^order.
    """
    if order not in PRBS_TAPS:
        raise ValueError(f"unsupported PRBS order {order}, pick from {sorted(PRBS_TAPS)}")
    tap = PRBS_TAPS[order]
    mask = (1 << order) - 1
    state = int(seed_state) & mask
    if state == 0:
        raise ValueError("seed_state must be nonzero modulo 2^order")
    n = (1 << order) - 1
    bits = np.empty(n, dtype=np.uint8)
    # register bit i holds sequence bit b_{k-order+i}; new bit
    # b_k = b_{k-order} xor b_{k-tap}
    for k in range(n):
        new = ((state >> 0) ^ (state >> (order - tap))) & 1
        bits[k] = new
        state = (state >> 1) | (new << (order - 1))
    return bits


def qpsk_map(bits_i: np.ndarray, bits_q: np.ndarray) -> np.ndarray:
    """Gray mapping: bit 0 -> +1, bit 1 -> -1 on each rail, unit symbol power."""
    return ((1.0 - 2.0 * bits_i) + 1j * (1.0 - 2.0 * bits_q)) * _SQRT1_2


def qpsk_decide(symbols: np.ndarray) -> np.ndarray:
    """Hard decisions, inverse of qpsk_map. Output interleaves the I and Q
    bits of each symbol along the last axis (length 2n)."""
    symbols = np.asarray(symbols)
    bits = np.empty(symbols.shape[:-1] + (2 * symbols.shape[-1],), dtype=np.uint8)
    bits[..., 0::2] = symbols.real < 0.0
    bits[..., 1::2] = symbols.imag < 0.0
    return bits


def evm_percent(rx_symbols: np.ndarray, ref_symbols: np.ndarray) -> float:
    """Root-mean-square error vector magnitude, percent of reference RMS."""
    rx, ref = np.asarray(rx_symbols), np.asarray(ref_symbols)
    if rx.shape != ref.shape:
        raise ValueError("shape mismatch")
    return float(100.0 * np.sqrt(np.mean(np.abs(rx - ref) ** 2) / np.mean(np.abs(ref) ** 2)))


def _raised_cosine_taps(sps: int, rolloff: float, half_span_symbols: int = 8) -> np.ndarray:
    t = np.arange(-half_span_symbols * sps, half_span_symbols * sps + 1) / sps
    h = np.sinc(t) * np.cos(np.pi * rolloff * t)
    denom = 1.0 - (2.0 * rolloff * t) ** 2
    sing = np.isclose(denom, 0.0)
    h[~sing] /= denom[~sing]
    h[sing] = np.pi / 4.0 * np.sinc(1.0 / (2.0 * rolloff))
    return h


def modulate_pm_qpsk(cfg: TxConfig) -> tuple[DualPolSignal, np.ndarray]:
    """Generate the dual-polarization QPSK waveform and its reference
    symbols.

    Each polarization's I and Q rails tile the same PRBS at staggered cyclic
    offsets (quarter-period steps), emulating delay-line decorrelation. The
    waveform is one circular block of num_symbols * samples_per_symbol
    samples; reference symbols are returned as a (2, num_symbols) array
    aligned with the symbol centers.
    """
    period = (1 << cfg.prbs_order) - 1
    seed_state = int(np.random.default_rng(cfg.rng_seed).integers(1, period + 1))
    base = generate_prbs(cfg.prbs_order, seed_state)

    offsets = (0, period // 4, period // 2, (3 * period) // 4)
    rails = [np.resize(np.roll(base, -off), cfg.num_symbols) for off in offsets]
    sym_x = qpsk_map(rails[0].astype(np.float64), rails[1].astype(np.float64))
    sym_y = qpsk_map(rails[2].astype(np.float64), rails[3].astype(np.float64))
    reference = np.stack([sym_x, sym_y])

    sps = cfg.samples_per_symbol
    if cfg.pulse == "nrz":
        wave = np.repeat(reference, sps, axis=1)
    else:
        up = np.zeros((2, cfg.num_symbols * sps), dtype=np.complex128)
        up[:, ::sps] = reference
        taps = _raised_cosine_taps(sps, cfg.rolloff)
        n = up.shape[1]
        kernel = np.zeros(n)
        half = taps.size // 2
        idx = (np.arange(taps.size) - half) % n
        np.add.at(kernel, idx, taps)
        wave = np.fft.ifft(np.fft.fft(up, axis=1) * np.fft.fft(kernel), axis=1)

    return DualPolSignal(wave[0], wave[1], cfg.sample_rate), reference


@njit(cache=True)
def _cma_pass(ext_x, ext_y, taps, mu, n_sym, hxx, hxy, hyx, hyy, out_x, out_y):  # pragma: no cover
    for n in range(n_sym):
        base = 2 * n
        ox = 0.0 + 0.0j
        oy = 0.0 + 0.0j
        for i in range(taps):
            ux = ext_x[base + i]
            uy = ext_y[base + i]
            ox += hxx[i] * ux + hxy[i] * uy
            oy += hyx[i] * ux + hyy[i] * uy
        ex = mu * (1.0 - (ox.real * ox.real + ox.imag * ox.imag)) * ox
        ey = mu * (1.0 - (oy.real * oy.real + oy.imag * oy.imag)) * oy
        for i in range(taps):
            cux = np.conj(ext_x[base + i])
            cuy = np.conj(ext_y[base + i])
            hxx[i] += ex * cux
            hxy[i] += ex * cuy
            hyx[i] += ey * cux
            hyy[i] += ey * cuy
        out_x[n] = ox
        out_y[n] = oy


def butterfly_equalize(
    sig: DualPolSignal,
    taps: int = 15,
    step_size: float = 1e-3,
    passes: int = 2,
    return_info: bool = False,
):
    """Adaptive 2x2 MIMO equalizer, constant-modulus update, T/2 spaced.

    The input must carry 2 samples per symbol; the output is decimated to
    symbol rate (sample_rate / 2) with one output per symbol. Filters start
    from a center spike and adapt continuously over ``passes`` sweeps of the
    block (the block is treated as circular); the last sweep's outputs are
    returned. If both output streams collapse onto the same polarization
    (normalized cross-correlation > 0.95 after a sweep), the second filter
    pair is re-initialized orthogonally and adaptation continues; the event
    is reported in the info dict when ``return_info`` is set.
    """
    if taps < 1 or taps % 2 == 0:
        raise ValueError("taps must be odd and positive")
    if step_size <= 0.0:
        raise ValueError("step_size must be positive")
    if passes < 1:
        raise ValueError("passes must be >= 1")
    n_samp = len(sig)
    if n_samp % 2:
        raise ValueError("input length must be even (2 samples per symbol)")
    n_sym = n_samp // 2

    # per-polarization unit power puts the QPSK radius at 1, the CMA target
    p = np.mean(np.abs(sig.x) ** 2 + np.abs(sig.y) ** 2) / 2.0
    if p <= 0.0:
        raise ValueError("cannot equalize an all-zero signal")
    g = 1.0 / math.sqrt(p)
    half = taps // 2
    pad_idx = np.arange(-half, n_samp + half) % n_samp
    ext_x = np.ascontiguousarray(sig.x[pad_idx] * g)
    ext_y = np.ascontiguousarray(sig.y[pad_idx] * g)

    hxx = np.zeros(taps, dtype=np.complex128)
    hxy = np.zeros(taps, dtype=np.complex128)
    hyx = np.zeros(taps, dtype=np.complex128)
    hyy = np.zeros(taps, dtype=np.complex128)
    hxx[half] = 1.0
    hyy[half] = 1.0

    out_x = np.empty(n_sym, dtype=np.complex128)
    out_y = np.empty(n_sym, dtype=np.complex128)
    reinits = 0
    for _ in range(passes):
        _cma_pass(ext_x, ext_y, taps, step_size, n_sym, hxx, hxy, hyx, hyy, out_x, out_y)
        num = np.abs(np.vdot(out_x, out_y))
        den = math.sqrt(float(np.vdot(out_x, out_x).real * np.vdot(out_y, out_y).real))
        if den > 0.0 and num / den > 0.95:
            hyy[:] = np.conj(hxx[::-1])
            hyx[:] = -np.conj(hxy[::-1])
            reinits += 1
            _cma_pass(ext_x, ext_y, taps, step_size, n_sym, hxx, hxy, hyx, hyy, out_x, out_y)

    out = DualPolSignal(out_x, out_y, sig.sample_rate / 2.0)
    if return_info:
        return out, {"reinits": reinits, "taps": (hxx, hxy, hyx, hyy)}
    return out


def _vv_phase(symbols: np.ndarray, window: int) -> np.ndarray:
    q = symbols**4
    n = q.size
    pad = window // 2
    ext = np.concatenate([q[n - pad:], q, q[: window - pad - 1]])
    smooth = np.convolve(ext, np.ones(window) / window, mode="valid")
    return (np.unwrap(np.angle(smooth)) - np.pi) / 4.0


def carrier_recover(
    symbols: np.ndarray,
    symbol_rate: float,
    reference: np.ndarray | None = None,
    window: int = 32,
) -> np.ndarray:
    """Frequency-offset removal and carrier-phase tracking on symbol-rate
    QPSK sequences.

    The offset is located as the 4th-power spectral peak (quarter of the
    peak frequency, both polarizations combined, parabolic interpolation);
    offsets at the edge of the estimable range (symbol_rate / 8) raise
    FrequencyOffsetError. Phase is tracked per polarization with a sliding
    4th-power window. With a (2, n) ``reference`` given, the residual 90-degree
    ambiguity of each polarization is resolved by a rotation search against
    the better-correlating reference stream; without it the global rotation
    is left unresolved.
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    if symbols.ndim != 2 or symbols.shape[0] != 2:
        raise ValueError("expected a (2, n) symbol array")
    n = symbols.shape[1]
    if window < 1 or window > n:
        raise ValueError("window must be in [1, n]")
    if symbol_rate <= 0.0:
        raise ValueError("symbol_rate must be positive")

    spec = np.abs(np.fft.fft(symbols[0] ** 4)) ** 2 + np.abs(np.fft.fft(symbols[1] ** 4)) ** 2
    peak = int(np.argmax(spec))
    # parabolic refinement on the log spectrum
    s0, s1, s2 = (
        math.log(max(spec[(peak - 1) % n], 1e-300)),
        math.log(max(spec[peak], 1e-300)),
        math.log(max(spec[(peak + 1) % n], 1e-300)),
    )
    denom = s0 - 2.0 * s1 + s2
    frac = 0.5 * (s0 - s2) / denom if denom != 0.0 else 0.0
    freqs = np.fft.fftfreq(n, d=1.0 / symbol_rate)
    bin_step = symbol_rate / n
    f4 = freqs[peak] + frac * bin_step
    if abs(f4) >= symbol_rate / 2.0 - 2.0 * bin_step:
        raise FrequencyOffsetError(
            f"4th-power peak at {f4:.3e} Hz sits at the aliasing edge; "
            f"offsets beyond {symbol_rate / 8.0:.3e} Hz are not estimable"
        )
    f_off = f4 / 4.0

    k = np.arange(n)
    derotated = symbols * np.exp(-2j * np.pi * f_off * k / symbol_rate)

    out = np.empty_like(derotated)
    for p in range(2):
        phi = _vv_phase(derotated[p], window)
        out[p] = derotated[p] * np.exp(-1j * phi)

    if reference is not None:
        reference = np.asarray(reference, dtype=np.complex128)
        if reference.shape != symbols.shape:
            raise ValueError("reference shape must match the symbol array")
        ref_fft = np.fft.fft(reference, axis=1)
        for p in range(2):
            sp_fft = np.fft.fft(out[p])
            best = None
            for r in range(2):
                corr = np.fft.ifft(sp_fft * np.conj(ref_fft[r]))
                i = int(np.argmax(np.abs(corr)))
                if best is None or abs(corr[i]) > abs(best):
                    best = corr[i]
            quarter_turns = round(np.angle(best) / (np.pi / 2.0))
            out[p] *= np.exp(-1j * quarter_turns * np.pi / 2.0)
    return out


def _bits_to_symbols(bits: np.ndarray) -> np.ndarray:
    return qpsk_map(bits[..., 0::2].astype(np.float64), bits[..., 1::2].astype(np.float64))


def measure_ber(
    decided_bits: np.ndarray,
    reference_bits: np.ndarray,
    skip: int = 0,
    evm: float = math.nan,
) -> RxMetrics:
    """Count bit errors over the best circular alignment.

    Both inputs are (2, 2 n_sym) interleaved I/Q bit arrays. The search
    covers circular symbol shifts (per polarization) and the two
    polarization pairings; the first ``skip`` bits of each decided stream
    are excluded from the count. Raises AlignmentError when no alignment
    achieves an error rate below 0.4. The Q factor is
    20 log10(sqrt(2) erfcinv(2 BER)).
    """
    dec = np.asarray(decided_bits)
    ref = np.asarray(reference_bits)
    if dec.shape != ref.shape or dec.ndim != 2 or dec.shape[0] != 2:
        raise ValueError("expected matching (2, 2*n_sym) bit arrays")
    n_bits = dec.shape[1]
    if n_bits % 2:
        raise ValueError("bit streams must hold whole symbols (even length)")
    if skip < 0 or skip >= n_bits:
        raise ValueError("skip must be in [0, n_bits)")

    dec_sym = _bits_to_symbols(dec)
    ref_sym = _bits_to_symbols(ref)
    dec_fft = np.fft.fft(dec_sym, axis=1)
    ref_fft = np.conj(np.fft.fft(ref_sym, axis=1))

    skip_sym = (skip + 1) // 2
    n_sym = n_bits // 2
    counted = 2 * (n_sym - skip_sym)

    best_ber = None
    for perm in ((0, 1), (1, 0)):
        errors = 0
        for p, r in enumerate(perm):
            corr = np.fft.ifft(dec_fft[p] * ref_fft[r]).real
            shift = int(np.argmax(corr))
            ref_shifted = np.roll(ref_sym[r], shift)
            neq = (dec_sym[p, skip_sym:].real < 0) != (ref_shifted[skip_sym:].real < 0)
            neq2 = (dec_sym[p, skip_sym:].imag < 0) != (ref_shifted[skip_sym:].imag < 0)
            errors += int(np.sum(neq)) + int(np.sum(neq2))
        ber = errors / (2 * counted)
        if best_ber is None or ber < best_ber:
            best_ber = ber

    if best_ber >= 0.4:
        raise AlignmentError(f"no alignment below BER 0.4 (best {best_ber:.3f})")

    if best_ber == 0.0:
        q_db = math.inf
    else:
        q_db = 20.0 * math.log10(math.sqrt(2.0) * float(erfcinv(2.0 * best_ber)))
    return RxMetrics(ber=best_ber, q_factor_db=q_db, evm_percent=evm, bits_counted=2 * counted)


def emulate_adc(sig: DualPolSignal, adc_rate: float) -> DualPolSignal:
    """Resample to an ADC rate and back (rational-rate polyphase passes),
    emulating acquisition below 2 samples per symbol. Off the main path by
    default."""
    if adc_rate <= 0.0 or adc_rate >= sig.sample_rate:
        raise ValueError("adc_rate must be positive and below the signal rate")
    ratio = Fraction(adc_rate / sig.sample_rate).limit_denominator(1000)
    x = resample_poly(sig.x, ratio.numerator, ratio.denominator)
    y = resample_poly(sig.y, ratio.numerator, ratio.denominator)
    x2 = resample_poly(x, ratio.denominator, ratio.numerator)[: len(sig)]
    y2 = resample_poly(y, ratio.denominator, ratio.numerator)[: len(sig)]
    if x2.size < len(sig):
        x2 = np.pad(x2, (0, len(sig) - x2.size))
        y2 = np.pad(y2, (0, len(sig) - y2.size))
    return DualPolSignal(x2, y2, sig.sample_rate)


def export_reference_symbols(path, symbols: np.ndarray):
    """Reference symbols to a binary .npy file."""
    np.save(path, np.asarray(symbols, dtype=np.complex128))


def export_bits(path, bits: np.ndarray):
    """Decided or reference bits to a binary .npy file."""
    np.save(path, np.asarray(bits, dtype=np.uint8))
