"""Analytic computational-cost model for the block-wise equalizers.

Counts are real operations per propagated sample, assuming radix-2
transforms (one complex FFT of length N costs 2N log2 N real mults and
3N log2 N real adds, but the counts below follow the 4-FFT-per-step
bookkeeping: 8 N log2 N of each per step and polarization pair), complex
multiply = 4 real mults + 2 real adds, and phase exponentials taken from a
lookup table (excluded from the counts). Every block of N samples yields
N - M useful outputs, hence the N/(N-M) factor.

Per step and sample:

* SSFM:  N (8 log2 N + 21) / (N - M) mults, N (8 log2 N + 11) / (N - M) adds
* ESSFM: N (8 log2 N + 21 + Nc) / (N - M) mults, N (8 log2 N + 11 + 2 Nc) / (N - M) adds
* FFE (single pass): N (8 log2 N + 8) / (N - M) mults, N (8 log2 N + 4) / (N - M) adds

Latency is proxied by the number of cascaded FFT pairs (1 for the FFE, Ns
otherwise) and power consumption by the multiplication count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .dbp import ALGORITHMS, estimate_channel_memory


@dataclass(frozen=True)
class CostReport:
    """Operation counts for one equalizer configuration."""

    algorithm: str
    block_len: int       # N
    overlap: int         # M
    n_coeffs: int        # Nc (0 unless essfm)
    num_steps: int       # Ns (1 for ffe)
    mults_per_sample: float
    adds_per_sample: float
    latency_proxy: int   # cascaded FFT pairs

    @property
    def mults_rounded(self) -> int:
        return round(self.mults_per_sample)

    @property
    def adds_rounded(self) -> int:
        return round(self.adds_per_sample)

    @property
    def power_proxy(self) -> float:
        """Relative power consumption, declared proxy: the mult count."""
        return self.mults_per_sample


def cost_per_sample(
    algorithm: str,
    block_len: int,
    overlap: int,
    n_coeffs: int = 0,
    num_steps: int = 1,
) -> CostReport:
    """Evaluate the closed-form operation counts.

    Parameters
    ----------
    algorithm : str
        "ffe", "ssfm" or "essfm".
    block_len : int
        FFT block length N, a power of two, > overlap.
    overlap : int
        Overlap M discarded per block, >= 0.
    n_coeffs : int
        Side-coefficient count Nc of the enhanced sub-step (essfm only).
    num_steps : int
        Split-step count Ns; per-step counts are scaled by Ns for ssfm and
        essfm. Ignored by ffe.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {algorithm!r}")
    n, m = block_len, overlap
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"block_len must be a power of two, got {n}")
    if not (0 <= m < n):
        raise ValueError("overlap must satisfy 0 <= overlap < block_len")
    if n_coeffs < 0:
        raise ValueError("n_coeffs must be >= 0")
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")

    log2n = math.log2(n)
    expand = n / (n - m)
    if algorithm == "ffe":
        mults = expand * (8.0 * log2n + 8.0)
        adds = expand * (8.0 * log2n + 4.0)
        return CostReport("ffe", n, m, 0, 1, mults, adds, latency_proxy=1)

    nc = n_coeffs if algorithm == "essfm" else 0
    mults = num_steps * expand * (8.0 * log2n + 21.0 + nc)
    adds = num_steps * expand * (8.0 * log2n + 11.0 + 2.0 * nc)
    return CostReport(algorithm, n, m, nc, num_steps, mults, adds, latency_proxy=num_steps)


def optimize_block_length(
    algorithm: str,
    overlap: int,
    n_coeffs: int = 0,
    candidates: Iterable[int] = (),
) -> tuple[int, CostReport]:
    """Pick the candidate block length minimizing per-step mults per sample.

    Ties break toward the smaller block (lower latency). Candidates must all
    exceed the overlap.
    """
    cands = sorted(set(int(c) for c in candidates))
    if not cands:
        raise ValueError("candidate set must be non-empty")
    if cands[0] <= overlap:
        raise ValueError("all candidates must exceed the overlap")
    best: tuple[int, CostReport] | None = None
    for n in cands:
        rep = cost_per_sample(algorithm, n, overlap, n_coeffs=n_coeffs, num_steps=1)
        if best is None or rep.mults_per_sample < best[1].mults_per_sample:
            best = (n, rep)
    return best


def sweep_link_length(
    algorithms: Sequence[str],
    lengths_km: Sequence[float],
    beta2_mag: float,
    bandwidth_hz: float,
    n_coeffs: int = 0,
) -> list[CostReport]:
    """Per-step cost versus link length.

    For each length the overlap is set to the estimated channel memory
    (power-of-two round-up), the block length to 8x that, and the per-step
    (Ns = 1) cost evaluated for each algorithm. Rows are ordered by length,
    then by the given algorithm order.
    """
    if any(l <= 0.0 for l in lengths_km):
        raise ValueError("lengths must be positive")
    rows = []
    for length in lengths_km:
        m = estimate_channel_memory(beta2_mag, length, bandwidth_hz)
        n = 8 * m
        for alg in algorithms:
            rows.append(cost_per_sample(alg, n, m, n_coeffs=n_coeffs, num_steps=1))
    return rows


def cost_table_csv(reports: Sequence[CostReport]) -> str:
    """Render reports as CSV. relative_pct is each row's mult count as a
    percentage of the largest mult count in the table."""
    if not reports:
        raise ValueError("no reports to render")
    ref = max(r.mults_per_sample for r in reports)
    lines = ["algorithm,N,M,Nc,Ns,mults_per_sample,adds_per_sample,latency_proxy,relative_pct"]
    for r in reports:
        lines.append(
            f"{r.algorithm},{r.block_len},{r.overlap},{r.n_coeffs},{r.num_steps},"
            f"{r.mults_per_sample:.2f},{r.adds_per_sample:.2f},{r.latency_proxy},"
            f"{100.0 * r.mults_per_sample / ref:.1f}"
        )
    return "\n".join(lines) + "\n"
