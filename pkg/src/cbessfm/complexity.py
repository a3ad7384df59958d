"""Real-multiplication count of the coupled-band ESSFM per 2D symbol.

Conventions: complex products cost 3 real multiplications, a size-M complex
FFT with the split-radix algorithm costs ``M log2 M - 3M + 4``, and a real
FFT counts as half a complex one.  Per overlap-save block (both
polarizations) the receiver needs

* 4 size-N complex FFTs (block transform and back, two polarizations),
* ``4 N_sb N_st`` size-N/N_sb complex FFTs around the nonlinear steps,
* ``2 N_sb N_st`` size-N/N_sb real FFTs for the intensity filter,
* ``N_st + 1`` dispersion steps of ``6N`` each,
* ``N_st`` rotations: powers ``4N``, symmetric intra filters ``N``,
  inter-band filters ``3N(N_sb - 1)/2``, phase products ``6N``.

Summed and divided by the ``2 (N - N_ov) / n`` useful 2D symbols of a block,
this is exactly :func:`rms_per_2d`.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from math import log2

from .dsp import as_fraction, is_power_of_two


def _check(block_size: int, overlap: int, num_subbands: int) -> None:
    if not is_power_of_two(block_size):
        raise ValueError(f"block size {block_size} is not a power of two")
    if not 0 <= overlap < block_size:
        raise ValueError(f"overlap {overlap} must lie in [0, {block_size})")
    if num_subbands < 1 or block_size % num_subbands:
        raise ValueError(f"block size {block_size} is not divisible by {num_subbands} subbands")


def rms_per_2d(sps, block_size: int, overlap: int, num_steps: int, num_subbands: int) -> float:
    """Real multiplications per 2D symbol for the given blocking and cascade size."""
    _check(block_size, overlap, num_subbands)
    n = float(as_fraction(sps))
    N, Nst, Nsb = block_size, num_steps, num_subbands
    bracket = (
        (5 * Nst + 4) * log2(N / Nsb)
        + Nst * (3 * Nsb + 1) / 2
        + 4 * log2(Nsb)
        - 6
        + (20 * Nsb * Nst + 16) / N
    )
    return n / 2 * N / (N - overlap) * bracket


def split_radix_cfft_rms(size: int) -> float:
    return size * log2(size) - 3 * size + 4


@dataclass(frozen=True)
class ComplexityBreakdown:
    cfft_full_count: int
    cfft_sub_count: int
    rfft_count: int
    gvd_step_count: int
    nlpr_count: int
    cfft_full_rms: float
    cfft_sub_rms: float
    rfft_rms: float
    gvd_rms: float
    nlpr_rms: float
    rms_per_block: float
    symbols_2d_per_block: float
    rms_per_2d: float


def breakdown(sps, block_size: int, overlap: int, num_steps: int, num_subbands: int) -> ComplexityBreakdown:
    """Itemized per-block operation counts; ``num_steps=0`` gives the EDC-shaped cost."""
    _check(block_size, overlap, num_subbands)
    N, Nst, Nsb = block_size, num_steps, num_subbands
    M = N // Nsb
    cfft_full = 4
    cfft_sub = 4 * Nsb * Nst
    rfft = 2 * Nsb * Nst
    cfft_full_rms = cfft_full * split_radix_cfft_rms(N)
    cfft_sub_rms = cfft_sub * split_radix_cfft_rms(M) if cfft_sub else 0.0
    rfft_rms = rfft * split_radix_cfft_rms(M) / 2 if rfft else 0.0
    gvd_rms = (Nst + 1) * 6 * N
    nlpr_rms = Nst * (4 * N + N + 3 * N * (Nsb - 1) / 2 + 6 * N)
    per_block = cfft_full_rms + cfft_sub_rms + rfft_rms + gvd_rms + nlpr_rms
    symbols = 2 * (N - overlap) / float(as_fraction(sps))
    return ComplexityBreakdown(
        cfft_full_count=cfft_full,
        cfft_sub_count=cfft_sub,
        rfft_count=rfft,
        gvd_step_count=Nst + 1,
        nlpr_count=Nst,
        cfft_full_rms=cfft_full_rms,
        cfft_sub_rms=cfft_sub_rms,
        rfft_rms=rfft_rms,
        gvd_rms=gvd_rms,
        nlpr_rms=nlpr_rms,
        rms_per_block=per_block,
        symbols_2d_per_block=symbols,
        rms_per_2d=per_block / symbols,
    )


def breakdown_for(cfg) -> ComplexityBreakdown:
    """Breakdown for a :class:`~cbessfm.dbp.DbpConfig`."""
    b = cfg.blocking
    return breakdown(b.sps, b.block_size, b.overlap, cfg.num_steps, cfg.num_subbands)


def complexity_table(sps, block_size: int, overlap: int, steps, subbands) -> list[dict]:
    rows = []
    for nsb in subbands:
        for nst in steps:
            rows.append({
                "n": str(as_fraction(sps)),
                "N": block_size,
                "N_ov": overlap,
                "N_st": nst,
                "N_sb": nsb,
                "rms_per_2d": rms_per_2d(sps, block_size, overlap, nst, nsb),
            })
    return rows


def table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()

