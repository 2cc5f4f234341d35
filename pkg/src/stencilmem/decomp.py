"""2D domain decomposition and its memory-traffic overheads.

Rank counts are factorized onto a (px, py) process grid; px cuts the inner
(contiguous) dimension, py the outer one. Prime rank counts force a pure
inner cut, which shrinks the local row length and makes the per-row halo
and partial-cache-line overheads relatively expensive - the source of the
upward balance spikes at prime rank counts.
"""

from __future__ import annotations

from dataclasses import dataclass

from .balance import WaPolicy, layer_condition
from .kernels import KernelSpec, derive_stream_counts, element_size


def is_prime(n: int) -> bool:
    if n < 2:
        return False
    d = 2
    while d * d <= n:
        if n % d == 0:
            return False
        d += 1
    return True


def _prime_factors_desc(n: int) -> list[int]:
    factors = []
    d = 2
    while d * d <= n:
        while n % d == 0:
            factors.append(d)
            n //= d
        d += 1
    if n > 1:
        factors.append(n)
    factors.sort(reverse=True)
    return factors


def factorize_ranks(p: int) -> tuple[int, int]:
    """Split p ranks onto a (px, py) grid.

    Composite counts distribute prime factors greedily, largest first, onto
    the dimension with the smaller running product, starting with the outer
    y-dimension on ties. A prime count cannot be spread and cuts the inner
    x-dimension as a whole: (p, 1).
    """
    if p < 1:
        raise ValueError("rank count must be >= 1")
    if p == 1:
        return (1, 1)
    factors = _prime_factors_desc(p)
    if len(factors) == 1:
        return (p, 1)
    px = py = 1
    for f in factors:
        if py <= px:
            py *= f
        else:
            px *= f
    return px, py


def local_extents(extent: int, parts: int) -> list[int]:
    """Split `extent` cells into `parts` near-equal chunks.

    Each chunk is floor(extent/parts) or one more; the extent mod parts
    larger chunks go to the lower ranks.
    """
    if parts < 1:
        raise ValueError("parts must be >= 1")
    if extent < parts:
        raise ValueError(f"cannot split extent {extent} into {parts} parts")
    base, rem = divmod(extent, parts)
    return [base + 1 if i < rem else base for i in range(parts)]


@dataclass(frozen=True)
class Decomposition:
    ranks: int
    px: int
    py: int
    local_inner_widths: tuple[int, ...]
    local_outer_heights: tuple[int, ...]

    @property
    def min_inner_width(self) -> int:
        return min(self.local_inner_widths)


def decompose(p: int, extent_x: int, extent_y: int | None = None) -> Decomposition:
    """Factorize p ranks over an extent_x * extent_y grid."""
    if extent_y is None:
        extent_y = extent_x
    px, py = factorize_ranks(p)
    return Decomposition(p, px, py,
                         tuple(local_extents(extent_x, px)),
                         tuple(local_extents(extent_y, py)))


def halo_read_overhead(inner: int, extra_lines: int = 1, line_elems: int = 8) -> float:
    """Extra traffic fraction a read stream pays for row-boundary halo lines.

    Each local row of `inner` elements drags in up to `extra_lines` cache
    lines of halo data, so the overhead is
    extra_lines*line_elems / (inner + extra_lines*line_elems);
    3.57% at inner=216, vanishing for long rows.
    """
    if inner < 1:
        raise ValueError("inner extent must be >= 1")
    extra = extra_lines * line_elems
    return extra / (inner + extra)


@dataclass(frozen=True)
class RankPrediction:
    ranks: int
    px: int
    py: int
    min_inner_width: int
    bytes_per_it: float
    lc_fulfilled: bool

    @property
    def prime(self) -> bool:
        return is_prime(self.ranks)


def predict_rank_sweep(kernel: KernelSpec, extent: int, ranks,
                       machine, policy: WaPolicy,
                       line_elems: int = 8) -> list[RankPrediction]:
    """Predicted bytes/iteration of `kernel` for each rank count.

    For every p the grid is decomposed, layer conditions are evaluated at
    the smallest local inner width against the per-process cache share, and
    the balance is inflated by the halo read overhead plus - when local
    rows are not line-aligned - a partial-line write-allocate of the same
    magnitude on the evadable write streams. A single rank (and any pure
    outer cut) has no inner halos and reproduces the plain scenario.
    """
    counts = derive_stream_counts(kernel)
    esize = element_size(kernel)
    out = []
    for p in ranks:
        dec = decompose(p, extent)
        width = dec.min_inner_width
        lc = layer_condition(kernel, width, machine.effective_cache_per_process(p))
        rd = counts.rd_lcf if lc.fulfilled else counts.rd_lcb
        if dec.px == 1:
            h = 0.0
            wa_extra = 0.0
        else:
            h = halo_read_overhead(width, line_elems=line_elems)
            wa_extra = counts.evadable_writes * h if width % line_elems else 0.0
        bytes_per_it = esize * (rd * (1.0 + h) + counts.wr
                                + policy.extra_fills(counts.evadable_writes)
                                + wa_extra)
        out.append(RankPrediction(p, dec.px, dec.py, width, bytes_per_it,
                                  lc.fulfilled))
    return out
