"""Kernel intermediate representation for 2D stencil loop nests.

A kernel is described by the set of array elements it touches per loop
iteration: each access names an array, an offset (dj, dk) relative to the
loop indices (j inner/contiguous, k outer), and whether it reads or writes.
From this the per-iteration stream counts are derived, which feed the
code-balance model in :mod:`stencilmem.balance`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

READ = "read"
WRITE = "write"

# Sanity bound for stencil offsets; anything larger is almost certainly a
# mistranscribed kernel rather than a real stencil.
MAX_OFFSET = 8


class KernelError(ValueError):
    """Raised for structurally invalid kernels, grids, or suite files."""


@dataclass(frozen=True)
class GridSpec:
    """2D grid with the inner (j) dimension contiguous in memory.

    ``halo_lo``/``halo_hi`` pad both dimensions, so the allocated row width
    is ``halo_lo + inner_extent + halo_hi`` and the allocated row count is
    ``halo_lo + outer_extent + halo_hi``.
    """

    inner_extent: int
    outer_extent: int
    halo_lo: int = 0
    halo_hi: int = 0
    element_size: int = 8

    def __post_init__(self):
        if self.inner_extent < 1 or self.outer_extent < 1:
            raise KernelError("grid extents must be >= 1")
        if self.halo_lo < 0 or self.halo_hi < 0:
            raise KernelError("halo padding must be non-negative")
        if self.element_size not in (4, 8):
            raise KernelError("element_size must be 4 or 8 bytes")

    @property
    def row_stride(self) -> int:
        """Allocated elements per row, including halo padding."""
        return self.halo_lo + self.inner_extent + self.halo_hi

    @property
    def alloc_rows(self) -> int:
        return self.halo_lo + self.outer_extent + self.halo_hi

    def resized(self, inner_extent: int, outer_extent: int) -> "GridSpec":
        """Same halos and element size on different extents (desk-scale runs)."""
        return GridSpec(inner_extent, outer_extent, self.halo_lo, self.halo_hi,
                        self.element_size)


@dataclass(frozen=True)
class ArrayDecl:
    name: str
    grid: GridSpec
    base_alignment: int = 64

    def __post_init__(self):
        a = self.base_alignment
        if a < self.grid.element_size or a & (a - 1):
            raise KernelError(
                f"array {self.name!r}: base_alignment must be a power of two "
                f">= element_size")

    @property
    def alloc_bytes(self) -> int:
        return self.grid.alloc_rows * self.grid.row_stride * self.grid.element_size


@dataclass(frozen=True)
class Access:
    """One per-iteration array reference at offset (dj, dk) from (j, k)."""

    array: ArrayDecl
    dj: int
    dk: int
    mode: str  # READ or WRITE

    def __post_init__(self):
        if self.mode not in (READ, WRITE):
            raise KernelError(f"access mode must be {READ!r} or {WRITE!r}")


@dataclass(frozen=True)
class StreamCounts:
    """Per-iteration element stream counts of a kernel.

    ``rd_lcf`` counts one leading-edge read per read array (all layer
    conditions fulfilled); ``rd_lcb`` counts one read per distinct grid row
    each read array touches (all layer conditions broken); ``wr`` counts
    written elements; ``rdwr`` counts written elements that are also read
    at the very same offset and therefore never need a write-allocate.
    """

    n_arrays: int
    rd_lcf: int
    rd_lcb: int
    wr: int
    rdwr: int

    def __post_init__(self):
        if min(self.n_arrays, self.rd_lcf, self.rd_lcb, self.wr, self.rdwr) < 0:
            raise KernelError("stream counts must be non-negative")

    @property
    def evadable_writes(self) -> int:
        """Write streams whose allocate could be evaded (wr - rdwr)."""
        return self.wr - self.rdwr


@dataclass(frozen=True)
class KernelSpec:
    """A stencil loop nest: accesses, flop count, and optional loop bounds.

    Loop bounds are inclusive (lo, hi) pairs in interior coordinates
    (0 .. extent-1); ``None`` means the full interior of whatever grid the
    kernel runs on.
    """

    name: str
    accesses: tuple[Access, ...]
    flops_per_it: int = 0
    loop_j_range: tuple[int, int] | None = None
    loop_k_range: tuple[int, int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "accesses", tuple(self.accesses))

    @property
    def arrays(self) -> tuple[ArrayDecl, ...]:
        """Distinct arrays in order of first appearance."""
        seen: dict[str, ArrayDecl] = {}
        for acc in self.accesses:
            seen.setdefault(acc.array.name, acc.array)
        return tuple(seen.values())

    def reads(self) -> tuple[Access, ...]:
        return tuple(a for a in self.accesses if a.mode == READ)

    def writes(self) -> tuple[Access, ...]:
        return tuple(a for a in self.accesses if a.mode == WRITE)

    def read_dk_offsets(self) -> dict[str, set[int]]:
        """Distinct dk offsets of the read accesses, per array name."""
        rows: dict[str, set[int]] = {}
        for acc in self.reads():
            rows.setdefault(acc.array.name, set()).add(acc.dk)
        return rows


def validate(kernel: KernelSpec, max_offset: int = MAX_OFFSET) -> list[str]:
    """Check kernel invariants; returns one diagnostic string per violation.

    An empty list means the kernel is valid. Diagnostics name the offending
    access so suite files can be fixed by hand.
    """
    diags = []
    if not kernel.accesses:
        diags.append(f"{kernel.name}: kernel has no accesses")
    if kernel.flops_per_it < 0:
        diags.append(f"{kernel.name}: flops_per_it must be non-negative")

    seen: set[tuple[str, int, int, str]] = set()
    writes_per_array: dict[str, int] = {}
    for acc in kernel.accesses:
        key = (acc.array.name, acc.dj, acc.dk, acc.mode)
        if key in seen:
            diags.append(f"{kernel.name}: duplicate access {key}")
        seen.add(key)
        if abs(acc.dj) > max_offset or abs(acc.dk) > max_offset:
            diags.append(f"{kernel.name}: offset out of range for "
                         f"{acc.array.name}({acc.dj},{acc.dk})")
        if acc.mode == WRITE:
            writes_per_array[acc.array.name] = writes_per_array.get(acc.array.name, 0) + 1

    for name, count in writes_per_array.items():
        if count > 1:
            diags.append(f"{kernel.name}: array {name!r} written at {count} "
                         f"offsets; one written element per array per iteration")

    grids = {a.grid for a in kernel.arrays}
    if len(grids) > 1 and len({g.element_size for g in grids}) > 1:
        diags.append(f"{kernel.name}: arrays mix element sizes")
    return diags


def derive_stream_counts(kernel: KernelSpec) -> StreamCounts:
    """Derive the per-iteration stream counts from the access list.

    Raises :class:`KernelError` if the kernel fails validation.
    """
    diags = validate(kernel)
    if diags:
        raise KernelError("; ".join(diags))

    arrays = {a.name for a in kernel.arrays}
    read_rows = kernel.read_dk_offsets()
    read_offsets = {(a.array.name, a.dj, a.dk) for a in kernel.reads()}
    writes = kernel.writes()

    rdwr = sum(1 for w in writes if (w.array.name, w.dj, w.dk) in read_offsets)
    return StreamCounts(
        n_arrays=len(arrays),
        rd_lcf=len(read_rows),
        rd_lcb=sum(len(rows) for rows in read_rows.values()),
        wr=len({w.array.name for w in writes}),
        rdwr=rdwr,
    )


def element_size(kernel: KernelSpec) -> int:
    """Element size shared by the kernel's arrays."""
    sizes = {a.grid.element_size for a in kernel.arrays}
    if len(sizes) != 1:
        raise KernelError(f"{kernel.name}: arrays mix element sizes")
    return sizes.pop()


@dataclass
class KernelSuite:
    """A set of kernels sharing grid and array declarations."""

    grids: dict[str, GridSpec] = field(default_factory=dict)
    arrays: dict[str, ArrayDecl] = field(default_factory=dict)
    kernels: dict[str, KernelSpec] = field(default_factory=dict)

    def __iter__(self):
        return iter(self.kernels.values())


def load_suite(path: str | Path) -> KernelSuite:
    """Load a kernel-suite JSON file.

    Expected layout::

        {"grids":  {"name": {"inner_extent": ..., "outer_extent": ...,
                             "halo_lo": ..., "halo_hi": ..., "element_size": ...}},
         "arrays": {"name": {"grid": "gridname", "base_alignment": 64}},
         "kernels": [{"name": ..., "flops_per_it": ...,
                      "accesses": [{"array": ..., "dj": 0, "dk": 0, "mode": "read"}]}]}
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise KernelError(f"{path}: not valid JSON: {exc}") from exc

    for key in ("grids", "arrays", "kernels"):
        if key not in doc:
            raise KernelError(f"{path}: missing top-level key {key!r}")

    suite = KernelSuite()
    for name, g in doc["grids"].items():
        try:
            suite.grids[name] = GridSpec(
                inner_extent=g["inner_extent"], outer_extent=g["outer_extent"],
                halo_lo=g.get("halo_lo", 0), halo_hi=g.get("halo_hi", 0),
                element_size=g.get("element_size", 8))
        except (KeyError, KernelError) as exc:
            raise KernelError(f"{path}: grid {name!r}: {exc}") from exc

    for name, a in doc["arrays"].items():
        gname = a.get("grid")
        if gname not in suite.grids:
            raise KernelError(f"{path}: array {name!r} references unknown grid {gname!r}")
        suite.arrays[name] = ArrayDecl(name, suite.grids[gname],
                                       a.get("base_alignment", 64))

    for k in doc["kernels"]:
        try:
            name = k["name"]
            accesses = []
            for acc in k["accesses"]:
                aname = acc["array"]
                if aname not in suite.arrays:
                    raise KernelError(f"kernel {name!r} references undeclared "
                                      f"array {aname!r}")
                accesses.append(Access(suite.arrays[aname], int(acc["dj"]),
                                       int(acc["dk"]), acc["mode"]))
            kernel = KernelSpec(
                name=name, accesses=tuple(accesses),
                flops_per_it=int(k.get("flops_per_it", 0)),
                loop_j_range=tuple(k["loop_j_range"]) if "loop_j_range" in k else None,
                loop_k_range=tuple(k["loop_k_range"]) if "loop_k_range" in k else None)
        except KeyError as exc:
            raise KernelError(f"{path}: kernel entry missing field {exc}") from exc
        if name in suite.kernels:
            raise KernelError(f"{path}: duplicate kernel name {name!r}")
        diags = validate(kernel)
        if diags:
            raise KernelError(f"{path}: " + "; ".join(diags))
        suite.kernels[name] = kernel
    return suite


def data_path(name: str) -> Path:
    """Path of a bundled data file (kernel suites, machine configs, fixtures)."""
    return Path(__file__).parent / "data" / name
