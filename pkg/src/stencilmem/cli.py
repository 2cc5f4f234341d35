"""Command-line front end.

Subcommands::

    analyze      per-kernel stream counts, balance bounds, scaling class
    simulate     cache-simulator balance vs. the analytic scenario
    prime-sweep  predicted bytes/iteration over a rank-count range (CSV)
    compare      model balance vs. a measurement CSV, with error summary
    store-ratio  traffic/store-volume ratio of an n-stream store benchmark
    halo-copy    read/write ratio of the strip-mined copy benchmark

Exit codes: 0 success, 1 tolerance check failed (only with --check),
2 malformed input or usage error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path

from . import balance, cachesim, decomp
from .kernels import KernelError, KernelSpec, KernelSuite, derive_stream_counts, load_suite
from .roofline import MachineModel, load_machine

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2

MEASUREMENT_COLUMNS = ("kernel", "ranks", "read_gbytes", "write_gbytes",
                       "call_count", "timesteps", "grid_points")


class InputError(Exception):
    pass


@dataclass(frozen=True)
class MeasurementRecord:
    """One row of a measurement CSV; volumes are aggregated over all ranks."""

    kernel: str
    ranks: int
    read_gbytes: float
    write_gbytes: float
    call_count: int
    timesteps: int
    grid_points: int

    def __post_init__(self):
        if min(self.ranks, self.call_count, self.timesteps, self.grid_points) <= 0:
            raise InputError(f"measurement {self.kernel!r}: counts must be positive")
        if self.read_gbytes < 0 or self.write_gbytes < 0:
            raise InputError(f"measurement {self.kernel!r}: negative data volume")
        if self.read_gbytes + self.write_gbytes == 0:
            raise InputError(f"measurement {self.kernel!r}: zero data volume")

    @property
    def bytes_per_it(self) -> float:
        total = (self.read_gbytes + self.write_gbytes) * 1e9
        return total / (self.call_count * self.timesteps * self.grid_points)


def read_measurements(path: str | Path) -> list[MeasurementRecord]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in MEASUREMENT_COLUMNS:
            if col not in header:
                raise InputError(f"{path}: missing column {col!r}")
        records = []
        for i, row in enumerate(reader, start=2):
            try:
                records.append(MeasurementRecord(
                    kernel=row["kernel"],
                    ranks=int(row["ranks"]),
                    read_gbytes=float(row["read_gbytes"]),
                    write_gbytes=float(row["write_gbytes"]),
                    call_count=int(row["call_count"]),
                    timesteps=int(row["timesteps"]),
                    grid_points=int(row["grid_points"])))
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}:{i}: bad measurement row: {exc}") from exc
    return records


def _suite(path) -> KernelSuite:
    try:
        return load_suite(path)
    except (OSError, KernelError) as exc:
        raise InputError(str(exc)) from exc


def _machine(path) -> MachineModel:
    try:
        return load_machine(path)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc


SCENARIOS = ("min", "lcf-wa", "lcb", "max", "speci2m", "nt-speci2m")


def model_balance(kernel: KernelSpec, scenario: str, machine: MachineModel,
                  no_evasion: frozenset[str] = frozenset()) -> float:
    """Model bytes/iteration of one kernel under a named scenario."""
    table = balance.scenario_table(kernel)
    if kernel.name in no_evasion and scenario in ("speci2m", "nt-speci2m"):
        return table.lcf_wa.bytes_per_it
    if scenario == "min":
        return table.minimum.bytes_per_it
    if scenario == "lcf-wa":
        return table.lcf_wa.bytes_per_it
    if scenario == "lcb":
        return table.lcb.bytes_per_it
    if scenario == "max":
        return table.maximum.bytes_per_it
    counts = derive_stream_counts(kernel)
    esize = kernel.arrays[0].grid.element_size
    if scenario == "speci2m":
        policy = balance.evasion(machine.speci2m_factor)
    elif scenario == "nt-speci2m":
        policy = balance.nt_plus_evasion(machine.nt_factor, machine.speci2m_factor)
    else:
        raise InputError(f"unknown scenario {scenario!r}")
    return balance.code_balance(counts, True, policy, esize)


def _emit_table(headers, rows, as_csv: bool, out=None):
    out = out or sys.stdout
    if as_csv:
        w = csv.writer(out)
        w.writerow(headers)
        w.writerows(rows)
        return
    cells = [[str(c) for c in row] for row in rows]
    widths = [max(len(h), *(len(r[i]) for r in cells)) if cells else len(h)
              for i, h in enumerate(headers)]
    def fmt(row):
        first, *rest = (c.ljust(w) if i == 0 else c.rjust(w)
                        for i, (c, w) in enumerate(zip(row, widths)))
        return ("  ".join([first] + rest)).rstrip()
    print(fmt(headers), file=out)
    print("-" * (sum(widths) + 2 * (len(widths) - 1)), file=out)
    for row in cells:
        print(fmt(row), file=out)


def _num(v) -> str:
    return f"{v:g}"


# -- subcommands ---------------------------------------------------------------


def cmd_analyze(args) -> int:
    suite = _suite(args.suite)
    _machine(args.machine)
    rows = []
    for kernel in suite:
        c = derive_stream_counts(kernel)
        t = balance.scenario_table(kernel)
        rows.append([kernel.name, c.n_arrays, c.rd_lcf, c.rd_lcb, c.wr, c.rdwr,
                     kernel.flops_per_it,
                     _num(t.minimum.bytes_per_it), _num(t.lcf_wa.bytes_per_it),
                     _num(t.lcb.bytes_per_it), _num(t.maximum.bytes_per_it),
                     balance.classify(c)])
    _emit_table(["kernel", "arrays", "rd_lcf", "rd_lcb", "wr", "rdwr",
                 "flops_it", "min", "lcf_wa", "lcb", "max", "class"],
                rows, args.csv)
    return EXIT_OK


def _parse_policy(args) -> cachesim.WritePolicySim:
    if args.policy == "always":
        return cachesim.AlwaysAllocate()
    if args.policy == "nt":
        return cachesim.NtBypass()
    if args.policy == "claim":
        return cachesim.AutoClaim(buffer_lines=args.claim_buffer, active=True)
    if args.policy == "claim-inactive":
        return cachesim.AutoClaim(buffer_lines=args.claim_buffer, active=False)
    raise InputError(f"unknown policy {args.policy!r}")


def _sim_levels(machine: MachineModel, mode: str) -> list[cachesim.CacheLevelConfig]:
    if mode == "effective":
        cap = int(machine.effective_cache_per_process(1)) // 64 * 64
        return [cachesim.CacheLevelConfig(capacity=cap)]
    return [cachesim.CacheLevelConfig(capacity=machine.cache_l1),
            cachesim.CacheLevelConfig(capacity=machine.cache_l2),
            cachesim.CacheLevelConfig(capacity=machine.cache_l3)]


def cmd_simulate(args) -> int:
    if args.grid < 1:
        raise InputError("--grid must be >= 1")
    if args.dump_trace and not args.kernel:
        raise InputError("--dump-trace needs --kernel")
    suite = _suite(args.suite)
    machine = _machine(args.machine)
    policy = _parse_policy(args)
    levels = _sim_levels(machine, args.cache_mode)
    # evasion policies are checked against the no-allocate floor, the rest
    # against the fulfilled-LC + write-allocate scenario
    evading = (isinstance(policy, cachesim.NtBypass)
               or (isinstance(policy, cachesim.AutoClaim) and policy.active))
    names = [args.kernel] if args.kernel else list(suite.kernels)
    unknown = [n for n in names if n not in suite.kernels]
    if unknown:
        raise InputError(f"unknown kernel(s): {', '.join(unknown)}")

    rows = []
    worst = 0.0
    for name in names:
        kernel = suite.kernels[name]
        grid = kernel.arrays[0].grid.resized(args.grid, args.grid)
        table = balance.scenario_table(kernel)
        ref = table.minimum.bytes_per_it if evading else table.lcf_wa.bytes_per_it
        try:
            sim = cachesim.measure_balance(kernel, grid, levels, policy)
        except (KernelError, ValueError) as exc:
            rows.append([name, _num(ref), "error", str(exc)])
            continue
        delta = (sim - ref) / ref * 100
        worst = max(worst, abs(delta))
        rows.append([name, _num(ref), f"{sim:.3f}", f"{delta:+.2f}%"])
        if args.dump_trace and args.kernel:
            cachesim.dump_trace(cachesim.gen_trace(kernel, grid), args.dump_trace)
    _emit_table(["kernel", "model", "simulated", "delta"], rows, args.csv)
    if args.check and worst > args.tolerance:
        print(f"check failed: worst delta {worst:.2f}% > {args.tolerance:g}%",
              file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_replay(args) -> int:
    path = Path(args.trace)
    if not path.exists():
        raise InputError(f"{path}: no such file")
    machine = _machine(args.machine)
    levels = _sim_levels(machine, args.cache_mode)
    policy = _parse_policy(args)
    t = cachesim.simulate(cachesim.load_trace(path), levels, policy,
                          access_bytes=args.access_bytes)
    print(f"read_bytes={t.read_bytes} write_bytes={t.write_bytes} "
          f"wa_avoided_bytes={t.wa_avoided_bytes}")
    return EXIT_OK


def _parse_int_range(spec: str, minimum: int, what: str) -> list[int]:
    try:
        if ".." in spec:
            lo, hi = spec.split("..", 1)
            lo, hi = int(lo), int(hi)
            if lo < minimum or hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        values = [int(p) for p in spec.split(",")]
        if any(v < minimum for v in values):
            raise ValueError
        return values
    except ValueError:
        raise InputError(f"bad {what} range {spec!r}; use e.g. "
                         f"{minimum}..72 or 8,19,72")


def cmd_prime_sweep(args) -> int:
    suite = _suite(args.suite)
    machine = _machine(args.machine)
    ranks = _parse_int_range(args.ranks, 1, "rank")
    if args.wa == "full":
        policy = balance.FULL_WA
    elif args.wa == "none":
        policy = balance.NO_WA
    elif args.wa == "nt-speci2m":
        policy = balance.nt_plus_evasion(machine.nt_factor, machine.speci2m_factor)
    else:
        policy = balance.evasion(machine.speci2m_factor)
    writer = csv.writer(sys.stdout)
    writer.writerow(["kernel", "p", "bytes_per_it", "prime"])
    extent = next(iter(suite.grids.values())).inner_extent
    for kernel in suite:
        for pred in decomp.predict_rank_sweep(kernel, extent, ranks, machine, policy):
            writer.writerow([kernel.name, pred.ranks, f"{pred.bytes_per_it:.4f}",
                             1 if pred.prime else 0])
    return EXIT_OK


def cmd_compare(args) -> int:
    suite = _suite(args.suite)
    machine = _machine(args.machine)
    records = read_measurements(args.measurements)
    no_evasion = frozenset(args.no_evasion.split(",")) if args.no_evasion else frozenset()
    rows = []
    errs = []
    for rec in records:
        if rec.kernel not in suite.kernels:
            raise InputError(f"{args.measurements}: kernel {rec.kernel!r} "
                             f"not in suite")
        model = model_balance(suite.kernels[rec.kernel], args.scenario, machine,
                              no_evasion)
        measured = rec.bytes_per_it
        err = (model - measured) / measured * 100
        errs.append(abs(err))
        rows.append([rec.kernel, rec.ranks, f"{measured:.2f}", _num(round(model, 3)),
                     f"{err:+.2f}%"])
    _emit_table(["kernel", "ranks", "measured", "model", "error"], rows, args.csv)
    if not errs:
        print("no measurements")
        return EXIT_OK
    mean_err = sum(errs) / len(errs)
    print(f"mean absolute error: {mean_err:.2f}%  (max {max(errs):.2f}%, "
          f"n={len(errs)}, scenario={args.scenario})")
    if args.check and mean_err > args.tolerance:
        print(f"check failed: mean absolute error {mean_err:.2f}% > "
              f"{args.tolerance:g}%", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_store_ratio(args) -> int:
    if args.streams < 1 or args.streams > 8:
        raise InputError("--streams must be in 1..8")
    if args.volume < 64:
        raise InputError("--volume must be at least one cache line")
    if args.nt:
        if args.policy not in (None, "nt"):
            raise InputError("--nt conflicts with --policy")
        args.policy = "nt"
    args.policy = args.policy or "always"
    ratio = cachesim.store_ratio(args.streams, args.volume, _parse_policy(args))
    print(f"{ratio:.4f}")
    return EXIT_OK


def cmd_halo_copy(args) -> int:
    if args.inner < 1:
        raise InputError("--inner must be >= 1")
    halos = _parse_int_range(str(args.halo), 0, "halo")
    policy = _parse_policy(args)
    rows = []
    for halo in halos:
        ratio = cachesim.halo_copy_experiment(args.inner, halo, args.volume, policy)
        rows.append([args.inner, halo, f"{ratio:.4f}"])
    _emit_table(["inner", "halo", "read_write_ratio"], rows, args.csv)
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------


def _add_policy_args(p, default="always"):
    p.add_argument("--policy", choices=["always", "nt", "claim", "claim-inactive"],
                   default=default, help="simulator write policy")
    p.add_argument("--claim-buffer", type=int, default=64,
                   help="write-combine detector window in lines")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stencilmem",
        description="Memory-traffic models and cache simulation for stencil loops")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="stream counts and balance bounds per kernel")
    p.add_argument("suite")
    p.add_argument("machine")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="simulated balance vs. the analytic model")
    p.add_argument("suite")
    p.add_argument("machine")
    p.add_argument("--grid", type=int, default=1024, help="square grid extent")
    p.add_argument("--cache-mode", choices=["effective", "levels"],
                   default="effective")
    _add_policy_args(p)
    p.add_argument("--kernel", help="run a single kernel")
    p.add_argument("--dump-trace", help="write the kernel trace (needs --kernel)")
    p.add_argument("--check", action="store_true")
    p.add_argument("--tolerance", type=float, default=2.0,
                   help="max |delta| percent for --check")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="replay a dumped binary trace")
    p.add_argument("trace")
    p.add_argument("machine")
    p.add_argument("--cache-mode", choices=["effective", "levels"],
                   default="effective")
    p.add_argument("--access-bytes", type=int, default=8)
    _add_policy_args(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("prime-sweep",
                       help="predicted balance per rank count (CSV on stdout)")
    p.add_argument("suite")
    p.add_argument("machine")
    p.add_argument("--ranks", default="1..72", help="e.g. 1..72 or 8,19,71,72")
    p.add_argument("--wa", choices=["full", "none", "speci2m", "nt-speci2m"],
                   default="speci2m", help="write-allocate model for the sweep")
    p.set_defaults(func=cmd_prime_sweep)

    p = sub.add_parser("compare", help="model vs. measurement CSV")
    p.add_argument("suite")
    p.add_argument("machine")
    p.add_argument("measurements")
    p.add_argument("--scenario", choices=list(SCENARIOS), default="lcf-wa")
    p.add_argument("--no-evasion", default="",
                   help="comma list of kernels where hardware evasion is known "
                        "not to engage (modelled as full write-allocate)")
    p.add_argument("--check", action="store_true")
    p.add_argument("--tolerance", type=float, default=10.0,
                   help="max mean absolute error percent for --check")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("store-ratio", help="n-stream store benchmark ratio")
    p.add_argument("--streams", type=int, default=1)
    p.add_argument("--nt", action="store_true", help="non-temporal stores")
    p.add_argument("--volume", type=int, default=8 * 1024 * 1024)
    p.add_argument("--policy", choices=["always", "nt", "claim", "claim-inactive"],
                   default=None)
    p.add_argument("--claim-buffer", type=int, default=64)
    p.set_defaults(func=cmd_store_ratio)

    p = sub.add_parser("halo-copy", help="strip-mined copy read/write ratio")
    p.add_argument("--inner", type=int, default=216)
    p.add_argument("--halo", default="0..17", help="halo elements, e.g. 3 or 0..17")
    p.add_argument("--volume", type=int, default=4 * 1024 * 1024)
    _add_policy_args(p, default="claim")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_halo_copy)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (KernelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
