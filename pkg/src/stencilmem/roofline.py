"""Machine model and Roofline performance bounds.

The machine model carries per-core peak compute, per-NUMA-domain memory
bandwidth (with a linear saturation ramp), the cache hierarchy, and the
phenomenological write-allocate-evasion factors of the hardware. The
Roofline bound for a loop of intensity I on c cores is
min(c * peak_per_core, I * effective_bandwidth(c)).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .balance import BalanceScenario
from .kernels import GridSpec, KernelSpec


@dataclass(frozen=True)
class MachineModel:
    name: str
    peak_flops_per_core: float      # flops/s, per core
    mem_bw_per_domain: float        # bytes/s, saturated, per ccNUMA domain
    cores_per_domain: int
    domains_per_node: int
    saturating_cores: int           # cores per domain needed to reach full bandwidth
    cores_per_socket: int           # ties the shared L3 to a core count
    cache_l1: int                   # bytes, per core
    cache_l2: int                   # bytes, per core
    cache_l3: int                   # bytes, shared per socket
    clock_hz: float
    speci2m_factor: float = 1.2     # residual store ratio of hardware WA evasion
    nt_factor: float = 1.17         # residual store ratio of non-temporal stores
    speci2m_activation_cores: int = 3   # cores per domain before evasion kicks in

    def __post_init__(self):
        positive = (self.peak_flops_per_core, self.mem_bw_per_domain,
                    self.cores_per_domain, self.domains_per_node,
                    self.saturating_cores, self.cores_per_socket,
                    self.cache_l1, self.cache_l2, self.cache_l3, self.clock_hz)
        if any(v <= 0 for v in positive):
            raise ValueError("machine parameters must be positive")
        if self.saturating_cores > self.cores_per_domain:
            raise ValueError("saturating_cores cannot exceed cores_per_domain")

    @property
    def cores_per_node(self) -> int:
        return self.cores_per_domain * self.domains_per_node

    def effective_cache_per_process(self, processes: int) -> float:
        """Usable cache bytes per process for layer-condition checks.

        Heuristic: each process owns its private L2 plus an equal share of
        the L3 of the sockets in use, and only half of that aggregate is
        assumed usable for row reuse.
        """
        if processes < 1:
            raise ValueError("processes must be >= 1")
        sockets = math.ceil(processes / self.cores_per_socket)
        aggregate = processes * self.cache_l2 + sockets * self.cache_l3
        return aggregate / processes / 2.0

    def wa_evasion_active(self, cores: int) -> bool:
        """Whether the hardware store-evasion draws enough bandwidth to engage."""
        per_domain = min(cores, self.cores_per_domain)
        return per_domain >= self.speci2m_activation_cores


@dataclass(frozen=True)
class Prediction:
    performance: float              # flops/s
    bound: str                      # "memory" or "core"
    effective_bandwidth: float      # bytes/s
    runtime: float | None = None    # seconds, set by kernel_runtime


def effective_bandwidth(machine: MachineModel, cores: int) -> float:
    """Aggregate bandwidth of `cores` compact-pinned cores.

    Each touched domain delivers a linear ramp up to its saturated
    bandwidth; full domains contribute the saturated value.
    """
    if cores < 1:
        raise ValueError("cores must be >= 1")
    cores = min(cores, machine.cores_per_node)
    full, rest = divmod(cores, machine.cores_per_domain)
    bw = full * machine.mem_bw_per_domain
    if rest:
        bw += min(rest / machine.saturating_cores, 1.0) * machine.mem_bw_per_domain
    return bw


def roofline_predict(intensity: float, machine: MachineModel, cores: int) -> Prediction:
    """Upper performance bound for a loop of the given flops/byte intensity."""
    if intensity < 0:
        raise ValueError("intensity must be non-negative")
    bw = effective_bandwidth(machine, cores)
    p_core = cores * machine.peak_flops_per_core
    p_mem = intensity * bw
    if p_mem <= p_core:
        return Prediction(performance=p_mem, bound="memory", effective_bandwidth=bw)
    return Prediction(performance=p_core, bound="core", effective_bandwidth=bw)


def kernel_runtime(kernel: KernelSpec, grid: GridSpec, machine: MachineModel,
                   cores: int, scenario: BalanceScenario) -> Prediction:
    """Roofline runtime of one grid sweep under a given balance scenario."""
    iterations = grid.inner_extent * grid.outer_extent
    bw = effective_bandwidth(machine, cores)
    t_mem = iterations * scenario.bytes_per_it / bw
    t_core = iterations * kernel.flops_per_it / (cores * machine.peak_flops_per_core)
    if t_mem >= t_core:
        return Prediction(performance=iterations * kernel.flops_per_it / t_mem
                          if t_mem else 0.0,
                          bound="memory", effective_bandwidth=bw, runtime=t_mem)
    return Prediction(performance=cores * machine.peak_flops_per_core,
                      bound="core", effective_bandwidth=bw, runtime=t_core)


def load_machine(path: str | Path) -> MachineModel:
    """Load a machine-config JSON file holding the MachineModel fields."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not valid JSON: {exc}") from exc
    doc.pop("comment", None)
    try:
        return MachineModel(**doc)
    except TypeError as exc:
        raise ValueError(f"{path}: bad machine config: {exc}") from exc
