"""Cluster occupancy: servers x GPUs, at most ``capacity`` jobs per GPU, gang allocation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Iterable

from .errors import ConstraintError, ValidationError
from .perf_model import DEFAULT_GPU_MEMORY

Gpu = tuple[int, int]  # (server_index, gpu_index)
CAPACITY = 2


@dataclass(frozen=True)
class ClusterSpec:
    num_servers: int
    gpus_per_server: int
    gpu_memory: float = DEFAULT_GPU_MEMORY

    def __post_init__(self):
        if self.num_servers < 1 or self.gpus_per_server < 1 or self.gpu_memory <= 0:
            raise ValidationError(f"cluster dimensions must be positive: {self}")

    @property
    def total_gpus(self) -> int:
        return self.num_servers * self.gpus_per_server


@dataclass
class GpuSlot:
    server_index: int
    gpu_index: int
    occupants: list = field(default_factory=list)

    @property
    def key(self) -> Gpu:
        return (self.server_index, self.gpu_index)


@dataclass(frozen=True)
class Allocation:
    job_id: str
    gpu_set: frozenset
    start_time: float

    @property
    def server_set(self) -> frozenset:
        return frozenset(s for s, _ in self.gpu_set)


class ClusterState:
    def __init__(self, spec: ClusterSpec, capacity: int = CAPACITY):
        self.spec = spec
        self.capacity = capacity
        self.slots = {
            (s, g): GpuSlot(s, g)
            for s in range(spec.num_servers)
            for g in range(spec.gpus_per_server)
        }
        self.allocations: dict[str, Allocation] = {}

    def copy(self) -> "ClusterState":
        return copy.deepcopy(self)

    def occupancy(self) -> dict:
        return {k: tuple(v.occupants) for k, v in self.slots.items()}

    def free_gpus(self) -> list[GpuSlot]:
        """Idle GPUs, servers with the most idle GPUs first, then by index."""
        by_server: dict[int, list[GpuSlot]] = {}
        for key in sorted(self.slots):
            slot = self.slots[key]
            if not slot.occupants:
                by_server.setdefault(slot.server_index, []).append(slot)
        order = sorted(by_server, key=lambda s: (-len(by_server[s]), s))
        return [slot for s in order for slot in by_server[s]]

    def one_job_gpus(self) -> list[GpuSlot]:
        return [self.slots[k] for k in sorted(self.slots) if len(self.slots[k].occupants) == 1]

    def gpus_of(self, job_id: str) -> list[Gpu]:
        return sorted(self.allocations[job_id].gpu_set)

    def co_runners(self, job_id: str) -> set:
        out = set()
        for key in self.allocations[job_id].gpu_set:
            out.update(self.slots[key].occupants)
        out.discard(job_id)
        return out

    def allocate(self, job_id: str, gpu_set: Iterable[Gpu], start_time: float, gpus_requested: int | None = None) -> Allocation:
        gpu_set = frozenset(gpu_set)
        if job_id in self.allocations:
            raise ConstraintError(f"job {job_id} is already allocated")
        if gpus_requested is not None and len(gpu_set) != gpus_requested:
            raise ConstraintError(f"job {job_id} requested {gpus_requested} GPUs, got {len(gpu_set)}")
        for key in gpu_set:
            if key not in self.slots:
                raise ConstraintError(f"job {job_id}: no GPU {key}")
            if len(self.slots[key].occupants) >= self.capacity:
                raise ConstraintError(f"job {job_id}: GPU {key} already holds {self.slots[key].occupants}")
        for key in sorted(gpu_set):
            self.slots[key].occupants.append(job_id)
        alloc = Allocation(job_id, gpu_set, start_time)
        self.allocations[job_id] = alloc
        return alloc

    def release(self, job_id: str) -> Allocation:
        try:
            alloc = self.allocations.pop(job_id)
        except KeyError:
            raise ConstraintError(f"release of unallocated job {job_id}") from None
        for key in alloc.gpu_set:
            self.slots[key].occupants.remove(job_id)
        return alloc

    def check(self, expected_sizes: dict | None = None) -> None:
        """Raise ConstraintError if capacity or gang-size constraints are broken."""
        for key, slot in self.slots.items():
            if len(slot.occupants) > self.capacity:
                raise ConstraintError(f"GPU {key} holds {len(slot.occupants)} jobs")
            if len(set(slot.occupants)) != len(slot.occupants):
                raise ConstraintError(f"GPU {key} lists a job twice")
            for j in slot.occupants:
                if j not in self.allocations or key not in self.allocations[j].gpu_set:
                    raise ConstraintError(f"GPU {key} lists {j} without a matching allocation")
        if expected_sizes is not None:
            for j, alloc in self.allocations.items():
                if len(alloc.gpu_set) != expected_sizes[j]:
                    raise ConstraintError(f"job {j} holds {len(alloc.gpu_set)} GPUs, wants {expected_sizes[j]}")


def consolidated(free: list[GpuSlot], n: int) -> list[Gpu]:
    """The first ``n`` GPUs of an already consolidation-ordered free list."""
    return [slot.key for slot in free[:n]]
