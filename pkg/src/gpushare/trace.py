"""Job specs, synthetic multi-tenant DL workloads at testbed and cluster scale, and trace files.

Trace files are JSON lines, one job per line with the :class:`JobSpec` fields.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import TraceParseError, ValidationError
from .perf_model import DEFAULT_BATCHES, TASKS


@dataclass(frozen=True)
class JobSpec:
    job_id: str
    task_name: str
    arrival: float
    gpus: int
    batch_per_gpu: int
    iterations: int

    def __post_init__(self):
        if self.gpus < 1 or self.iterations < 1 or self.batch_per_gpu < 1 or self.arrival < 0:
            raise ValidationError(f"invalid job {self}")

    @property
    def is_large(self) -> bool:
        return self.gpus > 4


@dataclass
class WorkloadSpec:
    total_jobs: int
    gpu_demand: Mapping[int, float]
    iteration_range: tuple[int, int] = (100, 5000)
    horizon: float = 8 * 3600.0
    arrivals: Optional[Sequence[float]] = None  # explicit timestamps override Poisson
    load_scale: float = 1.0
    seed: int = 0
    tasks: Sequence[str] = TASKS
    batch_choices: Mapping[str, Sequence[int]] = field(default_factory=lambda: dict(DEFAULT_BATCHES))
    sampling: str = "iid"  # or "quota": exact histogram counts, shuffled

    def validate(self) -> None:
        if not self.gpu_demand:
            raise ValidationError("GPU demand histogram is empty")
        probs = list(self.gpu_demand.values())
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValidationError(f"GPU demand histogram must sum to 1, got {sum(probs)}")
        lo, hi = self.iteration_range
        if lo < 1 or hi < lo:
            raise ValidationError(f"bad iteration range {self.iteration_range}")
        if self.total_jobs < 1 or self.load_scale <= 0 or self.horizon <= 0:
            raise ValidationError("total_jobs, load_scale and horizon must be positive")
        if self.sampling not in ("iid", "quota"):
            raise ValidationError(f"unknown sampling mode {self.sampling!r}")
        missing = [t for t in self.tasks if t not in self.batch_choices]
        if missing:
            raise ValidationError(f"no batch choices for tasks {missing}")

    @property
    def job_count(self) -> int:
        if self.arrivals is not None:
            return len(self.arrivals)
        return max(1, round(self.total_jobs * self.load_scale))


def _quota(demand: Mapping[int, float], n: int) -> list[int]:
    # largest-remainder rounding
    raw = {g: p * n for g, p in demand.items()}
    counts = {g: int(np.floor(v)) for g, v in raw.items()}
    short = n - sum(counts.values())
    for g in sorted(raw, key=lambda g: (-(raw[g] - counts[g]), g))[:short]:
        counts[g] += 1
    return [g for g in sorted(counts) for _ in range(counts[g])]


def generate_workload(spec: WorkloadSpec) -> list[JobSpec]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.job_count

    sizes = sorted(spec.gpu_demand)
    if spec.sampling == "quota":
        gpus = _quota(spec.gpu_demand, n)
        rng.shuffle(gpus)
    else:
        gpus = rng.choice(sizes, size=n, p=[spec.gpu_demand[g] for g in sizes]).tolist()

    if spec.arrivals is not None:
        arrivals = sorted(float(a) for a in spec.arrivals)
    else:
        # Poisson process: the unscaled job count spans the horizon, load_scale raises the rate
        rate = spec.total_jobs * spec.load_scale / spec.horizon
        gaps = rng.exponential(1.0 / rate, size=n)
        gaps[0] = 0.0
        arrivals = np.cumsum(gaps).tolist()

    lo, hi = spec.iteration_range
    iters = rng.integers(lo, hi, endpoint=True, size=n).tolist()
    tasks = [spec.tasks[i] for i in rng.integers(0, len(spec.tasks), size=n)]
    jobs = []
    width = len(str(n - 1))
    for k in range(n):
        choices = spec.batch_choices[tasks[k]]
        batch = int(choices[int(rng.integers(0, len(choices)))])
        jobs.append(
            JobSpec(
                job_id=f"j{k:0{width}d}",
                task_name=tasks[k],
                arrival=round(float(arrivals[k]), 6),
                gpus=int(gpus[k]),
                batch_per_gpu=batch,
                iterations=int(iters[k]),
            )
        )
    return jobs


# Testbed scale: 4 servers x 4 GPUs, 30 jobs, 20 of them on <= 8 GPUs, 10 on 12 or 16.
PHYSICAL_DEMAND = {1: 4 / 30, 2: 6 / 30, 4: 6 / 30, 8: 4 / 30, 12: 5 / 30, 16: 5 / 30}
# Simulation scale: 16 servers x 4 GPUs; mostly small jobs, few large ones.
SIMULATION_DEMAND = {1: 0.50, 2: 0.20, 4: 0.15, 8: 0.10, 16: 0.05}


def physical_preset(seed: int = 0, **overrides) -> WorkloadSpec:
    kw = dict(
        total_jobs=30,
        gpu_demand=PHYSICAL_DEMAND,
        iteration_range=(100, 5000),
        # arrivals spread so offered work roughly matches 16 GPUs over the span
        horizon=12000.0,
        seed=seed,
        sampling="quota",
    )
    kw.update(overrides)
    return WorkloadSpec(**kw)


def simulation_preset(seed: int = 0, load_scale: float = 1.0, **overrides) -> WorkloadSpec:
    kw = dict(
        total_jobs=240,
        gpu_demand=SIMULATION_DEMAND,
        # longer jobs than the testbed preset; sized so SJF spends ~45% of JCT queuing
        iteration_range=(600, 30000),
        horizon=8 * 3600.0,
        load_scale=load_scale,
        seed=seed,
    )
    kw.update(overrides)
    return WorkloadSpec(**kw)


PRESETS = {"physical": physical_preset, "simulation": simulation_preset}


# -- files ---------------------------------------------------------------------

_FIELDS = [f.name for f in dataclasses.fields(JobSpec)]
_TYPES = {"job_id": str, "task_name": str, "arrival": float, "gpus": int, "batch_per_gpu": int, "iterations": int}


def dumps_trace(jobs: Sequence[JobSpec]) -> str:
    return "".join(json.dumps(dataclasses.asdict(j)) + "\n" for j in jobs)


def loads_trace(text: str) -> list[JobSpec]:
    jobs, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceParseError(f"line {lineno}: invalid JSON ({exc.msg})", record=len(jobs)) from None
        if not isinstance(rec, dict):
            raise TraceParseError(f"line {lineno}: expected an object", record=len(jobs))
        for name in _FIELDS:
            if name not in rec:
                raise TraceParseError(f"line {lineno}: missing field {name!r}", record=len(jobs))
        try:
            kw = {name: _TYPES[name](rec[name]) for name in _FIELDS}
            job = JobSpec(**kw)
        except (TypeError, ValueError) as exc:
            raise TraceParseError(f"line {lineno}: {exc}", record=len(jobs)) from None
        if job.job_id in seen:
            raise ValidationError(f"record {len(jobs)} (line {lineno}): duplicate job_id {job.job_id!r}")
        seen.add(job.job_id)
        jobs.append(job)
    return jobs


def save_trace(jobs: Sequence[JobSpec], path) -> None:
    Path(path).write_text(dumps_trace(jobs))


def load_trace(path) -> list[JobSpec]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise TraceParseError(f"cannot read {path}: {exc}") from None
    return loads_trace(text)
