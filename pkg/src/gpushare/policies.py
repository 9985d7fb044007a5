"""Scheduling policies: FIFO, SJF, Tiresias-style LAS, SJF-FFS and SJF-BSBF.

A policy maps (pending jobs, cluster occupancy, clock) to a list of actions.
It never mutates the state it is given; the simulator applies the actions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

from .cluster import ClusterState, consolidated
from .errors import ConfigError, InfeasiblePairError, ValidationError
from .pair_sched import JobSnapshot, PairSchedule, batch_size_scaling, best_pair_schedule, candidate_sub_batches, pair_jct
from .perf_model import InterferenceTable, ModelProfile, fits_memory, iter_time, min_accum_steps, sub_batch_size
from .trace import JobSpec

POLICY_NAMES = ("fifo", "sjf", "tiresias", "sjf_ffs", "sjf_bsbf")
SHARING_POLICIES = ("sjf_ffs", "sjf_bsbf")
HOUR = 3600.0


@dataclass(frozen=True)
class PolicyKind:
    name: str
    # Tiresias: attained-service boundaries in GPU-seconds; len + 1 queues
    thresholds: tuple = (HOUR,)
    preemption_penalty: float = 30.0

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise ConfigError(f"unknown policy {self.name!r}; choose from {', '.join(POLICY_NAMES)}")
        if list(self.thresholds) != sorted(self.thresholds) or any(t <= 0 for t in self.thresholds):
            raise ConfigError(f"Tiresias thresholds must be positive and ascending: {self.thresholds}")
        if self.preemption_penalty < 0:
            raise ConfigError("preemption penalty must be >= 0")

    @classmethod
    def parse(cls, name: str, **knobs) -> "PolicyKind":
        return cls(name.strip().lower().replace("-", "_"), **knobs)

    @property
    def label(self) -> str:
        return self.name.replace("_", "-")

    @property
    def preemptive(self) -> bool:
        return self.name == "tiresias"


@dataclass
class PendingJob:
    spec: JobSpec
    arrival: float
    remaining_iters: float
    expected_remaining: float  # L_k: solo iteration time x remaining iterations
    attained_service: float = 0.0


@dataclass
class RunningView:
    """What a policy may know about a running job."""

    job_id: str
    task_name: str
    gpus: int
    arrival: float
    solo_iter: float
    xi: float  # current slowdown from co-runners, 1 when alone
    remaining_iters: float
    memory: float  # per-GPU bytes
    attained_service: float = 0.0


@dataclass
class SchedContext:
    profiles: Mapping[str, ModelProfile]
    interference: InterferenceTable
    gpu_memory: float
    running: Mapping[str, RunningView] = field(default_factory=dict)


@dataclass(frozen=True)
class Action:
    kind: str  # "start" | "preempt" | "defer"
    job_id: str
    gpus: tuple = ()
    sub_batch: Optional[int] = None
    accum_steps: int = 1
    shared_with: tuple = ()
    pair: Optional[PairSchedule] = None


def solo_config(spec: JobSpec, profile: ModelProfile, gpu_memory: float) -> tuple[int, int, float]:
    """``(sub_batch, accum_steps, iter_time)`` for a job on otherwise idle GPUs."""
    s = min_accum_steps(profile, spec.batch_per_gpu, gpu_memory)
    return sub_batch_size(spec.batch_per_gpu, s), s, iter_time(spec.batch_per_gpu, s, profile, spec.gpus)


def tiresias_queue(attained_service: float, thresholds: Sequence[float]) -> int:
    """Queue index, 0 = highest priority. Boundaries count as crossed within 1e-9 relative."""
    return sum(1 for th in thresholds if attained_service >= th * (1 - 1e-9))


def tiresias_priority(attained_service: float, arrival: float, job_id: str, thresholds: Sequence[float]) -> tuple:
    """Sort key: least-attained-service queue first, arrival order within a queue."""
    return (tiresias_queue(attained_service, thresholds), arrival, job_id)


def sjf_key(job: PendingJob) -> tuple:
    return (job.expected_remaining, job.arrival, job.spec.job_id)


def fifo_key(job: PendingJob) -> tuple:
    return (job.arrival, job.spec.job_id)


class _Pass:
    """Scratch state for one scheduling pass."""

    def __init__(self, state: ClusterState, ctx: SchedContext, clock: float):
        self.work = state.copy()
        self.ctx = ctx
        self.clock = clock
        self.views = {k: replace(v) for k, v in ctx.running.items()}
        self.actions: list[Action] = []

    def profile(self, task: str) -> ModelProfile:
        try:
            return self.ctx.profiles[task]
        except KeyError:
            raise ConfigError(f"no profile for task {task!r}") from None

    def start(self, job: PendingJob, gpus, sub_batch, steps, shared_with=(), pair=None):
        spec = job.spec
        self.work.allocate(spec.job_id, gpus, self.clock, spec.gpus)
        profile = self.profile(spec.task_name)
        xi = 1.0
        for other in shared_with:
            view = self.views[other]
            x_new, x_other = self.ctx.interference.lookup(spec.task_name, view.task_name)
            xi = max(xi, x_new)
            view.xi = max(view.xi, x_other)
        self.views[spec.job_id] = RunningView(
            job_id=spec.job_id,
            task_name=spec.task_name,
            gpus=spec.gpus,
            arrival=job.arrival,
            solo_iter=iter_time(spec.batch_per_gpu, steps, profile, spec.gpus),
            xi=xi,
            remaining_iters=job.remaining_iters,
            memory=profile.memory(sub_batch),
            attained_service=job.attained_service,
        )
        self.actions.append(
            Action("start", spec.job_id, tuple(sorted(gpus)), sub_batch, steps, tuple(sorted(shared_with)), pair)
        )

    def start_alone(self, job: PendingJob) -> bool:
        free = self.work.free_gpus()
        if len(free) < job.spec.gpus:
            return False
        sb, s, _ = solo_config(job.spec, self.profile(job.spec.task_name), self.ctx.gpu_memory)
        self.start(job, consolidated(free, job.spec.gpus), sb, s)
        return True

    def defer(self, job: PendingJob):
        self.actions.append(Action("defer", job.spec.job_id))

    # -- sharing path -----------------------------------------------------

    def _resident_groups(self) -> list[tuple[str, list]]:
        groups: dict[str, list] = {}
        for slot in self.work.one_job_gpus():
            groups.setdefault(slot.occupants[0], []).append(slot.key)
        return list(groups.items())

    def _pair_candidate(self, job: PendingJob, resident: str, wise: bool) -> Optional[PairSchedule]:
        spec = job.spec
        view = self.views[resident]
        profile = self.profile(spec.task_name)
        xi_new, xi_res = self.ctx.interference.lookup(spec.task_name, view.task_name)
        # the resident may already be slowed by a co-runner elsewhere; only the excess counts
        running = JobSnapshot(view.solo_iter * view.xi, view.remaining_iters, max(view.xi, xi_res) / view.xi)
        if wise:
            try:
                sched = batch_size_scaling(
                    running, profile, spec.gpus, spec.batch_per_gpu, job.remaining_iters,
                    xi_new, self.ctx.gpu_memory, view.memory,
                )
            except InfeasiblePairError:
                return None
            return sched if sched.share else None
        sb = first_feasible_sub_batch(profile, spec.batch_per_gpu, self.ctx.gpu_memory, view.memory)
        if sb is None:
            return None
        steps = -(-spec.batch_per_gpu // sb)
        arriving = JobSnapshot(iter_time(spec.batch_per_gpu, steps, profile, spec.gpus), job.remaining_iters, xi_new)
        avg = 0.5 * sum(pair_jct(running, arriving, 0.0))
        return PairSchedule(True, 0.0, avg, sub_batch_size(spec.batch_per_gpu, steps), steps)

    def _still_pays(self, job: PendingJob, partners, steps) -> bool:
        """Re-price every chosen pair with the combined slowdown and sub-batch the job will really see."""
        spec = job.spec
        profile = self.profile(spec.task_name)
        t_new = iter_time(spec.batch_per_gpu, steps, profile, spec.gpus)
        xi_new = max(self.ctx.interference.lookup(spec.task_name, self.views[r].task_name)[0] for r in partners)
        arriving = JobSnapshot(t_new, job.remaining_iters, xi_new)
        for r in partners:
            view = self.views[r]
            xi_res = self.ctx.interference.lookup(spec.task_name, view.task_name)[1]
            running = JobSnapshot(view.solo_iter * view.xi, view.remaining_iters, max(view.xi, xi_res) / view.xi)
            if not best_pair_schedule(running, arriving).share:
                return False
        return True

    def start_shared(self, job: PendingJob, wise: bool) -> bool:
        """Co-locate ``job`` on GPUs that hold one job; ``wise`` selects SJF-BSBF over SJF-FFS."""
        need = job.spec.gpus
        free = self.work.free_gpus()
        groups = self._resident_groups()
        if len(free) + sum(len(g) for _, g in groups) < need:
            return False
        cands = []
        for order, (resident, keys) in enumerate(groups):
            sched = self._pair_candidate(job, resident, wise)
            if sched is not None:
                cands.append((sched.avg_jct, order, resident, keys, sched))
        cands.sort(key=lambda c: (c[0], c[1]))
        chosen, partners, scheds = [], [], []
        for _, _, resident, keys, sched in cands:
            if len(chosen) >= need:
                break
            take = keys[: need - len(chosen)]
            chosen.extend(take)
            partners.append(resident)
            scheds.append(sched)
        if not partners:
            return False
        if len(chosen) < need:
            # shared GPUs first; idle ones only make up the remainder
            extra = need - len(chosen)
            if len(free) < extra:
                return False
            chosen.extend(consolidated(free, extra))
        sb = min(s.sub_batch for s in scheds)
        steps = -(-job.spec.batch_per_gpu // sb)
        best = min(scheds, key=lambda s: s.avg_jct)
        if wise and len(partners) > 1 and not self._still_pays(job, partners, steps):
            return False
        self.start(job, chosen, sub_batch_size(job.spec.batch_per_gpu, steps), steps, partners, best)
        return True


def first_feasible_sub_batch(profile: ModelProfile, batch: int, gpu_memory: float, other_usage: float) -> Optional[int]:
    """Largest sub-batch on the halving ladder that fits beside ``other_usage`` bytes."""
    for sb in candidate_sub_batches(batch):
        if fits_memory(profile, sb, gpu_memory, other_usage):
            return sb
    return None


def first_fit_share(job: PendingJob, state: ClusterState, ctx: SchedContext, clock: float = 0.0) -> Optional[tuple]:
    """GPU set SJF-FFS would give ``job``, or None. Shares unconditionally at kappa=0."""
    p = _Pass(state, ctx, clock)
    if not p.start_shared(job, wise=False):
        return None
    return p.actions[-1].gpus


def _tiresias(pending, ctx: SchedContext, p: _Pass, policy: PolicyKind):
    entries = []
    for view in p.views.values():
        entries.append((tiresias_priority(view.attained_service, view.arrival, view.job_id, policy.thresholds), "run", view))
    for job in pending:
        entries.append((tiresias_priority(job.attained_service, job.arrival, job.spec.job_id, policy.thresholds), "pend", job))
    entries.sort(key=lambda e: e[0])
    capacity = p.work.spec.total_gpus
    keep = set()
    for _, kind, obj in entries:
        g = obj.gpus if kind == "run" else obj.spec.gpus
        if g <= capacity:
            capacity -= g
            keep.add(obj.job_id if kind == "run" else obj.spec.job_id)
    for view in sorted(p.views.values(), key=lambda v: v.job_id):
        if view.job_id not in keep:
            p.work.release(view.job_id)
            p.actions.append(Action("preempt", view.job_id))
    for _, kind, obj in entries:
        if kind != "pend":
            continue
        if obj.spec.job_id in keep:
            if not p.start_alone(obj):
                raise AssertionError("Tiresias capacity accounting is inconsistent")
        else:
            p.defer(obj)


def schedule_pass(
    policy: PolicyKind,
    pending: Sequence[PendingJob],
    state: ClusterState,
    clock: float,
    ctx: SchedContext,
) -> list[Action]:
    """One scheduling decision round. Preempt actions, if any, come before starts."""
    p = _Pass(state, ctx, clock)
    name = policy.name
    if name == "tiresias":
        _tiresias(pending, ctx, p, policy)
        return p.actions
    if name == "fifo":
        queue = sorted(pending, key=fifo_key)
        for k, job in enumerate(queue):
            if not p.start_alone(job):
                # head-of-line blocking: nothing behind the head may start
                for rest in queue[k:]:
                    p.defer(rest)
                break
        return p.actions

    for job in sorted(pending, key=sjf_key):
        if p.start_alone(job):
            continue
        if name in SHARING_POLICIES and p.start_shared(job, wise=(name == "sjf_bsbf")):
            continue
        p.defer(job)
    return p.actions


def make_pending(spec: JobSpec, profile: ModelProfile, gpu_memory: float, progress: float = 0.0,
                 attained_service: float = 0.0) -> PendingJob:
    _, _, t = solo_config(spec, profile, gpu_memory)
    remaining = spec.iterations - progress
    if remaining < 0:
        raise ValidationError(f"{spec.job_id}: progress beyond its iteration count")
    return PendingJob(spec, spec.arrival, remaining, t * remaining, attained_service)
