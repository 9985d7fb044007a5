"""Discrete-event simulation of a GPU cluster under one scheduling policy.

Progress is fluid: between two events every running job advances at a
constant ``1 / (solo_iter * xi)`` iterations per second, where ``xi`` is the
largest pairwise slowdown among the job's current co-runners (1 when alone).
Events at the same timestamp are handled as completions, then arrivals, then
a single scheduling pass.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from statistics import fmean
from typing import Callable, Mapping, Optional, Sequence

from .cluster import ClusterSpec, ClusterState
from .errors import ConfigError, ConstraintError, InvariantViolation
from .perf_model import InterferenceTable, ModelProfile, iter_time, min_accum_steps
from .policies import (
    PendingJob,
    PolicyKind,
    RunningView,
    SchedContext,
    schedule_pass,
    solo_config,
    tiresias_queue,
)
from .trace import JobSpec

log = logging.getLogger(__name__)

PENDING, RUNNING, FINISHED = "pending", "running", "finished"
CONSERVATION_TOL = 1e-6
FINISH_TOL = 1e-7  # iterations


@dataclass
class JobRuntime:
    spec: JobSpec
    state: str = PENDING
    progress: float = 0.0
    rate: float = 0.0
    co_runners: set = field(default_factory=set)
    start_time: Optional[float] = None
    completion_time: Optional[float] = None
    queuing_time: float = 0.0
    pending_since: float = 0.0
    sub_batch: Optional[int] = None
    accum_steps: int = 1
    solo_iter: float = math.nan
    xi: float = 1.0
    attained_service: float = 0.0
    preemptions: int = 0
    ever_shared: bool = False
    gpu_history: list = field(default_factory=list)  # (start, gpus)

    @property
    def remaining(self) -> float:
        return self.spec.iterations - self.progress

    @property
    def jct(self) -> float:
        return self.completion_time - self.spec.arrival


def progress_update(job: JobRuntime, from_t: float, to_t: float) -> float:
    """Advance ``job`` at its current rate over ``[from_t, to_t]``; returns new progress."""
    if to_t < from_t:
        raise InvariantViolation(f"{job.spec.job_id}: negative interval [{from_t}, {to_t}]")
    job.progress += job.rate * (to_t - from_t)
    if job.progress > job.spec.iterations:
        if job.progress - job.spec.iterations > 1e-9 * max(1.0, job.spec.iterations):
            raise InvariantViolation(f"{job.spec.job_id}: progress {job.progress} overshoots {job.spec.iterations}")
        job.progress = float(job.spec.iterations)
    return job.progress


def completion_time_of(job: JobRuntime, now: float) -> float:
    if job.rate <= 0:
        raise InvariantViolation(f"{job.spec.job_id}: running with zero rate")
    return now + max(job.remaining, 0.0) / job.rate


@dataclass
class SimMetrics:
    policy: str
    jobs: list  # one dict per job, see JOB_COLUMNS
    average_jct: float
    makespan: float
    average_queuing: float
    by_class: dict
    by_task: dict
    events: int = 0
    scheduling_passes: int = 0
    audits: int = 0
    violations: int = 0

    def summary_row(self) -> dict:
        row = {
            "policy": self.policy,
            "jobs": len(self.jobs),
            "makespan": self.makespan,
            "average_jct": self.average_jct,
            "average_queuing": self.average_queuing,
        }
        for cls in ("large", "small"):
            c = self.by_class.get(cls, {})
            row[f"{cls}_jobs"] = c.get("jobs", 0)
            row[f"{cls}_average_jct"] = c.get("average_jct", math.nan)
            row[f"{cls}_average_queuing"] = c.get("average_queuing", math.nan)
        return row

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "summary": self.summary_row(),
            "by_class": self.by_class,
            "by_task": self.by_task,
            "events": self.events,
            "scheduling_passes": self.scheduling_passes,
            "audits": self.audits,
            "violations": self.violations,
        }


JOB_COLUMNS = [
    "job_id", "task_name", "gpus", "batch_per_gpu", "iterations", "arrival", "start", "completion",
    "jct", "queuing", "sub_batch", "accum_steps", "shared", "preemptions", "gpu_set",
]
SUMMARY_COLUMNS = [
    "policy", "jobs", "makespan", "average_jct", "average_queuing",
    "large_jobs", "large_average_jct", "large_average_queuing",
    "small_jobs", "small_average_jct", "small_average_queuing",
]


def _group(rows):
    return {
        "jobs": len(rows),
        "average_jct": fmean(r["jct"] for r in rows),
        "average_queuing": fmean(r["queuing"] for r in rows),
    }


def collect_metrics(policy: str, runtimes: Sequence[JobRuntime]) -> SimMetrics:
    rows = []
    for j in sorted(runtimes, key=lambda r: r.spec.job_id):
        rows.append({
            "job_id": j.spec.job_id,
            "task_name": j.spec.task_name,
            "gpus": j.spec.gpus,
            "batch_per_gpu": j.spec.batch_per_gpu,
            "iterations": j.spec.iterations,
            "arrival": j.spec.arrival,
            "start": j.start_time,
            "completion": j.completion_time,
            "jct": j.jct,
            "queuing": j.queuing_time,
            "sub_batch": j.sub_batch,
            "accum_steps": j.accum_steps,
            "shared": j.ever_shared,
            "preemptions": j.preemptions,
            "gpu_set": " ".join(f"{s}:{g}" for s, g in j.gpu_history[-1][1]) if j.gpu_history else "",
        })
    by_class = {}
    for cls, pick in (("large", lambda r: r["gpus"] > 4), ("small", lambda r: r["gpus"] <= 4)):
        sel = [r for r in rows if pick(r)]
        if sel:
            by_class[cls] = _group(sel)
    by_task = {}
    for task in sorted({r["task_name"] for r in rows}):
        by_task[task] = _group([r for r in rows if r["task_name"] == task])
    return SimMetrics(
        policy=policy,
        jobs=rows,
        average_jct=fmean(r["jct"] for r in rows),
        makespan=max(r["completion"] for r in rows) - min(r["arrival"] for r in rows),
        average_queuing=fmean(r["queuing"] for r in rows),
        by_class=by_class,
        by_task=by_task,
    )


def check_inputs(trace: Sequence[JobSpec], cluster: ClusterSpec, profiles: Mapping[str, ModelProfile]) -> None:
    """Fail before simulating if any job cannot be modeled or can never fit."""
    if not trace:
        raise ConfigError("empty trace")
    seen = set()
    for job in trace:
        if job.job_id in seen:
            raise ConfigError(f"duplicate job id {job.job_id!r}")
        seen.add(job.job_id)
        if job.task_name not in profiles:
            raise ConfigError(f"no profile for task {job.task_name!r} (job {job.job_id})")
        profile = profiles[job.task_name]
        profile.params_for(job.gpus)
        if job.gpus > cluster.total_gpus:
            raise ConfigError(f"job {job.job_id} wants {job.gpus} GPUs; cluster has {cluster.total_gpus}")
        min_accum_steps(profile, job.batch_per_gpu, cluster.gpu_memory)


class Simulation:
    def __init__(
        self,
        trace: Sequence[JobSpec],
        cluster: ClusterSpec,
        policy: PolicyKind,
        profiles: Mapping[str, ModelProfile],
        interference: InterferenceTable,
        seed: int = 0,
        audit: bool = True,
        on_event: Optional[Callable[["Simulation"], None]] = None,
    ):
        check_inputs(trace, cluster, profiles)
        self.cluster = cluster
        self.policy = policy
        self.profiles = profiles
        self.interference = interference
        self.seed = seed
        self.audit = audit
        self.on_event = on_event
        self.state = ClusterState(cluster)
        self.jobs = {j.job_id: JobRuntime(j, pending_since=j.arrival) for j in trace}
        self.arrivals = sorted(trace, key=lambda j: (j.arrival, j.job_id))
        self.solo = {
            j.job_id: solo_config(j, profiles[j.task_name], cluster.gpu_memory)[2] for j in trace
        }
        self.now = 0.0
        self.pending: list[str] = []
        self.running: list[str] = []
        self.events = 0
        self.passes = 0
        self.audits = 0

    # -- state transitions -----------------------------------------------

    def _advance(self, to_t: float) -> None:
        for jid in self.running:
            job = self.jobs[jid]
            dt = to_t - self.now
            progress_update(job, self.now, to_t)
            job.attained_service += job.spec.gpus * dt
        self.now = to_t

    def _next_priority_change(self) -> float:
        if not self.policy.preemptive:
            return math.inf
        best = math.inf
        for jid in self.running:
            job = self.jobs[jid]
            q = tiresias_queue(job.attained_service, self.policy.thresholds)
            if q < len(self.policy.thresholds):
                th = self.policy.thresholds[q]
                best = min(best, self.now + max(th - job.attained_service, 0.0) / job.spec.gpus)
        return best

    def _finish_due(self) -> None:
        done = []
        for jid in self.running:
            job = self.jobs[jid]
            if job.remaining <= FINISH_TOL:
                done.append(jid)
        for jid in sorted(done):
            job = self.jobs[jid]
            if abs(job.progress - job.spec.iterations) > CONSERVATION_TOL:
                raise InvariantViolation(
                    f"{jid}: finished with progress {job.progress} of {job.spec.iterations}"
                )
            job.progress = float(job.spec.iterations)
            job.state = FINISHED
            job.completion_time = self.now
            job.rate = 0.0
            self.state.release(jid)
            self.running.remove(jid)

    def _admit_arrivals(self, cursor: int) -> int:
        while cursor < len(self.arrivals) and self.arrivals[cursor].arrival <= self.now:
            jid = self.arrivals[cursor].job_id
            self.jobs[jid].pending_since = self.arrivals[cursor].arrival
            self.pending.append(jid)
            cursor += 1
        return cursor

    def _context(self) -> SchedContext:
        views = {}
        for jid in self.running:
            job = self.jobs[jid]
            views[jid] = RunningView(
                job_id=jid,
                task_name=job.spec.task_name,
                gpus=job.spec.gpus,
                arrival=job.spec.arrival,
                solo_iter=job.solo_iter,
                xi=job.xi,
                remaining_iters=job.remaining,
                memory=self.profiles[job.spec.task_name].memory(job.sub_batch),
                attained_service=job.attained_service,
            )
        return SchedContext(self.profiles, self.interference, self.cluster.gpu_memory, views)

    def _pending_views(self) -> list[PendingJob]:
        out = []
        for jid in self.pending:
            job = self.jobs[jid]
            rem = job.remaining
            out.append(PendingJob(job.spec, job.spec.arrival, rem, self.solo[jid] * rem, job.attained_service))
        return out

    def _schedule(self) -> None:
        if not self.pending:
            return
        actions = schedule_pass(self.policy, self._pending_views(), self.state, self.now, self._context())
        self.passes += 1
        for act in actions:
            if act.kind == "preempt":
                self._preempt(act.job_id)
        for act in actions:
            if act.kind == "start":
                self._start(act)

    def _preempt(self, jid: str) -> None:
        if not self.policy.preemptive:
            raise InvariantViolation(f"{self.policy.name} emitted a preemption")
        job = self.jobs[jid]
        self.state.release(jid)
        self.running.remove(jid)
        job.state = PENDING
        job.rate = 0.0
        job.preemptions += 1
        job.pending_since = self.now
        # restart cost is paid as lost progress
        job.progress = max(0.0, job.progress - self.policy.preemption_penalty / job.solo_iter)
        self.pending.append(jid)

    def _start(self, act) -> None:
        job = self.jobs[act.job_id]
        try:
            self.state.allocate(act.job_id, act.gpus, self.now, job.spec.gpus)
        except ConstraintError as exc:
            raise InvariantViolation(str(exc)) from exc
        self.pending.remove(act.job_id)
        self.running.append(act.job_id)
        job.state = RUNNING
        if job.start_time is None:
            job.start_time = self.now
        job.queuing_time += self.now - job.pending_since
        job.sub_batch = act.sub_batch
        job.accum_steps = act.accum_steps
        job.solo_iter = iter_time(job.spec.batch_per_gpu, act.accum_steps, self.profiles[job.spec.task_name], job.spec.gpus)
        job.gpu_history.append((self.now, tuple(act.gpus)))

    def _recompute_rates(self) -> None:
        for jid in self.running:
            job = self.jobs[jid]
            co = self.state.co_runners(jid)
            xi = 1.0
            for other in co:
                xi = max(xi, self.interference.lookup(job.spec.task_name, self.jobs[other].spec.task_name)[0])
            job.co_runners = co
            job.xi = xi
            if co:
                job.ever_shared = True
            job.rate = 1.0 / (job.solo_iter * xi)

    def _audit(self) -> None:
        self.audits += 1
        try:
            self.state.check({jid: self.jobs[jid].spec.gpus for jid in self.running})
        except ConstraintError as exc:
            raise InvariantViolation(f"t={self.now}: {exc}") from exc
        if set(self.state.allocations) != set(self.running):
            raise InvariantViolation(f"t={self.now}: allocation map out of sync with running set")
        for jid in self.running:
            job = self.jobs[jid]
            if not (0.0 <= job.progress <= job.spec.iterations):
                raise InvariantViolation(f"t={self.now}: {jid} progress {job.progress} out of range")
            if not self.policy.preemptive and len(job.gpu_history) != 1:
                raise InvariantViolation(f"t={self.now}: {jid} was re-placed under {self.policy.name}")
            if frozenset(job.gpu_history[-1][1]) != self.state.allocations[jid].gpu_set:
                raise InvariantViolation(f"t={self.now}: {jid} GPU set changed while running")

    # -- main loop ---------------------------------------------------------

    def run(self) -> SimMetrics:
        cursor = 0
        n = len(self.arrivals)
        finished = 0
        self.now = self.arrivals[0].arrival
        while finished < n:
            t_arr = self.arrivals[cursor].arrival if cursor < n else math.inf
            t_done = min((completion_time_of(self.jobs[j], self.now) for j in self.running), default=math.inf)
            t_next = min(t_arr, t_done, self._next_priority_change())
            if math.isinf(t_next):
                raise InvariantViolation(
                    f"t={self.now}: {len(self.pending)} job(s) pending with nothing running or arriving"
                )
            self._advance(max(t_next, self.now))
            before = len(self.running)
            self._finish_due()
            finished += before - len(self.running)
            cursor = self._admit_arrivals(cursor)
            self._schedule()
            self._recompute_rates()
            self.events += 1
            if self.audit:
                self._audit()
            if self.on_event is not None:
                self.on_event(self)
        metrics = collect_metrics(self.policy.label, list(self.jobs.values()))
        metrics.events = self.events
        metrics.scheduling_passes = self.passes
        metrics.audits = self.audits
        return metrics


def run(
    trace: Sequence[JobSpec],
    cluster: ClusterSpec,
    policy: PolicyKind,
    profiles: Mapping[str, ModelProfile],
    interference: InterferenceTable,
    seed: int = 0,
    audit: bool = True,
) -> SimMetrics:
    """Simulate ``trace`` to completion and return per-job and aggregate metrics."""
    return Simulation(trace, cluster, policy, profiles, interference, seed=seed, audit=audit).run()


# -- output --------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 6))
    return v


def write_jobs_csv(metrics: SimMetrics, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=JOB_COLUMNS)
        w.writeheader()
        for row in metrics.jobs:
            w.writerow({k: _fmt(row[k]) for k in JOB_COLUMNS})


def write_summary_csv(rows: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})


def write_report(metrics: SimMetrics, config: dict, path) -> None:
    doc = {"config": config, "metrics": metrics.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")
