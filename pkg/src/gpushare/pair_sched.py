"""Scheduling decision for one running job and one arriving job on shared GPUs.

Timeline model: the running job advances alone at ``1/t`` iterations per
second until the insertion time ``kappa``; from then on both advance at their
shared rates ``1/(t * xi)`` until one finishes, after which the survivor
returns to its solo rate. All completion times are measured from the decision
instant, so the arriving job's wait ``kappa`` counts toward its JCT.

The average JCT is piecewise linear and concave in ``kappa``, so its minimum
over ``[0, t_run * i_run]`` is at an endpoint: share now, or wait for the
running job to finish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InfeasiblePairError, ValidationError
from .perf_model import ModelProfile, fits_memory, iter_time, sub_batch_size

SHARE = "share"
SEQUENTIAL = "sequential"

# relative slack when comparing endpoint averages; equal averages go sequential
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class JobSnapshot:
    solo_iter: float
    remaining_iters: float
    xi: float = 1.0

    def __post_init__(self):
        if self.solo_iter <= 0:
            raise ValidationError(f"solo_iter must be positive, got {self.solo_iter}")
        if self.remaining_iters < 0:
            raise ValidationError(f"remaining_iters must be >= 0, got {self.remaining_iters}")
        if self.xi < 1:
            raise ValidationError(f"xi must be >= 1, got {self.xi}")

    @property
    def solo_remaining(self) -> float:
        return self.solo_iter * self.remaining_iters

    @property
    def shared_remaining(self) -> float:
        return self.solo_iter * self.xi * self.remaining_iters


@dataclass(frozen=True)
class PairSchedule:
    share: bool
    kappa: float
    avg_jct: float
    sub_batch: Optional[int] = None
    accum_steps: int = 1


def sequential_kappa(running: JobSnapshot) -> float:
    return running.solo_remaining


def pair_jct(running: JobSnapshot, arriving: JobSnapshot, kappa: float) -> tuple[float, float]:
    """Completion times ``(running, arriving)`` when the arriving job starts at ``kappa``."""
    full = running.solo_remaining
    if not (0.0 <= kappa <= full * (1 + 1e-12)):
        raise ValidationError(f"kappa={kappa} outside [0, {full}]")
    kappa = min(kappa, full)
    if kappa == full:
        # no overlap: plain sums, kept exact
        return full, full + arriving.solo_remaining

    left_run = running.remaining_iters - kappa / running.solo_iter
    run_shared_rate = 1.0 / (running.solo_iter * running.xi)
    arr_shared_rate = 1.0 / (arriving.solo_iter * arriving.xi)
    run_alone = max(left_run, 0.0) / run_shared_rate  # time to finish under sharing
    arr_alone = arriving.remaining_iters / arr_shared_rate

    if run_alone <= arr_alone:
        t_run = kappa + run_alone
        arr_left = arriving.remaining_iters - run_alone * arr_shared_rate
        t_arr = t_run + max(arr_left, 0.0) * arriving.solo_iter
    else:
        t_arr = kappa + arr_alone
        run_left = left_run - arr_alone * run_shared_rate
        t_run = t_arr + max(run_left, 0.0) * running.solo_iter
    return t_run, t_arr


def _avg(running, arriving, kappa):
    a, b = pair_jct(running, arriving, kappa)
    return 0.5 * (a + b)


def best_pair_schedule(running: JobSnapshot, arriving: JobSnapshot) -> PairSchedule:
    """Compare immediate sharing with sequential execution; ties go sequential."""
    full = sequential_kappa(running)
    share_avg = _avg(running, arriving, 0.0)
    seq_avg = _avg(running, arriving, full)
    if share_avg < seq_avg - _TIE_RTOL * max(abs(seq_avg), 1e-300):
        return PairSchedule(share=True, kappa=0.0, avg_jct=share_avg)
    return PairSchedule(share=False, kappa=full, avg_jct=seq_avg)


def sign_coefficient(xi_running: float, xi_arriving: float) -> float:
    return 2 * xi_arriving + xi_running - 2 * xi_running * xi_arriving


def sign_condition(xi_running: float, xi_arriving: float) -> str:
    """Closed-form decision, valid when the running job finishes first under full overlap.

    In that regime the average JCT is linear in ``kappa`` with slope
    proportional to ``2*xi_arr + xi_run - 2*xi_run*xi_arr``.
    """
    if xi_running < 1 or xi_arriving < 1:
        raise ValidationError("interference ratios must be >= 1")
    return SHARE if sign_coefficient(xi_running, xi_arriving) > 0 else SEQUENTIAL


def running_finishes_first(running: JobSnapshot, arriving: JobSnapshot) -> bool:
    """True when ``sign_condition`` applies (shared run time of the running job is shorter)."""
    return running.shared_remaining < arriving.shared_remaining


def candidate_sub_batches(requested_batch: int) -> list[int]:
    """Sub-batches B, ceil(B/2), ceil(B/4), ... down to 1."""
    if requested_batch < 1:
        raise ValidationError(f"requested batch must be >= 1, got {requested_batch}")
    out = []
    b = float(requested_batch)
    while True:
        sb = math.ceil(b)
        if not out or sb != out[-1]:
            out.append(sb)
        if sb == 1:
            return out
        b /= 2


def batch_size_scaling(
    running: JobSnapshot,
    profile: ModelProfile,
    gpu_count: int,
    requested_batch: int,
    remaining_iters: float,
    xi_arriving: float,
    memory_cap: float,
    running_memory: float = 0.0,
) -> PairSchedule:
    """Pick the arriving job's sub-batch and start time against one running job.

    Walks the halving ladder of sub-batches, prices each memory-feasible one
    with :func:`best_pair_schedule` and keeps the lowest average JCT (the
    larger sub-batch wins exact ties). ``share=False`` means the arriving job
    should stay pending.
    """
    best = None
    for sb in candidate_sub_batches(requested_batch):
        if not fits_memory(profile, sb, memory_cap, running_memory):
            continue
        steps = -(-requested_batch // sb)
        # ceil(B/steps) can be smaller than sb, never larger
        t = iter_time(requested_batch, steps, profile, gpu_count)
        arriving = JobSnapshot(t, remaining_iters, xi_arriving)
        sched = best_pair_schedule(running, arriving)
        if best is None or sched.avg_jct < best.avg_jct:
            best = PairSchedule(
                share=sched.share,
                kappa=sched.kappa,
                avg_jct=sched.avg_jct,
                sub_batch=sub_batch_size(requested_batch, steps),
                accum_steps=steps,
            )
    if best is None:
        raise InfeasiblePairError(
            f"{profile.task_name}: no sub-batch of {requested_batch} fits beside "
            f"{running_memory:.3g} bytes within {memory_cap:.3g}"
        )
    return best


def brute_force_kappa(running: JobSnapshot, arriving: JobSnapshot, grid_points: int = 201) -> tuple[float, float]:
    """Grid search over insertion times; returns ``(best_kappa, best_avg)``."""
    if grid_points < 2:
        raise ValidationError(f"grid_points must be >= 2, got {grid_points}")
    best_k, best_v = 0.0, math.inf
    for k in np.linspace(0.0, sequential_kappa(running), grid_points):
        v = _avg(running, arriving, float(k))
        if v < best_v:
            best_k, best_v = float(k), v
    return best_k, best_v
