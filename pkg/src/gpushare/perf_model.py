"""Iteration-time, throughput and interference models for data-parallel DL jobs.

A job's iteration with gradient accumulation over ``s`` sub-batches costs::

    (s - 1) * t_comp(B/s) + (t_comp(B/s)**delta + t_comm**delta) ** (1/delta)

where ``t_comp(b) = alpha_comp + beta_comp * b`` and
``t_comm = alpha_comm + beta_comm * M``. ``delta >= 1`` controls how much of the
all-reduce hides behind the last sub-batch's computation (1: none, inf: full).
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import ConfigError, FitError, ValidationError

GIB = 2**30
DEFAULT_GPU_MEMORY = 11 * GIB  # RTX 2080 Ti
TASKS = ("bert", "cifar10", "deepspeech2", "imagenet", "ncf", "yolov3")


@dataclass(frozen=True)
class CompParams:
    alpha_comp: float
    beta_comp: float

    def __post_init__(self):
        if self.alpha_comp < 0 or self.beta_comp <= 0:
            raise ValidationError(
                f"need alpha_comp >= 0 and beta_comp > 0, got {self.alpha_comp}, {self.beta_comp}"
            )


@dataclass(frozen=True)
class CommParams:
    alpha_comm: float
    beta_comm: float
    message_size: float

    def __post_init__(self):
        if self.alpha_comm < 0 or self.beta_comm < 0 or self.message_size <= 0:
            raise ValidationError(
                "need alpha_comm >= 0, beta_comm >= 0, message_size > 0, got "
                f"{self.alpha_comm}, {self.beta_comm}, {self.message_size}"
            )


@dataclass(frozen=True)
class ModelProfile:
    """Fitted cost parameters for one DL task.

    ``comp`` and ``comm`` are keyed by GPU count. Memory is per GPU:
    ``mem_base + mem_per_sample * sub_batch`` bytes.
    """

    task_name: str
    comp: Mapping[int, CompParams]
    comm: Mapping[int, CommParams]
    delta: float = 1.0
    mem_base: float = 0.0
    mem_per_sample: float = 0.0
    max_batch: int = 1 << 30

    def __post_init__(self):
        if self.delta < 1:
            raise ValidationError(f"{self.task_name}: delta must be >= 1, got {self.delta}")
        if self.mem_base < 0 or self.mem_per_sample < 0 or self.max_batch < 1:
            raise ValidationError(f"{self.task_name}: memory fields must be non-negative")
        if set(self.comp) != set(self.comm):
            raise ValidationError(
                f"{self.task_name}: comp/comm GPU-count keys differ: "
                f"{sorted(self.comp)} vs {sorted(self.comm)}"
            )

    def params_for(self, gpu_count: int) -> tuple[CompParams, CommParams]:
        try:
            return self.comp[gpu_count], self.comm[gpu_count]
        except KeyError:
            raise ConfigError(
                f"profile {self.task_name!r} has no entry for {gpu_count} GPUs "
                f"(known: {sorted(self.comp)})"
            ) from None

    def memory(self, sub_batch: float) -> float:
        return self.mem_base + self.mem_per_sample * sub_batch


@dataclass(frozen=True)
class InterferenceTable:
    """Order-sensitive pairwise slowdown ratios with a scalar fallback.

    ``pairwise[(a, b)] = (xi_a, xi_b)``: task ``a`` slows by ``xi_a`` and ``b``
    by ``xi_b`` when the two share GPUs. ``lookup(b, a)`` returns the swap.
    """

    default_xi: float = 1.0
    pairwise: Mapping[tuple[str, str], tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.default_xi < 1:
            raise ValidationError(f"default xi must be >= 1, got {self.default_xi}")
        for key, (xa, xb) in self.pairwise.items():
            if xa < 1 or xb < 1:
                raise ValidationError(f"xi for {key} must be >= 1, got {(xa, xb)}")

    @classmethod
    def constant(cls, xi: float) -> "InterferenceTable":
        return cls(default_xi=xi)

    def lookup(self, first: str, second: str) -> tuple[float, float]:
        if (first, second) in self.pairwise:
            return self.pairwise[(first, second)]
        if (second, first) in self.pairwise:
            xb, xa = self.pairwise[(second, first)]
            return xa, xb
        return self.default_xi, self.default_xi


def comp_time(batch: float, params: CompParams) -> float:
    return params.alpha_comp + params.beta_comp * batch


def comm_time(params: CommParams) -> float:
    return params.alpha_comm + params.beta_comm * params.message_size


def sub_batch_size(requested_batch: int, accum_steps: int) -> int:
    """Per-step sub-batch; rounds up so the model stays pessimistic."""
    if accum_steps < 1:
        raise ValidationError(f"accum_steps must be >= 1, got {accum_steps}")
    return -(-requested_batch // accum_steps)


def overlap_time(t_comp: float, t_comm: float, delta: float) -> float:
    # p-norm of (t_comp, t_comm); scale by the max to avoid overflow at large delta
    hi = max(t_comp, t_comm)
    if hi == 0:
        return 0.0
    return hi * ((t_comp / hi) ** delta + (t_comm / hi) ** delta) ** (1.0 / delta)


def iter_time(requested_batch: int, accum_steps: int, profile: ModelProfile, gpu_count: int) -> float:
    """Seconds per training iteration with ``accum_steps`` gradient-accumulation steps."""
    comp, comm = profile.params_for(gpu_count)
    tc = comp_time(sub_batch_size(requested_batch, accum_steps), comp)
    tm = comm_time(comm)
    return (accum_steps - 1) * tc + overlap_time(tc, tm, profile.delta)


def throughput(batch: float, iter_seconds: float) -> float:
    if iter_seconds <= 0:
        raise ValidationError(f"iteration time must be positive, got {iter_seconds}")
    return batch / iter_seconds


def shared_iter_time(solo_iter: float, xi: float) -> float:
    if xi < 1:
        raise ValidationError(f"interference ratio must be >= 1, got {xi}")
    if solo_iter <= 0:
        raise ValidationError(f"solo iteration time must be positive, got {solo_iter}")
    return solo_iter * xi


def fits_memory(profile: ModelProfile, sub_batch: int, gpu_memory: float, other_usage: float = 0.0) -> bool:
    return sub_batch <= profile.max_batch and profile.memory(sub_batch) + other_usage <= gpu_memory


def min_accum_steps(profile: ModelProfile, requested_batch: int, gpu_memory: float) -> int:
    """Fewest accumulation steps that fit ``requested_batch`` on an otherwise idle GPU."""
    for s in range(1, requested_batch + 1):
        if fits_memory(profile, sub_batch_size(requested_batch, s), gpu_memory):
            return s
    raise ConfigError(
        f"{profile.task_name}: even a sub-batch of 1 does not fit in {gpu_memory:.3g} bytes"
    )


# -- fitting -----------------------------------------------------------------


def _predict_iter(batch, alpha, beta, t_comm, delta):
    tc = alpha + beta * batch
    hi = np.maximum(tc, t_comm)
    return hi * ((tc / hi) ** delta + (t_comm / hi) ** delta) ** (1.0 / delta)


def fit_profile(
    measurements: Iterable[tuple[int, float, float]],
    task_name: str = "fitted",
    message_size: float = 1.0,
    **memory_fields,
) -> tuple[ModelProfile, float]:
    """Least-squares fit of a profile to ``(gpu_count, batch, throughput)`` samples.

    Throughput is ``batch / iter_time`` for the per-GPU batch, without
    accumulation. Computation parameters and ``delta`` are shared across GPU
    counts; each GPU count gets its own aggregate communication time, stored as
    ``alpha_comm`` with ``beta_comm = 0``. Residuals are relative, so
    multiplicative measurement noise is weighted evenly.

    Returns the profile and the RMS relative residual.
    """
    rows = [(int(g), float(b), float(x)) for g, b, x in measurements]
    if not rows:
        raise FitError("no measurements")
    counts = sorted({g for g, _, _ in rows})
    for g in counts:
        batches = {b for gg, b, _ in rows if gg == g}
        if len(batches) < 3:
            raise FitError(
                f"batch size: gpu_count={g} has {len(batches)} distinct batch size(s), need >= 3"
            )
    n_params = 3 + len(counts)
    if len(rows) < n_params:
        raise FitError(
            f"delta: {len(rows)} measurements cannot determine {n_params} parameters; "
            "add batch sizes or GPU counts"
        )
    if any(x <= 0 or b <= 0 for _, b, x in rows):
        raise FitError("batch sizes and throughputs must be positive")

    gidx = np.array([counts.index(g) for g, _, _ in rows])
    batch = np.array([b for _, b, _ in rows])
    obs = np.array([x for _, _, x in rows])
    t_obs = batch / obs

    def residual(p):
        alpha, beta, delta = p[0], p[1], p[2]
        pred = batch / _predict_iter(batch, alpha, beta, p[3:][gidx], delta)
        return (pred - obs) / obs

    # linear seed: t ~ a + b*B over all rows
    slope, intercept = np.polyfit(batch, t_obs, 1)
    beta0 = max(slope, 1e-9)
    alpha0 = max(min(intercept, t_obs.min()) * 0.5, 0.0)
    comm0 = [max(np.median(t_obs[gidx == k] - beta0 * batch[gidx == k]) - alpha0, 1e-6) for k in range(len(counts))]
    lower = [0.0, 1e-12, 1.0] + [0.0] * len(counts)
    upper = [np.inf, np.inf, 64.0] + [np.inf] * len(counts)

    best = None
    for delta0 in (1.05, 1.5, 2.0, 3.0, 6.0):
        x0 = np.array([alpha0, beta0, delta0, *comm0])
        sol = least_squares(residual, x0, bounds=(lower, upper), x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=20000)
        if best is None or sol.cost < best.cost:
            best = sol
    p = best.x
    rms = float(np.sqrt(np.mean(best.fun**2)))
    comp = CompParams(float(p[0]), float(p[1]))
    profile = ModelProfile(
        task_name=task_name,
        comp={g: comp for g in counts},
        comm={g: CommParams(float(p[3 + k]), 0.0, message_size) for k, g in enumerate(counts)},
        delta=float(p[2]),
        **memory_fields,
    )
    return profile, rms


# -- documents ---------------------------------------------------------------


def profile_to_dict(profile: ModelProfile) -> dict:
    gpus = {}
    for g in sorted(profile.comp):
        c, m = profile.comp[g], profile.comm[g]
        gpus[str(g)] = {
            "alpha_comp": c.alpha_comp,
            "beta_comp": c.beta_comp,
            "alpha_comm": m.alpha_comm,
            "beta_comm": m.beta_comm,
            "message_size": m.message_size,
        }
    return {
        "delta": profile.delta,
        "mem_base": profile.mem_base,
        "mem_per_sample": profile.mem_per_sample,
        "max_batch": profile.max_batch,
        "gpus": gpus,
    }


def profile_from_dict(name: str, doc: Mapping) -> ModelProfile:
    try:
        gpus = doc["gpus"]
        comp = {int(g): CompParams(v["alpha_comp"], v["beta_comp"]) for g, v in gpus.items()}
        comm = {int(g): CommParams(v["alpha_comm"], v["beta_comm"], v["message_size"]) for g, v in gpus.items()}
        return ModelProfile(
            task_name=name,
            comp=comp,
            comm=comm,
            delta=float(doc.get("delta", 1.0)),
            mem_base=float(doc.get("mem_base", 0.0)),
            mem_per_sample=float(doc.get("mem_per_sample", 0.0)),
            max_batch=int(doc.get("max_batch", 1 << 30)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"profile {name!r}: malformed entry ({exc!r})") from None


def dump_profiles(profiles: Mapping[str, ModelProfile], path) -> None:
    doc = {name: profile_to_dict(p) for name, p in sorted(profiles.items())}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_profiles(path) -> dict[str, ModelProfile]:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read profiles from {path}: {exc}") from None
    return {name: profile_from_dict(name, entry) for name, entry in doc.items()}


def interference_to_dict(table: InterferenceTable) -> dict:
    return {
        "default": table.default_xi,
        "pairs": [
            {"first": a, "second": b, "xi_first": xa, "xi_second": xb}
            for (a, b), (xa, xb) in sorted(table.pairwise.items())
        ],
    }


def interference_from_dict(doc: Mapping) -> InterferenceTable:
    try:
        pairs = {
            (e["first"], e["second"]): (float(e["xi_first"]), float(e["xi_second"]))
            for e in doc.get("pairs", [])
        }
        return InterferenceTable(default_xi=float(doc.get("default", 1.0)), pairwise=pairs)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed interference document ({exc!r})") from None


def dump_interference(table: InterferenceTable, path) -> None:
    Path(path).write_text(json.dumps(interference_to_dict(table), indent=2) + "\n")


def load_interference(path) -> InterferenceTable:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read interference table from {path}: {exc}") from None
    return interference_from_dict(doc)


def sample_interference(
    tasks: Sequence[str] = TASKS, low: float = 1.1, high: float = 2.0, seed: int = 0
) -> InterferenceTable:
    """Random pairwise table, one independent ratio per job role, self-pairs included."""
    rng = random.Random(seed)
    pairs = {}
    for a, b in itertools.combinations_with_replacement(sorted(tasks), 2):
        pairs[(a, b)] = (rng.uniform(low, high), rng.uniform(low, high))
    return InterferenceTable(default_xi=(low + high) / 2, pairwise=pairs)


# -- built-in profiles ---------------------------------------------------------

# Synthetic stand-ins for the six benchmark tasks on 2080 Ti class GPUs.
# (alpha_comp s, beta_comp s/sample, gradient bytes, delta, mem_base GiB, GiB/sample, max_batch)
_TASK_TABLE = {
    "bert": (0.020, 0.0120, 440e6, 1.5, 3.0, 0.25, 32),
    "cifar10": (0.004, 0.0006, 45e6, 2.0, 0.6, 0.012, 512),
    "deepspeech2": (0.020, 0.0200, 150e6, 1.6, 1.5, 0.30, 31),
    "imagenet": (0.010, 0.0035, 102e6, 2.0, 1.2, 0.075, 128),
    "ncf": (0.003, 1.5e-6, 120e6, 1.3, 0.5, 2e-5, 65536),
    "yolov3": (0.015, 0.0180, 248e6, 1.8, 2.0, 0.45, 20),
}
DEFAULT_GPU_COUNTS = (1, 2, 4, 8, 12, 16)


def _default_comm(gpu_count: int, message_size: float) -> CommParams:
    if gpu_count == 1:
        return CommParams(0.0, 0.0, message_size)
    if gpu_count <= 4:
        # intra-server, PCIe
        return CommParams(2e-4 * gpu_count, 1 / 3.0e9, message_size)
    # inter-server, 10 Gb/s links
    return CommParams(1e-3 * gpu_count / 4, 1 / 0.6e9, message_size)


def default_profiles(gpu_counts: Iterable[int] = DEFAULT_GPU_COUNTS) -> dict[str, ModelProfile]:
    gpu_counts = tuple(gpu_counts)
    out = {}
    for name, (a, b, msg, delta, base, per, mx) in _TASK_TABLE.items():
        comp = CompParams(a, b)
        out[name] = ModelProfile(
            task_name=name,
            comp={g: comp for g in gpu_counts},
            comm={g: _default_comm(g, msg) for g in gpu_counts},
            delta=delta,
            mem_base=base * GIB,
            mem_per_sample=per * GIB,
            max_batch=mx,
        )
    return out


DEFAULT_BATCHES = {
    "bert": (8, 16, 32),
    "cifar10": (64, 128, 256),
    "deepspeech2": (8, 16),
    "imagenet": (32, 64, 128),
    "ncf": (4096, 8192, 16384),
    "yolov3": (8, 16),
}
