"""GPU-sharing-aware scheduling and trace-driven simulation for multi-tenant DL clusters."""

from .cluster import ClusterSpec, ClusterState
from .pair_sched import JobSnapshot, PairSchedule, batch_size_scaling, best_pair_schedule, brute_force_kappa, pair_jct, sign_condition
from .perf_model import (
    CommParams,
    CompParams,
    InterferenceTable,
    ModelProfile,
    comm_time,
    comp_time,
    default_profiles,
    fit_profile,
    iter_time,
    shared_iter_time,
    throughput,
)
from .policies import POLICY_NAMES, PolicyKind, schedule_pass
from .simulator import SimMetrics, run
from .trace import JobSpec, WorkloadSpec, generate_workload, load_trace, physical_preset, save_trace, simulation_preset

__version__ = "0.1.0"
