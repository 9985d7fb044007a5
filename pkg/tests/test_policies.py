import pytest
from hypothesis import given
from hypothesis import strategies as st

from gpushare.cluster import ClusterSpec, ClusterState
from gpushare.errors import ConfigError
from gpushare.perf_model import InterferenceTable
from gpushare.policies import (
    POLICY_NAMES,
    PolicyKind,
    RunningView,
    SchedContext,
    first_fit_share,
    make_pending,
    schedule_pass,
    tiresias_priority,
    tiresias_queue,
)

from builders import AMPLE, job, unit_profile

PROFILES = {"unit": unit_profile()}


def ctx(xi=1.0, running=None, memory=AMPLE):
    return SchedContext(PROFILES, InterferenceTable.constant(xi), memory, running or {})


def pending(spec, progress=0.0, attained=0.0):
    return make_pending(spec, PROFILES["unit"], AMPLE, progress, attained)


def view(job_id, remaining, gpus=1, attained=0.0, arrival=0.0):
    return RunningView(job_id, "unit", gpus, arrival, 1.0, 1.0, remaining, 0.0, attained)


def cluster(servers, gpus, placed=()):
    s = ClusterState(ClusterSpec(servers, gpus, AMPLE))
    for job_id, keys in placed:
        s.allocate(job_id, keys, 0.0)
    return s


def starts(actions):
    return [a.job_id for a in actions if a.kind == "start"]


class TestPolicyKind:
    def test_parse_labels(self):
        assert PolicyKind.parse("SJF-BSBF").name == "sjf_bsbf"
        assert PolicyKind.parse("sjf_ffs").label == "sjf-ffs"
        assert PolicyKind.parse("tiresias").preemptive
        assert not PolicyKind.parse("fifo").preemptive

    def test_unknown(self):
        with pytest.raises(ConfigError, match="choose from"):
            PolicyKind.parse("lottery")

    def test_bad_thresholds(self):
        with pytest.raises(ConfigError):
            PolicyKind("tiresias", thresholds=(10.0, 5.0))


class TestQueueOrder:
    def test_fifo_blocks_behind_the_head(self):
        state = cluster(1, 2, [("r", [(0, 0)])])
        acts = schedule_pass(PolicyKind("fifo"), [pending(job("a", 0, 50, gpus=2)), pending(job("b", 1, 5))],
                             state, 1.0, ctx(running={"r": view("r", 100)}))
        assert starts(acts) == []
        assert [a.job_id for a in acts] == ["a", "b"]

    def test_sjf_backfills(self):
        state = cluster(1, 2, [("r", [(0, 0)])])
        acts = schedule_pass(PolicyKind("sjf"), [pending(job("a", 0, 50, gpus=2)), pending(job("b", 1, 5))],
                             state, 1.0, ctx(running={"r": view("r", 100)}))
        assert starts(acts) == ["b"]

    def test_sjf_orders_by_expected_remaining(self):
        state = cluster(1, 1)
        acts = schedule_pass(PolicyKind("sjf"), [pending(job("a", 0, 50)), pending(job("b", 1, 5))],
                             state, 1.0, ctx())
        assert starts(acts) == ["b"]

    def test_consolidated_placement(self):
        state = cluster(2, 2, [("r", [(0, 0)])])
        acts = schedule_pass(PolicyKind("sjf"), [pending(job("a", 0, 5, gpus=2))], state, 0.0,
                             ctx(running={"r": view("r", 100)}))
        assert acts[0].gpus == ((1, 0), (1, 1))

    def test_policy_does_not_mutate_state(self):
        state = cluster(1, 2)
        before = state.occupancy()
        schedule_pass(PolicyKind("sjf"), [pending(job("a", 0, 5, gpus=2))], state, 0.0, ctx())
        assert state.occupancy() == before


class TestSharing:
    def setup_method(self):
        self.state = cluster(1, 1, [("p", [(0, 0)])])
        self.running = {"p": view("p", 200)}

    def test_bsbf_shares_under_light_interference(self):
        acts = schedule_pass(PolicyKind("sjf_bsbf"), [pending(job("q", 0, 100))], self.state, 0.0,
                             ctx(1.2, self.running))
        (a,) = acts
        assert a.kind == "start" and a.shared_with == ("p",)
        assert a.pair.share and a.pair.avg_jct == pytest.approx(170.0)

    def test_bsbf_waits_under_heavy_interference(self):
        acts = schedule_pass(PolicyKind("sjf_bsbf"), [pending(job("q", 0, 100))], self.state, 0.0,
                             ctx(2.5, self.running))
        assert [a.kind for a in acts] == ["defer"]

    def test_ffs_shares_regardless(self):
        acts = schedule_pass(PolicyKind("sjf_ffs"), [pending(job("q", 0, 100))], self.state, 0.0,
                             ctx(2.5, self.running))
        assert starts(acts) == ["q"]
        assert acts[0].pair.avg_jct == pytest.approx(300.0)

    def test_plain_sjf_never_shares(self):
        acts = schedule_pass(PolicyKind("sjf"), [pending(job("q", 0, 100))], self.state, 0.0,
                             ctx(1.0, self.running))
        assert starts(acts) == []

    def test_full_gpus_are_never_offered(self):
        state = cluster(1, 1, [("p", [(0, 0)]), ("r", [(0, 0)])])
        running = {"p": view("p", 200), "r": view("r", 50)}
        acts = schedule_pass(PolicyKind("sjf_bsbf"), [pending(job("q", 0, 1))], state, 0.0, ctx(1.0, running))
        assert starts(acts) == []


class TestFirstFitShare:
    def test_mixes_shared_and_free_gpus(self):
        state = cluster(1, 4, [("r", [(0, 0), (0, 1)])])
        c = ctx(1.5, {"r": view("r", 100, gpus=2)})
        gpus = first_fit_share(pending(job("q", 0, 10, gpus=4)), state, c)
        assert gpus == ((0, 0), (0, 1), (0, 2), (0, 3))

    def test_none_when_short(self):
        state = cluster(1, 4, [("r", [(0, 0), (0, 1)]), ("s", [(0, 0), (0, 1)])])
        c = ctx(1.5, {"r": view("r", 100, gpus=2), "s": view("s", 100, gpus=2)})
        assert first_fit_share(pending(job("q", 0, 10, gpus=4)), state, c) is None

    def test_memory_blocks_co_location(self):
        prof = unit_profile(mem_base=6.0, mem_per_sample=0.0)
        state = ClusterState(ClusterSpec(1, 1, 10.0))
        state.allocate("r", [(0, 0)], 0.0)
        running = {"r": RunningView("r", "unit", 1, 0.0, 1.0, 1.0, 100, 6.0)}
        c = SchedContext({"unit": prof}, InterferenceTable.constant(1.0), 10.0, running)
        q = make_pending(job("q", 0, 10), prof, 10.0)
        assert first_fit_share(q, state, c) is None


class TestTiresias:
    def test_queue_index(self):
        assert tiresias_queue(0.0, (3600.0,)) == 0
        assert tiresias_queue(3600.0, (3600.0,)) == 1
        assert tiresias_queue(5e4, (3600.0, 36000.0)) == 2

    def test_priority_key(self):
        assert tiresias_priority(10, 5.0, "a", (3600.0,)) < tiresias_priority(4000, 0.0, "b", (3600.0,))
        assert tiresias_priority(10, 1.0, "a", (3600.0,)) < tiresias_priority(20, 2.0, "b", (3600.0,))

    def test_demoted_job_is_preempted(self):
        state = cluster(1, 1, [("r", [(0, 0)])])
        c = ctx(running={"r": view("r", 100, attained=4000.0)})
        acts = schedule_pass(PolicyKind("tiresias"), [pending(job("q", 5, 10))], state, 5.0, c)
        assert [(a.kind, a.job_id) for a in acts] == [("preempt", "r"), ("start", "q")]

    def test_same_queue_keeps_the_earlier_job(self):
        state = cluster(1, 1, [("r", [(0, 0)])])
        c = ctx(running={"r": view("r", 100, attained=10.0)})
        acts = schedule_pass(PolicyKind("tiresias"), [pending(job("q", 5, 10))], state, 5.0, c)
        assert [(a.kind, a.job_id) for a in acts] == [("defer", "q")]


sizes = st.lists(st.sampled_from([1, 2, 4]), min_size=1, max_size=8)


@given(st.sampled_from(POLICY_NAMES), sizes, st.lists(st.integers(0, 7), max_size=4, unique=True),
       st.floats(1.0, 3.0))
def test_pass_leaves_no_fitting_job_behind(name, job_sizes, busy, xi):
    state = cluster(2, 4, [(f"r{k}", [divmod(g, 4)]) for k, g in enumerate(busy)])
    running = {f"r{k}": view(f"r{k}", 100 + k) for k in range(len(busy))}
    jobs = [pending(job(f"j{k}", k, 10 + 7 * k, gpus=g)) for k, g in enumerate(job_sizes)]
    policy = PolicyKind(name)
    acts = schedule_pass(policy, jobs, state, 10.0, ctx(xi, running))
    work = state.copy()
    for a in acts:
        if a.kind == "preempt":
            work.release(a.job_id)
    for a in acts:
        if a.kind == "start":
            work.allocate(a.job_id, a.gpus, 10.0, next(j.spec.gpus for j in jobs if j.spec.job_id == a.job_id))
    work.check()
    if not policy.preemptive:
        assert not any(a.kind == "preempt" for a in acts)
    decided = {a.job_id for a in acts if a.kind in ("start", "defer")}
    assert decided == {j.spec.job_id for j in jobs}
    free = len(work.free_gpus())
    deferred = [j for j in jobs if j.spec.job_id not in starts(acts)]
    if name == "fifo":
        head = min(jobs, key=lambda j: (j.arrival, j.spec.job_id))
        assert head not in deferred or head.spec.gpus > free
    else:
        assert all(j.spec.gpus > free for j in deferred)
    for a in acts:
        if a.shared_with:
            assert name in ("sjf_ffs", "sjf_bsbf")
            if name == "sjf_bsbf":
                assert a.pair.share
