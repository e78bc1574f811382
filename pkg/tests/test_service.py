from collections import defaultdict

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_chain
from vfcplace.service import (
    CONTROL,
    ApplicationProfile,
    InstanceGraph,
    TaskInstance,
    TaskType,
    TypeGraph,
    builtin_profiles,
    profile_by_name,
    scale_minimum,
    shared_type_merge,
    upper_limit,
    with_limits,
)


def chain(alphas, flow=100.0, name="t"):
    ts = [TaskType("cap", {"cpu": 1, "camera": 1})]
    ts += [TaskType(f"p{i}", {"cpu": 2}, alpha=a, cpu_per_kbps=0.01) for i, a in enumerate(alphas)]
    return TypeGraph(name, tuple(ts), flow)


class TestProfiles:
    def test_chain_lengths(self):
        app1, app2 = builtin_profiles()
        assert (len(app1.type_graph), len(app2.type_graph)) == (3, 4)
        assert app1.type_graph.labels == ("capture", "preprocess", "compress")
        assert app2.type_graph.labels == ("capture", "preprocess", "frame_extract", "detect")

    @pytest.mark.parametrize("det,lat", [("full", 7.417), ("tiny", 0.31277)])
    def test_detector_latency(self, det, lat):
        assert profile_by_name("app2", det).type_graph.chain[-1].proc_latency_s == lat

    def test_memory_within_measured_range(self):
        for p in builtin_profiles():
            assert all(110 <= t.demands["mem"] <= 220 for t in p.type_graph.chain)

    def test_unknown_profile(self):
        with pytest.raises(KeyError):
            profile_by_name("app9")

    def test_json_round_trip(self):
        p = profile_by_name("app2")
        assert ApplicationProfile.from_dict(p.to_dict()).type_graph == p.type_graph


class TestTaskType:
    @pytest.mark.parametrize(
        "kw", [{"alpha": 1.5}, {"alpha": -0.1}, {"n_min": 0}, {"n_min": 3, "n_max": 2}, {"demands": {"cpu": -1}}]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TaskType("x", **kw)

    def test_unknown_resource(self):
        with pytest.raises(ValueError):
            TaskType("x", {"disk": 1})


class TestScaleMinimum:
    def test_flows_100_80_40(self):
        ig = scale_minimum(chain([0.8, 0.5]), 1)
        rates = [ig.flows[k] for k in ig.streams[0].flow_keys]
        assert rates == pytest.approx([100.0, 80.0, 40.0])

    def test_three_sources(self):
        ig = scale_minimum(chain([0.8, 0.5]), 3)
        assert ig.counts == {"cap": 3, "p0": 1, "p1": 1}
        assert ig.inbound(TaskInstance("p0", 0)) == pytest.approx(300.0)
        assert ig.flows[(TaskInstance("p1", 0), CONTROL)] == pytest.approx(120.0)

    def test_zero_sources(self):
        with pytest.raises(ValueError):
            scale_minimum(chain([0.8]), 0)

    def test_idempotent(self):
        tg = small_chain()
        assert scale_minimum(tg, 4).to_dict() == scale_minimum(tg, 4).to_dict()

    def test_round_trip(self):
        ig = scale_minimum(small_chain(), 3)
        assert InstanceGraph.from_dict(ig.to_dict()).to_dict() == ig.to_dict()

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=4), st.integers(1, 8), st.floats(1.0, 1000.0))
    def test_stream_rate_is_product_of_alphas(self, alphas, n, flow):
        tg = chain(alphas, flow)
        ig = scale_minimum(tg, n)
        for s in ig.streams:
            expect = flow
            for k, rate in enumerate(s.rates):
                if k:
                    expect *= alphas[k - 1]
                assert rate == pytest.approx(expect)
        for t in tg.chain:
            assert ig.counts[t.label] >= t.n_min
        # conservation at every processing instance
        for inst in ig.instances:
            fin = ig.inbound(inst)
            if fin:
                assert ig.outbound(inst) == pytest.approx(ig.types[inst.label].alpha * fin)


class TestUpperLimit:
    def test_seven(self):
        assert set(upper_limit(small_chain(), 7).values()) == {7}

    def test_one_collapses(self):
        tg = with_limits(small_chain(), upper_limit(small_chain(), 1))
        assert all(t.n_max == 1 == t.n_min for t in tg.chain)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            upper_limit(small_chain(), 0)


class TestSharedMerge:
    def two_apps(self):
        pre = TaskType("preprocess", {"cpu": 5}, alpha=0.8, cpu_per_kbps=0.05)
        cap = TaskType("capture", {"cpu": 1, "camera": 1})
        a = TypeGraph("a", (cap, pre, TaskType("compress", {"cpu": 3}, alpha=0.3)), 100.0)
        b = TypeGraph("b", (cap, pre, TaskType("detect", {"cpu": 9}, alpha=0.05)), 100.0)
        return scale_minimum(a, ["v1"]), scale_minimum(b, ["v1"])

    def test_capacity_for_both(self):
        m = shared_type_merge(self.two_apps(), {"preprocess": 10.0})
        assert m.counts["preprocess"] == 1
        assert m.counts["capture"] == 1

    def test_capacity_for_one(self):
        m = shared_type_merge(self.two_apps(), {"preprocess": 6.0})
        assert m.counts["preprocess"] == 2

    def test_flows_sum_per_app(self):
        apps = self.two_apps()
        m = shared_type_merge(apps, {"preprocess": 10.0})
        # recompute each app's stream rates and sum them per merged pair
        expect = defaultdict(float)
        for s in m.streams:
            for key, r in zip(s.flow_keys, s.rates):
                expect[key] += r
        assert m.flows == pytest.approx(dict(expect))
        assert sum(m.flows.values()) == pytest.approx(sum(sum(g.flows.values()) for g in apps))
        assert m.inbound(TaskInstance("preprocess", 0)) == pytest.approx(200.0)

    def test_conflicting_shared_type(self):
        a = scale_minimum(TypeGraph("a", (TaskType("capture", {"cpu": 1}),), 10.0), 1)
        b = scale_minimum(TypeGraph("b", (TaskType("capture", {"cpu": 2}),), 10.0), 1)
        with pytest.raises(ValueError):
            shared_type_merge([a, b])
