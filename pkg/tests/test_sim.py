import math
import random
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import edge, node, random_cluster
from vfcplace.community import SelectedCluster, resilience_score, select_cluster
from vfcplace.errors import NoSources, UndefinedScore
from vfcplace.feasibility import Placement
from vfcplace.graph import ClusterGraph, VehicleNode
from vfcplace.mobility import SegmentRegistry, TransitionMatrix
from vfcplace.placer import PlacementRequest, pick_sources, place
from vfcplace.service import CONTROL, TaskInstance, TaskType, TypeGraph, scale_minimum
from vfcplace.sim import (
    SimConfig,
    chain_service_time,
    edge_route,
    run,
    run_edge_comparator,
    service_time_stats,
    survivor_schedule,
)

TG = TypeGraph(
    "mini",
    (
        TaskType("cap", {"cpu": 2, "camera": 1}),
        TaskType("pre", {"cpu": 5}, alpha=0.8, proc_latency_s=0.05),
        TaskType("cmp", {"cpu": 4}, alpha=0.5, proc_latency_s=0.08),
    ),
    200.0,
)


def line(bw1=1000.0, bw2=500.0, ccp=1.0):
    g = ClusterGraph([node("S", ccp=ccp), node("X", ccp=ccp), node("C", ccp=ccp)], [edge("S", "X", bw1), edge("X", "C", bw2)])
    ig = scale_minimum(TG, ["S"])
    cap, pre, cmp_ = TaskInstance("cap", 0), TaskInstance("pre", 0), TaskInstance("cmp", 0)
    pl = Placement(
        {cap: "S", pre: "X", cmp_: "C"},
        {(cap, pre): g.path("SX"), (pre, cmp_): g.path("XC"), (cmp_, CONTROL): g.path("C")},
        "C",
    )
    return g, ig, pl, SelectedCluster(g, "C", "louvain", 0.0)


def placed_cluster(seed):
    g = random_cluster(random.Random(seed), 12, 10)
    sel = select_cluster(g)
    try:
        return sel, pick_sources(sel.subgraph, 1, exclude=[sel.control_node])
    except NoSources:
        return sel, None


class TestServiceTime:
    def test_hand_computed(self):
        _, ig, pl, _ = line()
        cfg = SimConfig(step=60.0, hop_delay_s=0.002)
        # 200 kb/s * 60 s over 1000, then 160 * 60 over 500, two hops, two latencies
        expect = 12000 / 1000 + 9600 / 500 + 2 * 0.002 + 0.05 + 0.08
        assert chain_service_time(ig.streams[0], pl, ig, cfg) == pytest.approx(expect)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(10, 1e4), st.floats(10, 1e4), st.floats(1.0, 10.0), st.floats(0, 5))
    def test_monotone_in_bandwidth_and_latency(self, bw1, bw2, factor, extra):
        g, ig, pl, _ = line(bw1, bw2)
        cfg = SimConfig()
        base = chain_service_time(ig.streams[0], pl, ig, cfg)
        _, ig2, pl2, _ = line(bw1 * factor, bw2)
        assert chain_service_time(ig2.streams[0], pl2, ig2, cfg) <= base + 1e-12
        ig.types["pre"] = replace(ig.types["pre"], proc_latency_s=0.05 + extra)
        assert chain_service_time(ig.streams[0], pl, ig, cfg) >= base - 1e-12


class TestRun:
    def test_deterministic_stayers(self):
        _, ig, pl, sc = line()
        tr = run(sc, pl, ig, SimConfig())
        assert all(s.survivors == ("C", "S", "X") for s in tr.steps)
        assert tr.resilience == 1.0
        assert tr.final.failed == ()

    def test_zero_steps_is_initial_state(self):
        _, ig, pl, sc = line(ccp=0.5)
        tr = run(sc, pl, ig, SimConfig(), n_steps=0)
        assert len(tr.steps) == 1 and tr.steps[0].survivors == ("C", "S", "X")
        assert tr.steps[0].live_edges == 2

    def test_departure_fails_chain(self):
        _, ig, pl, sc = line(ccp=0.0001)
        tr = run(sc, pl, ig, SimConfig(), n_steps=1)
        assert tr.final.survivors == ()
        assert tr.final.failed == ("mini@S",)

    def test_placement_outside_cluster(self):
        _, ig, pl, sc = line()
        pl.mapping[TaskInstance("pre", 0)] = "Z"
        with pytest.raises(ValueError):
            run(sc, pl, ig)

    def test_matrix_departure(self):
        reg = SegmentRegistry(("RS1", "RS2"), {"RS1": ("RS2",), "RS2": ("RS1",)})
        g, ig, pl, sc = line()
        stay = TransitionMatrix("S", reg, np.array([[5, 0], [0, 5]]))
        leave = TransitionMatrix("X", reg, np.array([[0, 5], [5, 0]]))
        sched = survivor_schedule(g, SimConfig(), {"S": stay, "X": leave}, 1)
        assert sched[1] == ("C", "S")

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 1000))
    def test_survivors_shrink_and_resilience_matches(self, seed, sim_seed):
        sel, srcs = placed_cluster(seed)
        if srcs is None:
            return
        out = place(PlacementRequest(sel.subgraph, sel.control_node, (TG,), srcs))
        tr = run(sel, out.placement, out.instance_graph, SimConfig(seed=sim_seed))
        for a, b in zip(tr.steps, tr.steps[1:]):
            assert set(b.survivors) <= set(a.survivors)
            assert set(a.failed) <= set(b.failed)
        try:
            expect = resilience_score(sel, tr.final.survivors)
        except UndefinedScore:
            assert math.isnan(tr.resilience)
        else:
            assert tr.resilience == expect

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 1000))
    def test_per_vehicle_draws_ignore_membership(self, seed, sim_seed):
        g = random_cluster(random.Random(seed), 10, 6)
        cfg = SimConfig(seed=sim_seed)
        full = survivor_schedule(g, cfg)
        drop = g.node_ids[0]
        part = survivor_schedule(g.subgraph(g.node_ids[1:]), cfg)
        assert [tuple(v for v in s if v != drop) for s in full] == part

    def test_seeded_reproducible(self):
        sel, srcs = placed_cluster(3)
        out = place(PlacementRequest(sel.subgraph, sel.control_node, (TG,), srcs))
        a = run(sel, out.placement, out.instance_graph, SimConfig(seed=7))
        b = run(sel, out.placement, out.instance_graph, SimConfig(seed=7))
        assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
        assert a.to_csv().splitlines()[0] == "t,survivors,live_edges,failed_chains"

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimConfig(step=0)
        with pytest.raises(ValueError):
            SimConfig(horizon=10, step=60)


class TestEdgeComparator:
    def star(self, bw):
        rsu = VehicleNode("R", {"cpu": 100}, 1.0, 1.0, True)
        vs = [node(f"s{i}", ccp=0.7) for i in range(3)]
        g = ClusterGraph([rsu] + vs, [edge("R", v.id, bw) for v in vs])
        return SelectedCluster(g, "s0", "louvain", 0.0), [v.id for v in vs]

    def test_infinite_uplink_is_processing_only(self):
        sc, srcs = self.star(math.inf)
        tr = run_edge_comparator(sc, srcs, TG, SimConfig(hop_delay_s=0.0, rsu_speedup=1.0), n_steps=0)
        assert list(tr.final.service_times.values()) == pytest.approx([0.13] * 3)

    def test_constrained_uplink_dominated_by_transfer(self):
        sc, srcs = self.star(100.0)
        tr = run_edge_comparator(sc, srcs, TG, SimConfig(), n_steps=0)
        t = tr.final.service_times["mini@s0"]
        assert t == pytest.approx(200 * 60 / 100 + 0.002 + 0.13 / 4)
        assert t > 100 * 0.13

    def test_rsu_never_departs(self):
        sc, srcs = self.star(500.0)
        sched = survivor_schedule(sc.subgraph, SimConfig(horizon=6000))
        assert all("R" in s for s in sched)

    def test_widest_of_shortest(self):
        rsu = VehicleNode("R", {"cpu": 100}, 1.0, 1.0, True)
        g = ClusterGraph(
            [rsu, node("s"), node("a"), node("b")],
            [edge("s", "a", 100.0), edge("a", "R", 900.0), edge("s", "b", 300.0), edge("b", "R", 300.0)],
        )
        assert edge_route(g, "s", "R").nodes == ("s", "b", "R")

    def test_needs_rsu(self):
        _, _, _, sc = line()
        with pytest.raises(ValueError):
            run_edge_comparator(sc, ["S"], TG)


class TestStats:
    def test_single_value(self):
        _, ig, pl, sc = line()
        tr = run(sc, pl, ig, SimConfig(), n_steps=0)
        s = service_time_stats([tr])[3]
        assert s.minimum == s.maximum == s.mean == tr.final.service_times["mini@S"]
        assert (s.completed, s.failed) == (1, 0)

    def test_failed_counted_separately(self):
        _, ig, pl, sc = line(ccp=0.0001)
        tr = run(sc, pl, ig, SimConfig(), n_steps=1)
        s = service_time_stats([tr])[3]
        assert s.completed == 0 and s.failed == 1 and math.isnan(s.mean)
