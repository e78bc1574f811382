import math
import random

import pytest

from conftest import graph, random_cluster, small_chain
from oracles import exhaustive_optimum, min_instances_exhaustive, placement_cost, violations
from vfcplace.errors import InconsistentGap, Infeasible, InstanceTooLarge
from vfcplace.exact import (
    ExactConfig,
    export_lp,
    min_processing_instances,
    optimality_gap,
    solve_exact,
    solve_milp,
)
from vfcplace.feasibility import all_violations
from vfcplace.placer import PlacementRequest, first_fit, pick_sources, place

SMALL = ExactConfig(max_nodes=8, time_budget=None)


def random_request(seed, max_sources=2, tight=False):
    rng = random.Random(seed)
    g = random_cluster(rng, rng.randint(5, 8), rng.randint(0, 3), rsu=rng.random() < 0.3)
    cn = g.node_ids[0]
    cams = [v.id for v in g.nodes if v.capacities["camera"] >= 1 and not v.is_rsu and v.id != cn]
    if not cams:
        return None
    k = min(len(cams), 1 if rng.random() < 0.35 else max_sources)
    app = small_chain(rng.uniform(150, 400) if tight else 200.0)
    return PlacementRequest(g, cn, (app,), tuple(rng.sample(cams, k)), max_hops=3)


def exact_or_inf(req, cfg=SMALL):
    try:
        return solve_exact(req, cfg)[0].report.costs.total_objective
    except Infeasible:
        return math.inf


class TestSolveExact:
    def test_line_matches_enumeration(self):
        g = graph([("S", "X"), ("X", "C")])
        req = PlacementRequest(g, "C", (small_chain(),), ("S",), max_hops=3)
        out, proven = solve_exact(req, SMALL)
        assert proven and out.status == "success"
        assert out.report.costs.total_objective == pytest.approx(exhaustive_optimum(g, "C", small_chain(), ("S",), 3))

    @pytest.mark.parametrize("seed", range(30))
    def test_matches_exhaustive_oracle(self, seed):
        req = random_request(seed)
        if req is None:
            pytest.skip("no camera node")
        ours = exact_or_inf(req)
        ref = exhaustive_optimum(req.cluster, req.control_node, req.apps[0], req.sources, req.max_hops)
        if ref == math.inf:
            assert ours == math.inf
        else:
            assert ours == pytest.approx(ref, abs=1e-9)

    @pytest.mark.parametrize("seed", range(12))
    def test_optimum_is_feasible_and_costed_right(self, seed):
        req = random_request(seed)
        if req is None:
            pytest.skip("no camera node")
        try:
            out, _ = solve_exact(req, SMALL)
        except Infeasible:
            return
        assert all_violations(out.placement, out.instance_graph, req.cluster, req.limits) == []
        assert violations(out.placement, out.instance_graph, req.cluster, req.limits) == set()
        routes = {k: p.nodes for k, p in out.placement.routes.items()}
        ig = out.instance_graph
        *_, total = placement_cost(req.cluster, out.placement.mapping, ig.types, ig.flows, routes)
        assert out.report.costs.total_objective == pytest.approx(total)

    @pytest.mark.parametrize("seed", range(10))
    def test_pruning_is_sound(self, seed):
        req = random_request(seed, tight=True)
        if req is None:
            pytest.skip("no camera node")
        a = exact_or_inf(req, SMALL)
        b = exact_or_inf(req, ExactConfig(max_nodes=8, time_budget=None, prune=False))
        assert a == b or a == pytest.approx(b, abs=1e-9)

    @pytest.mark.parametrize("seed", range(25))
    def test_exact_never_worse_than_greedy(self, seed):
        req = random_request(seed, tight=True)
        if req is None:
            pytest.skip("no camera node")
        e = exact_or_inf(req)
        for out in (place(req), first_fit(req)):
            if out.status == "success":
                assert e <= out.report.costs.total_objective + 1e-9

    def test_infeasible(self):
        g = graph([("S", "C")], cpu=1.0)
        req = PlacementRequest(g, "C", (small_chain(),), ("S",))
        with pytest.raises(Infeasible):
            solve_exact(req, SMALL)

    def test_too_large(self):
        g = random_cluster(random.Random(0), 20, 5)
        req = PlacementRequest(g, "n0", (small_chain(),), pick_sources(g, 1, exclude=["n0"]))
        with pytest.raises(InstanceTooLarge, match="20 nodes"):
            solve_exact(req)

    def test_deterministic_and_parallel(self):
        req = random_request(3)
        a = solve_exact(req, SMALL)[0].to_dict(timing=False)
        b = solve_exact(req, SMALL)[0].to_dict(timing=False)
        c = solve_exact(req, ExactConfig(max_nodes=8, time_budget=None, workers=2))[0].to_dict(timing=False)
        assert a == b
        assert a["report"]["total_objective"] == pytest.approx(c["report"]["total_objective"])


class TestMilp:
    @pytest.mark.parametrize("seed", range(8))
    def test_agrees_with_search(self, seed):
        req = random_request(seed)
        if req is None:
            pytest.skip("no camera node")
        e = exact_or_inf(req)
        try:
            m = solve_milp(req)
        except Infeasible:
            m = math.inf
        assert (e == m == math.inf) or m == pytest.approx(e, abs=1e-6)

    def test_lp_export(self, tmp_path):
        req = random_request(1)
        text = export_lp(req, tmp_path / "m.lp")
        assert text.startswith("\\") and text.rstrip().endswith("End")
        assert "Subject To" in text and "Binaries" in text
        assert (tmp_path / "m.lp").read_text() == text


class TestGap:
    def test_table_value(self):
        assert optimality_gap(1.1783, 1.0) == pytest.approx(17.83)

    def test_equal(self):
        assert optimality_gap(2.0, 2.0) == 0.0

    def test_inconsistent(self):
        with pytest.raises(InconsistentGap):
            optimality_gap(0.9, 1.0)
        assert optimality_gap(0.9, 1.0, strict=False) == 0.0


class TestMinInstances:
    def test_single_source_ample(self):
        g = graph([("S", "X"), ("X", "C")], cpu=1000.0, mem=10_000.0)
        req = PlacementRequest(g, "C", (small_chain(),), ("S",))
        res = min_processing_instances(req, SMALL)
        assert res.proven and res.counts == {"cmp": 1, "pre": 1}

    @pytest.mark.parametrize("seed", range(15))
    def test_matches_exhaustive_count(self, seed):
        req = random_request(seed, tight=True)
        if req is None:
            pytest.skip("no camera node")
        ref = min_instances_exhaustive(req.cluster, req.control_node, req.apps[0], req.sources, req.max_hops)
        try:
            res = min_processing_instances(req, SMALL)
        except Infeasible:
            assert ref == math.inf
            return
        assert res.proven and res.total == ref
