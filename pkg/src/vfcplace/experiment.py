"""Evaluation harness: reference pipeline, method sweeps and CSV rows."""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .community import SelectedCluster, select_cluster
from .errors import Infeasible, InstanceTooLarge, SearchBudgetExceeded
from .exact import ExactConfig, min_processing_instances, optimality_gap, solve_exact
from .graph import ClusterGraph
from .placer import PlacementOutcome, PlacementRequest, first_fit, pick_sources, place
from .scenario import REFERENCE_SEED, Scenario, ScenarioSpec, generate, reference_scenario, sized_variant
from .service import builtin_profiles
from .sim import (
    ServiceTimeStats,
    SimConfig,
    SimTrace,
    resilience_or_nan,
    run as run_sim,
    run_edge_comparator,
    service_time_stats,
    survivor_schedule,
)

CSV_COLUMNS = (
    "sources",
    "method",
    "chain_len",
    "seed",
    "status",
    "node_cost",
    "link_cost",
    "hop_cost",
    "total",
    "processing_instances",
    "aggregate_hops",
    "runtime_s",
    "gap_pct",
    "total_gap_pct",
)

PLACEMENT_NODES = 12
PLACEMENT_MAX_HOPS = 3


def placement_cluster(sel: SelectedCluster, max_nodes: int = PLACEMENT_NODES) -> SelectedCluster:
    """The ``max_nodes`` members nearest the control node.

    Members are taken in breadth-first layers from the control node, highest
    CCP first within a layer, so the result stays connected.
    """
    g = sel.subgraph
    cn = sel.control_node
    order = [cn]
    seen = {cn}
    frontier = [cn]
    while frontier and len(order) < max_nodes:
        layer = sorted({w for u in frontier for w in g.neighbors(u)} - seen, key=lambda v: (-g.node(v).ccp, v))
        seen.update(layer)
        order += layer
        frontier = layer
    sub = g.subgraph(order[:max_nodes])
    return SelectedCluster(sub, cn, sel.method, sel.modularity, sel.communities)


@dataclass
class ReferencePipeline:
    scenario: Scenario
    graph: ClusterGraph
    selected: SelectedCluster
    placement: SelectedCluster


def reference_pipeline(
    spec: ScenarioSpec | None = None, method: str = "louvain", max_nodes: int = PLACEMENT_NODES
) -> ReferencePipeline:
    sc = generate(spec or reference_scenario())
    g = sc.graph()
    sel = select_cluster(g, method)
    return ReferencePipeline(sc, g, sel, placement_cluster(sel, max_nodes))


@dataclass(frozen=True)
class ExperimentPlan:
    scenario: ScenarioSpec = field(default_factory=reference_scenario)
    sweep: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7)
    methods: tuple[str, ...] = ("heuristic", "firstfit", "exact")
    seeds: tuple[int, ...] = (0,)
    chains: tuple[int, ...] = (3, 4)
    detector: str = "full"
    max_hops: int = PLACEMENT_MAX_HOPS
    cluster_nodes: int = PLACEMENT_NODES
    exact: ExactConfig = field(default_factory=lambda: ExactConfig(time_budget=120.0))
    min_instances: bool = False
    timing: bool = True
    workers: int = 1

    def __post_init__(self):
        if not self.sweep or min(self.sweep) < 1:
            raise ValueError("sweep values must be >= 1")
        for m in self.methods:
            if m not in ("heuristic", "firstfit", "exact"):
                raise ValueError(f"unknown method {m!r}")
        for c in self.chains:
            if c not in (3, 4):
                raise ValueError("built-in chains have length 3 or 4")


def build_request(pipe: ReferencePipeline, n_sources: int, chain_len: int, detector: str = "full", max_hops: int = PLACEMENT_MAX_HOPS) -> PlacementRequest:
    app = next(p.type_graph for p in builtin_profiles(detector) if len(p.type_graph) == chain_len)
    sc = pipe.placement
    sources = pick_sources(sc.subgraph, n_sources, exclude=(sc.control_node,))
    return PlacementRequest(sc.subgraph, sc.control_node, (app,), sources, max_hops=max_hops)


def _row(n, method, chain, seed, outcome: PlacementOutcome | None, status: str, runtime: float | None) -> dict:
    row = {c: "" for c in CSV_COLUMNS}
    row.update(sources=n, method=method, chain_len=chain, seed=seed, status=status)
    if outcome is not None and outcome.status == "success":
        c = outcome.report.costs
        row.update(
            node_cost=c.node_cost,
            link_cost=c.link_cost,
            hop_cost=c.hop_count,
            total=c.total_objective,
            processing_instances=outcome.report.processing_instances,
            aggregate_hops=outcome.report.aggregate_hops,
        )
    row["runtime_s"] = "" if runtime is None else runtime
    return row


def _point(args) -> list[dict]:
    plan, seed, n, chain = args
    pipe = reference_pipeline(replace(plan.scenario, seed=seed), max_nodes=plan.cluster_nodes)
    req = build_request(pipe, n, chain, plan.detector, plan.max_hops)
    rows = []
    results: dict[str, PlacementOutcome] = {}
    exact_proven = False
    for method in plan.methods:
        t0 = time.perf_counter()
        outcome, status = None, ""
        if method == "heuristic":
            outcome = place(req)
            status = outcome.status
        elif method == "firstfit":
            outcome = first_fit(req)
            status = outcome.status
        else:
            try:
                outcome, exact_proven = solve_exact(req, plan.exact)
                status = "optimal" if exact_proven else "budget"
            except InstanceTooLarge:
                status = "skipped"
            except Infeasible:
                status = "infeasible"
            except SearchBudgetExceeded:
                status = "budget"
        runtime = time.perf_counter() - t0 if plan.timing else None
        if outcome is not None:
            results[method] = outcome
        rows.append(_row(n, method, chain, seed, outcome, status, runtime))
    ex = results.get("exact")
    for row in rows:
        out = results.get(row["method"])
        if ex is None or out is None or out.status != "success":
            continue
        e, h = ex.report.costs, out.report.costs
        row["gap_pct"] = optimality_gap(h.link_cost, e.link_cost, strict=False)
        row["total_gap_pct"] = optimality_gap(h.total_objective, e.total_objective, strict=exact_proven)
    return rows


def run_experiment(plan: ExperimentPlan) -> list[dict]:
    jobs = [(plan, seed, n, chain) for seed in plan.seeds for chain in plan.chains for n in plan.sweep]
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            chunks = list(pool.map(_point, jobs))
    else:
        chunks = [_point(j) for j in jobs]
    rows = [r for chunk in chunks for r in chunk]
    order = {m: i for i, m in enumerate(plan.methods)}
    rows.sort(key=lambda r: (r["seed"], r["chain_len"], r["sources"], order[r["method"]]))
    return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf"
        return repr(round(v, 9))
    return str(v)


def rows_to_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


# -- simulation studies --------------------------------------------------------

SIM_SOURCES = 4
COMMUNITY_SIZES = (15, 30)


def simulation_pair(
    spec: ScenarioSpec,
    chain_len: int,
    n_sources: int = SIM_SOURCES,
    seeds: Sequence[int] = range(100),
    detector: str = "full",
    cfg: SimConfig | None = None,
) -> tuple[list[SimTrace], list[SimTrace]]:
    """VFC and RSU-only traces for one chain over a seed sweep.

    The VFC side uses the heuristic placement on the reference placement
    cluster; both sides run over the full selected cluster.
    """
    cfg = cfg or SimConfig()
    pipe = reference_pipeline(spec)
    req = build_request(pipe, n_sources, chain_len, detector)
    out = place(req)
    app = req.apps[0]
    m = pipe.scenario.matrices()
    vfc, edge = [], []
    for seed in seeds:
        c = replace(cfg, seed=seed)
        vfc.append(run_sim(pipe.selected, out.placement, out.instance_graph, c, m))
        edge.append(run_edge_comparator(pipe.selected, req.sources, app, replace(c, edge_mode=True), m))
    return vfc, edge


def service_time_table(
    spec: ScenarioSpec, chains: Sequence[int] = (3, 4), seeds: Sequence[int] = range(100), **kw
) -> dict[str, dict[int, ServiceTimeStats]]:
    """Service-time statistics per mode (``vfc`` or ``edge``) and chain length."""
    table: dict[str, dict[int, ServiceTimeStats]] = {"vfc": {}, "edge": {}}
    for chain in chains:
        vfc, edge = simulation_pair(spec, chain, seeds=seeds, **kw)
        table["vfc"].update(service_time_stats(vfc))
        table["edge"].update(service_time_stats(edge))
    return table


@dataclass(frozen=True)
class ResilienceEntry:
    method: str
    size: int
    cluster_nodes: int
    mean_resilience: float
    mean_survivors: float
    wins: int
    runs: int

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "size": self.size,
            "cluster_nodes": self.cluster_nodes,
            "mean_resilience": self.mean_resilience,
            "mean_survivors": self.mean_survivors,
            "wins": self.wins,
            "runs": self.runs,
        }


def resilience_comparison(
    sizes: Sequence[int] = COMMUNITY_SIZES,
    seeds: Sequence[int] = range(100),
    scenario_seed: int = REFERENCE_SEED,
    cfg: SimConfig | None = None,
) -> list[ResilienceEntry]:
    """Louvain against Girvan-Newman selection, seed by seed.

    ``wins`` counts the seeds where a method's resilience is at least the
    other's. A cluster without any betweenness scores 1.
    """
    cfg = cfg or SimConfig()
    out = []
    for size in sizes:
        sc = generate(sized_variant(size, scenario_seed))
        g = sc.graph()
        m = sc.matrices()
        sel = {name: select_cluster(g, name) for name in ("louvain", "girvan_newman")}
        scores: dict[str, list[float]] = {name: [] for name in sel}
        surv: dict[str, list[int]] = {name: [] for name in sel}
        for seed in seeds:
            c = replace(cfg, seed=seed)
            for name, s in sel.items():
                final = survivor_schedule(s.subgraph, c, m)[-1]
                r = resilience_or_nan(s, final)
                scores[name].append(1.0 if math.isnan(r) else r)
                surv[name].append(len(final))
        for name, other in (("louvain", "girvan_newman"), ("girvan_newman", "louvain")):
            wins = sum(a >= b for a, b in zip(scores[name], scores[other]))
            out.append(
                ResilienceEntry(
                    name,
                    size,
                    len(sel[name].members),
                    float(np.mean(scores[name])),
                    float(np.mean(surv[name])),
                    wins,
                    len(scores[name]),
                )
            )
    return out
