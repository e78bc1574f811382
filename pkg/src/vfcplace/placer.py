"""Greedy chain placement along high-cohesion paths, and a first-fit baseline.

Both placers walk every stream (one source feeding one application chain)
and decide, position by position, which instance receives the stream's data
and along which route. State is committed immediately; there is no
backtracking.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .community import SelectedCluster
from .errors import NoControlNode, NoSources
from .feasibility import (
    CostBreakdown,
    ObjectiveWeights,
    Placement,
    flow_label,
    flow_link_cost,
    instance_node_cost,
    total_objective,
)
from .graph import DEFAULT_MAX_HOPS, RESOURCE_KINDS, ClusterGraph, EdgeKey, GraphPath, enumerate_paths
from .service import CONTROL, FlowKey, InstanceGraph, Stream, TaskInstance, TaskType, TypeGraph, upper_limit


def pick_sources(
    g: ClusterGraph, n: int, allow_rsu: bool = False, exclude: Sequence[str] = ()
) -> tuple[str, ...]:
    """The ``n`` camera-equipped nodes with the highest CCP (ties to lower id).

    Nodes in ``exclude`` (normally the control node) are never picked.
    """
    cams = [
        v for v in g.nodes if v.capacities["camera"] >= 1 and (allow_rsu or not v.is_rsu) and v.id not in exclude
    ]
    if n < 1:
        raise ValueError("need at least one source")
    if len(cams) < n:
        raise NoSources(f"{n} sources requested, {len(cams)} camera nodes available")
    cams.sort(key=lambda v: (-v.ccp, v.id))
    return tuple(v.id for v in cams[:n])


@dataclass(frozen=True)
class PlacementRequest:
    cluster: ClusterGraph
    control_node: str
    apps: tuple[TypeGraph, ...]
    sources: tuple[str, ...]
    limits: Mapping[str, int] | None = None
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    max_hops: int = DEFAULT_MAX_HOPS
    allow_rsu_hosting: bool = False
    bandwidth_mode: str = "aggregate"
    ccp_order_everywhere: bool = False
    # when the data already sits on the control node, look for a host on
    # routes leaving it instead of giving up
    leave_control_node: bool = True

    def __post_init__(self):
        if self.control_node not in self.cluster:
            raise NoControlNode(f"control node {self.control_node!r} not in cluster")
        if not self.sources:
            raise NoSources("no source nodes given")
        for s in self.sources:
            if s not in self.cluster:
                raise NoSources(f"source {s!r} not in cluster")
            if self.cluster.node(s).capacities["camera"] < 1:
                raise NoSources(f"source {s!r} has no camera")
        if len(set(self.sources)) != len(self.sources):
            raise ValueError("duplicate source node")
        object.__setattr__(self, "apps", tuple(self.apps))
        types: dict[str, TaskType] = {}
        for app in self.apps:
            for t in app.chain:
                if types.setdefault(t.label, t) != t:
                    raise ValueError(f"task type {t.label!r} differs between applications")
        if self.limits is None:
            lim: dict[str, int] = {}
            for app in self.apps:
                for k, v in upper_limit(app, len(self.sources)).items():
                    lim[k] = max(lim.get(k, 0), v)
            object.__setattr__(self, "limits", lim)

    @classmethod
    def from_selected(
        cls, selected: SelectedCluster, apps: Sequence[TypeGraph], n_sources: int, **kw
    ) -> "PlacementRequest":
        sources = pick_sources(
            selected.subgraph, n_sources, kw.get("allow_rsu_hosting", False), (selected.control_node,)
        )
        return cls(selected.subgraph, selected.control_node, tuple(apps), sources, **kw)

    @property
    def types(self) -> dict[str, TaskType]:
        out: dict[str, TaskType] = {}
        for app in self.apps:
            for t in app.chain:
                out.setdefault(t.label, t)
        return out

    @property
    def source_labels(self) -> set[str]:
        return {app.chain[0].label for app in self.apps}

    def streams(self) -> list[tuple[TypeGraph, str]]:
        """Streams in placement order: application first, then source."""
        return [(app, s) for app in self.apps for s in self.sources]


class PlacementState:
    """Residual capacities, instances, flows and accumulated cost.

    Every mutation is journaled so search code can roll back to a mark.
    """

    def __init__(self, req: PlacementRequest):
        self.req = req
        self.g = req.cluster
        self.types = req.types
        self.residual = {v.id: dict(v.capacities) for v in self.g.nodes}
        self.hosted: dict[str, list[TaskInstance]] = {v: [] for v in self.g.node_ids}
        self.inst_node: dict[TaskInstance, str] = {CONTROL: req.control_node}
        self.by_label: dict[str, list[TaskInstance]] = {t: [] for t in self.types}
        self.load: dict[TaskInstance, float] = {}
        self.flows: dict[FlowKey, float] = {}
        self.routes: dict[FlowKey, GraphPath] = {}
        self.edge_load: dict[EdgeKey, float] = {}
        self.node_cost = 0.0
        self.link_cost = 0.0
        self.hops = 0
        self._journal: list[Callable[[], None]] = []
        self._paths: dict[tuple[str, str], list[GraphPath]] = {}

    # -- queries --------------------------------------------------------
    def paths(self, a: str, b: str) -> list[GraphPath]:
        """Simple routes from ``a`` to ``b`` by hop count; the trivial route if equal."""
        key = (a, b)
        if key not in self._paths:
            self._paths[key] = [self.g.path([a])] if a == b else enumerate_paths(self.g, a, b, self.req.max_hops)
        return self._paths[key]

    def limit(self, label: str) -> int:
        return self.req.limits.get(label, math.inf)

    def count(self, label: str) -> int:
        return len(self.by_label[label])

    def _share_ok(self, node: str, n_instances: int, extra: Sequence[tuple[TaskInstance, float]]) -> bool:
        share = self.g.node(node).capacities["cpu"] / n_instances
        tol = 1e-6 * max(1.0, share)
        bump = dict(extra)
        for x in self.hosted[node]:
            need = self.types[x.label].cpu_per_kbps * (self.load[x] + bump.get(x, 0.0))
            if need - share > tol:
                return False
        return True

    def can_host(self, node: str, label: str, inbound: float) -> bool:
        """Whether a new ``label`` instance receiving ``inbound`` fits on ``node``."""
        v = self.g.node(node)
        if v.is_rsu and not self.req.allow_rsu_hosting:
            return False
        if any(x.label == label for x in self.hosted[node]):
            return False
        t = self.types[label]
        res = self.residual[node]
        for k in RESOURCE_KINDS:
            if t.demands[k] - res[k] > 1e-9:
                return False
        n = len(self.hosted[node]) + 1
        share = v.capacities["cpu"] / n
        if t.cpu_per_kbps * inbound - share > 1e-6 * max(1.0, share):
            return False
        return self._share_ok(node, n, ())

    def can_absorb(self, inst: TaskInstance, rate: float) -> bool:
        if inst == CONTROL:
            return True
        node = self.inst_node[inst]
        return self._share_ok(node, len(self.hosted[node]), [(inst, rate)])

    def route_fits(self, route: GraphPath, rate: float, key: FlowKey | None) -> bool:
        if self.req.bandwidth_mode == "literal":
            total = rate + (self.flows.get(key, 0.0) if key else 0.0)
            return total <= route.bottleneck_bandwidth * (1 + 1e-9)
        for e in route.edges:
            if self.edge_load.get(e, 0.0) + rate > self.g.edge(*e).bandwidth * (1 + 1e-9):
                return False
        return True

    def node_of(self, inst: TaskInstance) -> str:
        return self.inst_node[inst]

    @property
    def lambdas(self) -> tuple[float, float, float]:
        return self.req.weights.as_tuple()

    @property
    def objective(self) -> float:
        l1, l2, l3 = self.lambdas
        return l1 * self.hops + l2 * self.link_cost + l3 * self.node_cost

    def new_node_cost(self, node: str, label: str) -> float:
        v = self.g.node(node)
        return instance_node_cost(self.types[label].demands, v.ccp, v.capacities)

    # -- mutations ------------------------------------------------------
    def mark(self) -> int:
        return len(self._journal)

    def rollback(self, mark: int) -> None:
        while len(self._journal) > mark:
            self._journal.pop()()

    def create(self, label: str, node: str) -> TaskInstance:
        inst = TaskInstance(label, self.count(label))
        t = self.types[label]
        res = self.residual[node]
        for k in RESOURCE_KINDS:
            res[k] -= t.demands[k]
        self.hosted[node].append(inst)
        self.inst_node[inst] = node
        self.by_label[label].append(inst)
        self.load[inst] = 0.0
        delta = self.new_node_cost(node, label)
        self.node_cost += delta

        def undo():
            for k in RESOURCE_KINDS:
                res[k] += t.demands[k]
            self.hosted[node].pop()
            del self.inst_node[inst]
            self.by_label[label].pop()
            del self.load[inst]
            self.node_cost -= delta

        self._journal.append(undo)
        return inst

    def add_flow(self, key: FlowKey, rate: float, route: GraphPath | None = None) -> None:
        """Push ``rate`` more along flow ``key``; a new flow needs its route."""
        new = key not in self.routes
        if new:
            if route is None:
                raise ValueError(f"new flow {flow_label(key)} needs a route")
            self.routes[key] = route
            self.flows[key] = 0.0
            self.hops += route.hop_count
        route = self.routes[key]
        self.flows[key] += rate
        dst = key[1]
        if dst != CONTROL:
            self.load[dst] += rate
        for e in route.edges:
            self.edge_load[e] = self.edge_load.get(e, 0.0) + rate
        delta = flow_link_cost(rate, route)
        self.link_cost += delta

        def undo():
            self.flows[key] -= rate
            if dst != CONTROL:
                self.load[dst] -= rate
            for e in route.edges:
                self.edge_load[e] -= rate
            self.link_cost -= delta
            if new:
                del self.routes[key]
                del self.flows[key]
                self.hops -= route.hop_count

        self._journal.append(undo)

    def placement(self) -> Placement:
        mapping = {i: n for i, n in self.inst_node.items() if i != CONTROL}
        return Placement(mapping, dict(self.routes), self.req.control_node)

    def instance_graph(self, streams: Sequence[Stream]) -> InstanceGraph:
        insts = [i for label in self.by_label for i in self.by_label[label]]
        return InstanceGraph(self.types, insts, dict(self.flows), streams)


# -- outcome -----------------------------------------------------------------


@dataclass(frozen=True)
class PlacementReport:
    costs: CostBreakdown
    instance_counts: Mapping[str, int]
    processing_instances: int
    stream_hops: tuple[int, ...]
    runtime_s: float

    @property
    def aggregate_hops(self) -> int:
        """Largest hop total of any completed source-to-control-node chain."""
        return max(self.stream_hops, default=0)

    def to_dict(self) -> dict:
        return {
            **self.costs.to_dict(),
            "instance_counts": dict(self.instance_counts),
            "processing_instances": self.processing_instances,
            "stream_hops": list(self.stream_hops),
            "aggregate_hops": self.aggregate_hops,
            "runtime_s": self.runtime_s,
        }


@dataclass(frozen=True)
class PlacementOutcome:
    status: str
    placement: Placement
    instance_graph: InstanceGraph
    unplaced: tuple[dict, ...]
    report: PlacementReport
    decisions: tuple[dict, ...] = ()
    head_labels: frozenset[str] = frozenset()

    def to_dict(self, timing: bool = True) -> dict:
        rep = self.report.to_dict()
        if not timing:
            rep["runtime_s"] = None
        return {
            "status": self.status,
            "placement": self.placement.to_dict(),
            "instance_graph": self.instance_graph.to_dict(),
            "unplaced": list(self.unplaced),
            "report": rep,
        }


def scaled_instance_count(outcome: PlacementOutcome) -> dict[str, int]:
    """Placed processing instances (every type but the chain heads) per type."""
    heads = outcome.head_labels or {s.instances[0].label for s in outcome.instance_graph.streams}
    counts: dict[str, int] = {}
    for inst in outcome.placement.mapping:
        if inst.label not in heads:
            counts[inst.label] = counts.get(inst.label, 0) + 1
    return dict(sorted(counts.items()))


def stream_hop_totals(pl: Placement, streams: Sequence[Stream]) -> tuple[int, ...]:
    return tuple(sum(pl.routes[k].hop_count for k in s.flow_keys) for s in streams)


def finish(
    st: PlacementState,
    streams: list[Stream],
    unplaced: list[dict],
    t0: float,
    decisions: Sequence[dict] = (),
) -> PlacementOutcome:
    pl = st.placement()
    ig = st.instance_graph(streams)
    costs = total_objective(pl, ig, st.g, st.req.weights)
    n_streams = len(st.req.streams())
    if not unplaced:
        status = "success"
    elif len(streams) == 0:
        status = "failed"
    else:
        status = "partial"
    heads = st.req.source_labels
    counts = {label: st.count(label) for label in st.types}
    report = PlacementReport(
        costs,
        counts,
        sum(n for label, n in counts.items() if label not in heads),
        stream_hop_totals(pl, streams),
        time.perf_counter() - t0,
    )
    assert len(streams) + len(unplaced) == n_streams
    return PlacementOutcome(status, pl, ig, tuple(unplaced), report, tuple(decisions), frozenset(heads))


def _source_instance(st: PlacementState, label: str, source: str) -> TaskInstance | None:
    for x in st.hosted[source]:
        if x.label == label:
            return x
    if st.count(label) >= st.limit(label) or not st.can_host(source, label, 0.0):
        return None
    return st.create(label, source)


def _pin_heads(st: PlacementState) -> list[TaskInstance | None]:
    """Chain heads go onto their source nodes before any processing is placed."""
    return [_source_instance(st, app.labels[0], src) for app, src in st.req.streams()]


def _unplaced(app: TypeGraph, source: str, labels: Sequence[str]) -> dict:
    return {"app": app.name, "source": source, "types": list(labels), "handoff": "rsu"}


# -- heuristic ---------------------------------------------------------------


def place(req: PlacementRequest) -> PlacementOutcome:
    """Cohesion-aware greedy placement.

    For each stream position the data goes to an existing instance when one
    can take it over a route with spare bandwidth (shortest route first).
    Otherwise a new instance is created on the first node with room along the
    feasible route to the control node that has the highest combined CCP.
    """
    t0 = time.perf_counter()
    st = PlacementState(req)
    cn = req.control_node
    done: list[Stream] = []
    unplaced: list[dict] = []
    log: list[dict] = []

    def by_length(p: GraphPath):
        return (p.hop_count, -p.ccp, p.nodes)

    def by_ccp(p: GraphPath):
        return (-p.ccp, p.hop_count, p.nodes)

    reuse_order = by_ccp if req.ccp_order_everywhere else by_length

    def record(app, src, key, branch, considered, route, node):
        log.append(
            {
                "step": len(log),
                "app": app.name,
                "source": src,
                "flow": flow_label(key) if key else None,
                "branch": branch,
                "candidate_paths_considered": considered,
                "chosen_path": list(route.nodes) if route else None,
                "chosen_node": node,
            }
        )

    heads = _pin_heads(st)
    for (app, src), head in zip(req.streams(), heads):
        rates = app.stream_rates()
        labels = app.labels
        if head is None:
            unplaced.append(_unplaced(app, src, labels))
            record(app, src, None, "fail", 0, None, None)
            continue
        visited = [head]
        failed_at = None
        for q in range(1, len(labels)):
            cur, label, rate = visited[-1], labels[q], rates[q - 1]
            cur_node = st.node_of(cur)
            cands = []
            for x in st.by_label[label]:
                if not st.can_absorb(x, rate):
                    continue
                key = (cur, x)
                if key in st.routes:
                    options = [st.routes[key]]
                else:
                    options = st.paths(cur_node, st.node_of(x))
                for p in options:
                    if st.route_fits(p, rate, key):
                        cands.append((reuse_order(p), x, p))
            if cands:
                _, x, p = min(cands, key=lambda c: (c[0], c[1]))
                key = (cur, x)
                st.add_flow(key, rate, p)
                record(app, src, key, "reuse", len(cands), p, st.node_of(x))
                visited.append(x)
                continue
            chosen = None
            considered = 0
            if st.count(label) < st.limit(label):
                candidates = sorted(st.paths(cur_node, cn), key=by_ccp)
                if cur_node == cn and req.leave_control_node:
                    away = [p for v in st.g.node_ids if v != cn for p in st.paths(cn, v)]
                    candidates += sorted(away, key=by_ccp)
                for p in candidates:
                    considered += 1
                    if not st.route_fits(p, rate, None):
                        continue
                    for idx, n in enumerate(p.nodes):
                        if st.can_host(n, label, rate):
                            chosen = (n, st.g.path(p.nodes[: idx + 1]))
                            break
                    if chosen:
                        break
            if chosen is None:
                failed_at = q
                record(app, src, None, "fail", considered, None, None)
                break
            n, route = chosen
            x = st.create(label, n)
            key = (cur, x)
            st.add_flow(key, rate, route)
            record(app, src, key, "create", considered, route, n)
            visited.append(x)
        if failed_at is None:
            last = visited[-1]
            key = (last, CONTROL)
            rate = rates[-1]
            options = [st.routes[key]] if key in st.routes else sorted(st.paths(st.node_of(last), cn), key=by_ccp)
            route = next((p for p in options if st.route_fits(p, rate, key)), None)
            if route is None:
                failed_at = len(labels)
                record(app, src, None, "fail", len(options), None, None)
            else:
                st.add_flow(key, rate, route)
                record(app, src, key, "sink", len(options), route, cn)
        if failed_at is None:
            done.append(Stream(app.name, src, tuple(visited), rates))
        else:
            unplaced.append(_unplaced(app, src, labels[failed_at:]))
    return finish(st, done, unplaced, t0, log)


# -- first-fit baseline ------------------------------------------------------


def first_fit(req: PlacementRequest) -> PlacementOutcome:
    """Capacity-ranked baseline that ignores cohesion.

    Source-to-control-node paths are ranked by the residual CPU summed over
    their nodes; the chain is laid out one instance per node along the best
    path, spilling onto the next-ranked path when it runs out of nodes.
    """
    t0 = time.perf_counter()
    st = PlacementState(req)
    cn = req.control_node
    done: list[Stream] = []
    unplaced: list[dict] = []

    def shortest_fit(a, b, rate, key):
        if key in st.routes:
            p = st.routes[key]
            return p if st.route_fits(p, rate, key) else None
        return next((p for p in st.paths(a, b) if st.route_fits(p, rate, key)), None)

    def segment(path_nodes, a, b):
        if a in path_nodes and b in path_nodes:
            i, j = path_nodes.index(a), path_nodes.index(b)
            if i <= j:
                return st.g.path(path_nodes[i : j + 1])
        return None

    heads = _pin_heads(st)
    for (app, src), head in zip(req.streams(), heads):
        rates = app.stream_rates()
        labels = app.labels
        if head is None:
            unplaced.append(_unplaced(app, src, labels))
            continue
        ranked = sorted(
            st.paths(src, cn),
            key=lambda p: (-sum(st.residual[n]["cpu"] for n in p.nodes), p.hop_count, p.nodes),
        )
        visited = [head]
        used = {src}
        q = 1
        for p in ranked:
            if q == len(labels):
                break
            for n in p.nodes[1:]:
                if q == len(labels):
                    break
                if n in used:
                    continue
                cur, label, rate = visited[-1], labels[q], rates[q - 1]
                cur_node = st.node_of(cur)
                existing = next((x for x in st.hosted[n] if x.label == label), None)
                if existing is None and (st.count(label) >= st.limit(label) or not st.can_host(n, label, rate)):
                    continue
                if existing is not None and not st.can_absorb(existing, rate):
                    continue
                key = (cur, existing) if existing is not None else None
                route = None
                if key is None or key not in st.routes:
                    seg = segment(p.nodes, cur_node, n)
                    if seg is not None and st.route_fits(seg, rate, key):
                        route = seg
                if route is None:
                    route = shortest_fit(cur_node, n, rate, key)
                if route is None:
                    continue
                x = existing if existing is not None else st.create(label, n)
                st.add_flow((cur, x), rate, route)
                visited.append(x)
                used.add(n)
                q += 1
        ok = q == len(labels)
        if ok:
            last = visited[-1]
            key = (last, CONTROL)
            last_node = st.node_of(last)
            route = None
            if key not in st.routes:
                for p in ranked:
                    seg = segment(p.nodes, last_node, cn)
                    if seg is not None and st.route_fits(seg, rates[-1], key):
                        route = seg
                        break
            if route is None:
                route = shortest_fit(last_node, cn, rates[-1], key)
            if route is None:
                ok = False
                q = len(labels)
            else:
                st.add_flow(key, rates[-1], route)
        if ok:
            done.append(Stream(app.name, src, tuple(visited), rates))
        else:
            unplaced.append(_unplaced(app, src, labels[q:]))
    return finish(st, done, unplaced, t0)
