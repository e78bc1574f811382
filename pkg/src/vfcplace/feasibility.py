"""Constraint checkers and cost functions for a placement.

Checks return lists of :class:`Violation`; an empty list means the
constraint holds. Costs follow the weighted objective
``lambda1 * hops + lambda2 * link + lambda3 * node``.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping

from .graph import RESOURCE_KINDS, ClusterGraph, EdgeKey, GraphPath
from .service import CONTROL, FlowKey, InstanceGraph, TaskInstance

REL_TOL = 1e-6


def _exceeds(load: float, cap: float) -> bool:
    return load - cap > REL_TOL * max(1.0, abs(cap))


@dataclass
class Placement:
    """Instance-to-node mapping plus one route per instance-level flow."""

    mapping: dict[TaskInstance, str] = field(default_factory=dict)
    routes: dict[FlowKey, GraphPath] = field(default_factory=dict)
    control_node: str | None = None

    def node_of(self, inst: TaskInstance) -> str:
        if inst == CONTROL:
            if self.control_node is None:
                raise KeyError("placement has no control node")
            return self.control_node
        return self.mapping[inst]

    def instances_on(self, node: str) -> list[TaskInstance]:
        return sorted(i for i, n in self.mapping.items() if n == node)

    def to_dict(self) -> dict:
        return {
            "control_node": self.control_node,
            "mapping": {str(i): n for i, n in sorted(self.mapping.items())},
            "routes": [
                {"src": str(a), "dst": str(b), "path": list(p.nodes)} for (a, b), p in sorted(self.routes.items())
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping, g: ClusterGraph) -> "Placement":
        return cls(
            {TaskInstance.parse(k): v for k, v in d["mapping"].items()},
            {(TaskInstance.parse(r["src"]), TaskInstance.parse(r["dst"])): g.path(r["path"]) for r in d["routes"]},
            d.get("control_node"),
        )


@dataclass(frozen=True)
class ObjectiveWeights:
    lambda1: float = 1 / 3
    lambda2: float = 1 / 3
    lambda3: float = 1 / 3

    def __post_init__(self):
        lams = (self.lambda1, self.lambda2, self.lambda3)
        if any(x < 0 for x in lams):
            raise ValueError("objective weights must be non-negative")
        if abs(sum(lams) - 1.0) > 1e-9:
            raise ValueError(f"objective weights must total 1, got {sum(lams)}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)


@dataclass(frozen=True)
class CostBreakdown:
    node_cost: float
    link_cost: float
    hop_count: float
    total_objective: float

    def to_dict(self) -> dict:
        return {
            "node_cost": self.node_cost,
            "link_cost": self.link_cost,
            "hop_count": self.hop_count,
            "total_objective": self.total_objective,
        }


@dataclass(frozen=True, order=True)
class Violation:
    """One failed constraint.

    ``subject`` names the instance, node, flow or edge at fault and ``kind``
    the resource (or edge) involved; ``excess`` is by how much it failed.
    """

    check: str
    subject: str
    kind: str
    excess: float = field(compare=False, default=0.0)

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.check, self.subject, self.kind)

    def to_dict(self) -> dict:
        return {"check": self.check, "subject": self.subject, "kind": self.kind, "excess": self.excess}


def flow_label(key: FlowKey) -> str:
    return f"{key[0]}->{key[1]}"


def edge_label(e: EdgeKey) -> str:
    return f"{e[0]}-{e[1]}"


# -- constraints -----------------------------------------------------------


def instance_share(pl: Placement, g: ClusterGraph, inst: TaskInstance) -> float:
    """CPU share of an instance: its node's CPU split among co-located instances."""
    node = pl.mapping[inst]
    return g.node(node).capacities["cpu"] / len(pl.instances_on(node))


def check_flow_capacity(pl: Placement, ig: InstanceGraph, g: ClusterGraph) -> list[Violation]:
    out = []
    for inst in ig.instances:
        need = ig.processing_load(inst)
        if need <= 0:
            continue
        share = instance_share(pl, g, inst)
        if _exceeds(need, share):
            out.append(Violation("flow_capacity", str(inst), "cpu", need - share))
    return sorted(out)


def check_in_network_processing(pl: Placement, ig: InstanceGraph, mode: str = "equality") -> list[Violation]:
    """Outbound rate of every processing instance against alpha times inbound.

    ``mode="equality"`` requires ``out == alpha * in``; ``mode="printed"``
    checks the looser ``alpha * in <= out``.
    """
    if mode not in ("equality", "printed"):
        raise ValueError(f"unknown mode {mode!r}")
    out = []
    for inst in ig.instances:
        f_in, f_out = ig.inbound(inst), ig.outbound(inst)
        if f_in <= 0:
            continue
        expected = ig.types[inst.label].alpha * f_in
        tol = REL_TOL * max(1.0, f_in)
        bad = abs(f_out - expected) > tol if mode == "equality" else expected - f_out > tol
        if bad:
            out.append(Violation("in_network_processing", str(inst), "flow", f_out - expected))
    return sorted(out)


def check_scaling(ig: InstanceGraph, limits: Mapping[str, int] | None = None) -> list[Violation]:
    """Instance counts against ``n_min`` and the upper limit per type.

    The upper limit comes from ``limits`` when given, else the type's
    ``n_max``; with neither, only the lower bound applies.
    """
    out = []
    limits = limits or {}
    for label, n in ig.counts.items():
        t = ig.types[label]
        hi = limits.get(label, t.n_max)
        if n < t.n_min:
            out.append(Violation("scaling", label, "min", t.n_min - n))
        if hi is not None and n > hi:
            out.append(Violation("scaling", label, "max", n - hi))
    return sorted(out)


def check_node_resources(pl: Placement, ig: InstanceGraph, g: ClusterGraph) -> list[Violation]:
    used: dict[str, dict[str, float]] = defaultdict(lambda: dict.fromkeys(RESOURCE_KINDS, 0.0))
    for inst, node in pl.mapping.items():
        for k, d in ig.types[inst.label].demands.items():
            used[node][k] += d
    out = []
    for node, row in used.items():
        caps = g.node(node).capacities
        for k in RESOURCE_KINDS:
            if _exceeds(row[k], caps[k]):
                out.append(Violation("node_resources", node, k, row[k] - caps[k]))
    return sorted(out)


def check_bandwidth(pl: Placement, ig: InstanceGraph, g: ClusterGraph, mode: str = "aggregate") -> list[Violation]:
    """Routed flow rates against link bandwidth.

    ``aggregate`` sums every flow crossing an edge against that edge;
    ``literal`` compares each flow on its own against each edge of its route.
    """
    if mode not in ("aggregate", "literal"):
        raise ValueError(f"unknown mode {mode!r}")
    out = []
    if mode == "literal":
        for key, rate in ig.flows.items():
            route = pl.routes.get(key)
            if route is None:
                continue
            for e in route.edges:
                bw = g.edge(*e).bandwidth
                if _exceeds(rate, bw):
                    out.append(Violation("bandwidth", flow_label(key), edge_label(e), rate - bw))
        return sorted(out)
    load: dict[EdgeKey, float] = defaultdict(float)
    for key, rate in ig.flows.items():
        route = pl.routes.get(key)
        if route is None:
            continue
        for e in route.edges:
            load[e] += rate
    for e, total in sorted(load.items()):
        bw = g.edge(*e).bandwidth
        if _exceeds(total, bw):
            out.append(Violation("bandwidth", edge_label(e), "edge", total - bw))
    return out


def check_routing(pl: Placement, ig: InstanceGraph, g: ClusterGraph) -> list[Violation]:
    """Structural sanity: every instance mapped and every flow routed end to end."""
    out = []
    for inst in ig.instances:
        if inst not in pl.mapping:
            out.append(Violation("routing", str(inst), "unmapped"))
        elif pl.mapping[inst] not in g:
            out.append(Violation("routing", str(inst), "unknown_node"))
    for key in ig.flows:
        route = pl.routes.get(key)
        if route is None:
            out.append(Violation("routing", flow_label(key), "unrouted"))
            continue
        try:
            ends = (pl.node_of(key[0]), pl.node_of(key[1]))
        except KeyError:
            continue
        if (route.src, route.dst) != ends:
            out.append(Violation("routing", flow_label(key), "endpoints"))
    return sorted(out)


def all_violations(
    pl: Placement,
    ig: InstanceGraph,
    g: ClusterGraph,
    limits: Mapping[str, int] | None = None,
    bandwidth_mode: str = "aggregate",
    processing_mode: str = "equality",
) -> list[Violation]:
    structural = check_routing(pl, ig, g)
    if structural:
        return structural
    return (
        check_flow_capacity(pl, ig, g)
        + check_in_network_processing(pl, ig, processing_mode)
        + check_scaling(ig, limits)
        + check_node_resources(pl, ig, g)
        + check_bandwidth(pl, ig, g, bandwidth_mode)
    )


# -- costs -----------------------------------------------------------------


def instance_node_cost(demands: Mapping[str, float], node_ccp: float, caps: Mapping[str, float]) -> float:
    """Node-cost term of one instance on one node."""
    total = 0.0
    for k in RESOURCE_KINDS:
        d = demands.get(k, 0.0)
        if d == 0:
            continue
        c = caps.get(k, 0.0)
        if c == 0:
            return math.inf
        total += d / c
    return (1.0 - node_ccp) * total


def flow_link_cost(rate: float, route: GraphPath) -> float:
    if route.hop_count == 0:
        return 0.0
    return (1.0 - route.ccp) * rate / route.bandwidth_sum if route.bandwidth_sum > 0 else math.inf


def node_cost(pl: Placement, ig: InstanceGraph, g: ClusterGraph) -> float:
    total = 0.0
    for inst, node in pl.mapping.items():
        n = g.node(node)
        total += instance_node_cost(ig.types[inst.label].demands, n.ccp, n.capacities)
    return total


def link_cost(pl: Placement, ig: InstanceGraph, g: ClusterGraph) -> float:
    return sum(flow_link_cost(rate, pl.routes[key]) for key, rate in ig.flows.items() if key in pl.routes)


def hop_cost(pl: Placement) -> int:
    return sum(p.hop_count for p in pl.routes.values())


def weighted_total(hops: float, link: float, node: float, lambdas: tuple[float, float, float]) -> float:
    l1, l2, l3 = lambdas
    return l1 * hops + l2 * link + l3 * node


def total_objective(
    pl: Placement, ig: InstanceGraph, g: ClusterGraph, w: ObjectiveWeights | None = None
) -> CostBreakdown:
    w = w or ObjectiveWeights()
    n, l, h = node_cost(pl, ig, g), link_cost(pl, ig, g), hop_cost(pl)
    return CostBreakdown(n, l, h, weighted_total(h, l, n, w.as_tuple()))
