"""Vehicle-cluster graph, simple-path enumeration and betweenness measures.

The cluster graph is undirected: links between vehicles carry a symmetric
bandwidth (Kb/s) and a joint cohesion probability. Nodes carry per-resource
capacities and their own cohesion probability (CCP).
"""

from __future__ import annotations

import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .errors import InvalidPath, UnknownNode

RESOURCE_KINDS = ("cpu", "mem", "camera", "gpu")
DEFAULT_MAX_HOPS = 6

EdgeKey = tuple[str, str]


def edge_key(a: str, b: str) -> EdgeKey:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class VehicleNode:
    id: str
    capacities: Mapping[str, float] = field(default_factory=dict)
    ccp: float = 1.0
    confidence: float = 1.0
    is_rsu: bool = False

    def __post_init__(self):
        caps = {k: float(self.capacities.get(k, 0.0)) for k in RESOURCE_KINDS}
        extra = set(self.capacities) - set(RESOURCE_KINDS)
        if extra:
            raise ValueError(f"unknown resource kinds {sorted(extra)}")
        if any(v < 0 for v in caps.values()):
            raise ValueError(f"node {self.id}: negative capacity")
        if not 0.0 <= self.ccp <= 1.0:
            raise ValueError(f"node {self.id}: ccp {self.ccp} outside [0, 1]")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"node {self.id}: confidence outside [0, 1]")
        if self.is_rsu and self.ccp != 1.0:
            raise ValueError(f"RSU node {self.id} must have ccp 1")
        object.__setattr__(self, "capacities", caps)


@dataclass(frozen=True)
class ClusterEdge:
    a: str
    b: str
    bandwidth: float
    joint_ccp: float

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError(f"self-loop on {self.a}")
        if self.bandwidth < 0:
            raise ValueError("negative bandwidth")
        if not 0.0 <= self.joint_ccp <= 1.0:
            raise ValueError(f"joint_ccp {self.joint_ccp} outside [0, 1]")
        a, b = edge_key(self.a, self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def key(self) -> EdgeKey:
        return (self.a, self.b)


@dataclass(frozen=True)
class GraphPath:
    """A simple path with its derived link statistics.

    Build these through :meth:`ClusterGraph.path`, which validates adjacency.
    A single-node path is the degenerate route between co-located endpoints.
    """

    nodes: tuple[str, ...]
    bottleneck_bandwidth: float
    bandwidth_sum: float
    ccp: float

    @property
    def hop_count(self) -> int:
        return len(self.nodes) - 1

    @property
    def src(self) -> str:
        return self.nodes[0]

    @property
    def dst(self) -> str:
        return self.nodes[-1]

    @property
    def edges(self) -> list[EdgeKey]:
        return [edge_key(u, v) for u, v in zip(self.nodes, self.nodes[1:])]


class ClusterGraph:
    """Immutable undirected graph of vehicle nodes."""

    def __init__(self, nodes: Iterable[VehicleNode], edges: Iterable[ClusterEdge] = ()):
        self._nodes: dict[str, VehicleNode] = {}
        for n in nodes:
            if n.id in self._nodes:
                raise ValueError(f"duplicate node id {n.id}")
            self._nodes[n.id] = n
        self._edges: dict[EdgeKey, ClusterEdge] = {}
        adj: dict[str, set[str]] = {nid: set() for nid in self._nodes}
        for e in edges:
            for end in (e.a, e.b):
                if end not in self._nodes:
                    raise UnknownNode(end)
            if e.key in self._edges:
                raise ValueError(f"duplicate edge {e.key}")
            self._edges[e.key] = e
            adj[e.a].add(e.b)
            adj[e.b].add(e.a)
        self._adj = {nid: tuple(sorted(nb)) for nid, nb in adj.items()}
        self._ids = tuple(sorted(self._nodes))

    def __len__(self):
        return len(self._nodes)

    def __contains__(self, node_id):
        return node_id in self._nodes

    def __repr__(self):
        return f"ClusterGraph(nodes={len(self._nodes)}, edges={len(self._edges)})"

    @property
    def node_ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def nodes(self) -> list[VehicleNode]:
        return [self._nodes[i] for i in self._ids]

    @property
    def edges(self) -> list[ClusterEdge]:
        return [self._edges[k] for k in sorted(self._edges)]

    def node(self, node_id: str) -> VehicleNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def edge(self, a: str, b: str) -> ClusterEdge:
        try:
            return self._edges[edge_key(a, b)]
        except KeyError:
            raise InvalidPath(f"no edge between {a} and {b}") from None

    def has_edge(self, a: str, b: str) -> bool:
        return edge_key(a, b) in self._edges

    def neighbors(self, node_id: str) -> tuple[str, ...]:
        try:
            return self._adj[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def path(self, nodes: Sequence[str]) -> GraphPath:
        nodes = tuple(nodes)
        if not nodes:
            raise InvalidPath("empty path")
        for n in nodes:
            if n not in self._nodes:
                raise UnknownNode(n)
        if len(set(nodes)) != len(nodes):
            raise InvalidPath(f"path repeats a node: {nodes}")
        bottleneck, total, ccp = math.inf, 0.0, 1.0
        for u, v in zip(nodes, nodes[1:]):
            e = self.edge(u, v)
            bottleneck = min(bottleneck, e.bandwidth)
            total += e.bandwidth
            ccp *= e.joint_ccp
        return GraphPath(nodes, bottleneck, total, ccp)

    def subgraph(self, node_ids: Iterable[str]) -> "ClusterGraph":
        keep = set(node_ids)
        for n in keep:
            if n not in self._nodes:
                raise UnknownNode(n)
        return ClusterGraph(
            [self._nodes[i] for i in self._ids if i in keep],
            [e for e in self.edges if e.a in keep and e.b in keep],
        )

    def without_edges(self, keys: Iterable[EdgeKey]) -> "ClusterGraph":
        drop = {edge_key(*k) for k in keys}
        return ClusterGraph(self.nodes, [e for e in self.edges if e.key not in drop])

    def replace_nodes(self, nodes: Iterable[VehicleNode]) -> "ClusterGraph":
        repl = {n.id: n for n in nodes}
        return ClusterGraph([repl.get(i, self._nodes[i]) for i in self._ids], self.edges)

    def components(self) -> list[tuple[str, ...]]:
        seen: set[str] = set()
        out = []
        for start in self._ids:
            if start in seen:
                continue
            comp, queue = [], deque([start])
            seen.add(start)
            while queue:
                u = queue.popleft()
                comp.append(u)
                for v in self._adj[u]:
                    if v not in seen:
                        seen.add(v)
                        queue.append(v)
            out.append(tuple(sorted(comp)))
        return out

    def hop_distances(self, source: str) -> dict[str, int]:
        dist = {source: 0}
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in self._adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": n.id,
                    "capacities": dict(n.capacities),
                    "ccp": n.ccp,
                    "is_rsu": n.is_rsu,
                    "confidence": n.confidence,
                }
                for n in self.nodes
            ],
            "edges": [
                {"a": e.a, "b": e.b, "bandwidth_kbps": e.bandwidth, "joint_ccp": e.joint_ccp}
                for e in self.edges
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ClusterGraph":
        nodes = [
            VehicleNode(
                id=str(n["id"]),
                capacities=n.get("capacities", {}),
                ccp=float(n.get("ccp", 1.0)),
                confidence=float(n.get("confidence", 1.0)),
                is_rsu=bool(n.get("is_rsu", False)),
            )
            for n in data["nodes"]
        ]
        edges = [
            ClusterEdge(str(e["a"]), str(e["b"]), float(e["bandwidth_kbps"]), float(e["joint_ccp"]))
            for e in data["edges"]
        ]
        return cls(nodes, edges)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "ClusterGraph":
        return cls.from_dict(json.loads(text))


def enumerate_paths(
    g: ClusterGraph,
    src: str,
    dst: str,
    max_hops: int = DEFAULT_MAX_HOPS,
    key: Callable[[GraphPath], object] | None = None,
) -> list[GraphPath]:
    """All simple paths from `src` to `dst` with at most `max_hops` edges.

    Results are sorted by ``key`` (hop count when omitted) and then by the
    node-id sequence, so the order is fully deterministic.
    """
    if src not in g:
        raise UnknownNode(src)
    if dst not in g:
        raise UnknownNode(dst)
    if src == dst:
        raise ValueError("src and dst must differ")
    if max_hops < 1:
        raise ValueError("max_hops must be >= 1")

    found: list[tuple[str, ...]] = []
    stack = [src]
    on_path = {src}
    iters = [iter(g.neighbors(src))]
    while iters:
        nxt = next(iters[-1], None)
        if nxt is None:
            iters.pop()
            on_path.discard(stack.pop())
            continue
        if nxt in on_path:
            continue
        if nxt == dst:
            found.append(tuple(stack) + (dst,))
            continue
        if len(stack) < max_hops:
            stack.append(nxt)
            on_path.add(nxt)
            iters.append(iter(g.neighbors(nxt)))

    paths = [g.path(p) for p in found]
    primary = key or (lambda p: p.hop_count)
    paths.sort(key=lambda p: (primary(p), p.nodes))
    return paths


def path_ccp(g: ClusterGraph, p: GraphPath | Sequence[str]) -> float:
    """Combined cohesion of a route: the product of its edges' joint CCPs."""
    nodes = p.nodes if isinstance(p, GraphPath) else tuple(p)
    return g.path(nodes).ccp


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-12 * max(1.0, abs(a), abs(b))


def _sssp(g: ClusterGraph, s: str, length: Callable[[ClusterEdge], float] | None):
    """Single-source shortest paths for Brandes accumulation.

    Returns the settle order, predecessor lists and shortest-path counts.
    """
    order: list[str] = []
    preds: dict[str, list[str]] = {v: [] for v in g.node_ids}
    sigma = dict.fromkeys(g.node_ids, 0.0)
    sigma[s] = 1.0
    if length is None:
        dist = {s: 0}
        queue = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in g.neighbors(v):
                if w not in dist:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        return order, preds, sigma

    dist: dict[str, float] = {}
    seen = {s: 0.0}
    heap = [(0.0, s, s)]
    while heap:
        d, pred, v = heapq.heappop(heap)
        if v in dist:
            continue
        if pred != v:
            sigma[v] += sigma[pred]
        order.append(v)
        dist[v] = d
        for w in g.neighbors(v):
            vw = d + length(g.edge(v, w))
            if w in dist:
                continue
            if w not in seen or (vw < seen[w] and not _close(vw, seen[w])):
                seen[w] = vw
                heapq.heappush(heap, (vw, v, w))
                sigma[w] = 0.0
                preds[w] = [v]
            elif _close(vw, seen[w]):
                sigma[w] += sigma[v]
                preds[w].append(v)
    return order, preds, sigma


def betweenness_centrality(
    g: ClusterGraph, length: Callable[[ClusterEdge], float] | None = None
) -> dict[str, float]:
    """Raw betweenness score of every node (unordered pair counting).

    With ``length=None`` shortest paths are hop counts; otherwise ``length``
    maps each edge to a positive length and Dijkstra is used.
    """
    bc = dict.fromkeys(g.node_ids, 0.0)
    for s in g.node_ids:
        order, preds, sigma = _sssp(g, s, length)
        delta = dict.fromkeys(order, 0.0)
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                bc[w] += delta[w]
    return {v: b / 2.0 for v, b in bc.items()}


def edge_betweenness(g: ClusterGraph) -> dict[EdgeKey, float]:
    """Raw hop-count edge betweenness (unordered pair counting)."""
    eb = {e.key: 0.0 for e in g.edges}
    for s in g.node_ids:
        order, preds, sigma = _sssp(g, s, None)
        delta = dict.fromkeys(order, 0.0)
        for w in reversed(order):
            for v in preds[w]:
                c = sigma[v] / sigma[w] * (1.0 + delta[w])
                eb[edge_key(v, w)] += c
                delta[v] += c
    return {k: b / 2.0 for k, b in eb.items()}
