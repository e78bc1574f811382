"""Community detection on the CCP-weighted cluster graph.

Edge weights for modularity are the links' joint CCPs. Louvain optimises
weighted modularity directly; Girvan-Newman peels off hop-count
edge-betweenness maxima until a target number of components exists.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import NoControlNode, TargetExceedsNodes, UndefinedScore
from .graph import ClusterEdge, ClusterGraph, EdgeKey, betweenness_centrality, edge_betweenness

MIN_EDGE_LENGTH = 1e-9


@dataclass(frozen=True)
class Community:
    members: tuple[str, ...]
    modularity_contribution: float

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True)
class SelectedCluster:
    subgraph: ClusterGraph
    control_node: str
    method: str
    modularity: float
    communities: tuple[Community, ...] = ()

    @property
    def members(self) -> tuple[str, ...]:
        return self.subgraph.node_ids

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "modularity": self.modularity,
            "communities": [list(c.members) for c in self.communities],
            "selected": list(self.members),
            "control_node": self.control_node,
        }


def _community_terms(g: ClusterGraph, partition: Sequence[Iterable[str]]) -> list[float]:
    label = {}
    for idx, comm in enumerate(partition):
        for v in comm:
            if v in label:
                raise ValueError(f"node {v} appears in two communities")
            label[v] = idx
    if set(label) != set(g.node_ids):
        raise ValueError("partition does not cover the graph")
    m = sum(e.joint_ccp for e in g.edges)
    k = len(partition)
    if m == 0:
        return [0.0] * k
    internal = [0.0] * k
    degree = [0.0] * k
    for e in g.edges:
        ca, cb = label[e.a], label[e.b]
        degree[ca] += e.joint_ccp
        degree[cb] += e.joint_ccp
        if ca == cb:
            internal[ca] += e.joint_ccp
    return [internal[c] / m - (degree[c] / (2 * m)) ** 2 for c in range(k)]


def modularity(g: ClusterGraph, partition: Sequence[Iterable[str]]) -> float:
    """Weighted modularity of a partition, with joint CCP as edge weight."""
    partition = [tuple(c) for c in partition]
    return float(sum(_community_terms(g, partition)))


def _as_communities(g: ClusterGraph, groups: Iterable[Iterable[str]]) -> list[Community]:
    groups = sorted((tuple(sorted(c)) for c in groups), key=lambda c: (-len(c), c))
    terms = _community_terms(g, groups)
    return [Community(c, t) for c, t in zip(groups, terms)]


# -- Louvain -----------------------------------------------------------------


class _Level:
    """Weighted graph over integer nodes for one Louvain level."""

    def __init__(self, n: int, adj: list[dict[int, float]], loops: list[float]):
        self.n = n
        self.adj = adj
        self.loops = loops
        self.degree = [sum(adj[i].values()) + 2 * loops[i] for i in range(n)]
        self.m = sum(self.degree) / 2


def _level_modularity(level: _Level, com: list[int]) -> float:
    if level.m == 0:
        return 0.0
    internal = defaultdict(float)
    tot = defaultdict(float)
    for i in range(level.n):
        c = com[i]
        tot[c] += level.degree[i]
        internal[c] += level.loops[i]
        for j, w in level.adj[i].items():
            if com[j] == c and j > i:
                internal[c] += w
    return sum(internal[c] / level.m - (tot[c] / (2 * level.m)) ** 2 for c in tot)


def _one_level(level: _Level, rng: np.random.Generator, min_gain: float) -> list[int]:
    com = list(range(level.n))
    if level.m == 0:
        return com
    tot = list(level.degree)
    two_m = 2 * level.m
    current = _level_modularity(level, com)
    while True:
        moved = False
        for i in rng.permutation(level.n):
            i = int(i)
            ki = level.degree[i]
            links = defaultdict(float)
            for j, w in level.adj[i].items():
                links[com[j]] += w
            own = com[i]
            tot[own] -= ki
            best, best_gain = own, links.get(own, 0.0) - tot[own] * ki / two_m
            for c in sorted(links):
                gain = links[c] - tot[c] * ki / two_m
                if gain > best_gain:
                    best, best_gain = c, gain
            tot[best] += ki
            if best != own:
                com[i] = best
                moved = True
        new = _level_modularity(level, com)
        if not moved or new - current < min_gain:
            break
        current = new
    # renumber densely in order of first appearance
    remap: dict[int, int] = {}
    return [remap.setdefault(c, len(remap)) for c in com]


def _aggregate(level: _Level, com: list[int]) -> _Level:
    k = max(com) + 1
    adj: list[dict[int, float]] = [defaultdict(float) for _ in range(k)]
    loops = [0.0] * k
    for i in range(level.n):
        loops[com[i]] += level.loops[i]
        for j, w in level.adj[i].items():
            if j <= i:
                continue
            ci, cj = com[i], com[j]
            if ci == cj:
                loops[ci] += w
            else:
                adj[ci][cj] += w
                adj[cj][ci] += w
    return _Level(k, [dict(a) for a in adj], loops)


def louvain_levels(g: ClusterGraph, min_gain: float = 1e-6, seed: int = 0) -> list[tuple[list[Community], float]]:
    """Partition and modularity after each aggregation level, finest first."""
    ids = list(g.node_ids)
    index = {v: i for i, v in enumerate(ids)}
    adj: list[dict[int, float]] = [dict() for _ in ids]
    for e in g.edges:
        adj[index[e.a]][index[e.b]] = e.joint_ccp
        adj[index[e.b]][index[e.a]] = e.joint_ccp
    level = _Level(len(ids), adj, [0.0] * len(ids))
    rng = np.random.default_rng(seed)
    membership = list(range(len(ids)))
    levels = []
    best = None
    while True:
        com = _one_level(level, rng, min_gain)
        membership = [com[c] for c in membership]
        groups: dict[int, list[str]] = defaultdict(list)
        for v, c in zip(ids, membership):
            groups[c].append(v)
        comms = _as_communities(g, groups.values())
        q = sum(c.modularity_contribution for c in comms)
        if best is not None and q - best < min_gain:
            break
        levels.append((comms, q))
        best = q
        if max(com) + 1 == level.n:
            break
        level = _aggregate(level, com)
    return levels


def louvain(g: ClusterGraph, min_gain: float = 1e-6, seed: int = 0) -> tuple[list[Community], float]:
    """Weighted Louvain; returns the coarsest partition and its modularity."""
    if len(g) == 0:
        return [], 0.0
    comms, q = louvain_levels(g, min_gain, seed)[-1]
    return comms, q


# -- Girvan-Newman -----------------------------------------------------------


def girvan_newman_removals(g: ClusterGraph) -> Iterator[tuple[EdgeKey, list[tuple[str, ...]]]]:
    """Yield each removed edge with the components left after removing it.

    The edge removed is the one with maximal hop-count edge betweenness in the
    current graph (ties go to the lexicographically smallest edge).
    """
    current = g
    while current.edges:
        eb = edge_betweenness(current)
        top = max(eb.values())
        victim = min(k for k, v in eb.items() if abs(v - top) <= 1e-9 * max(1.0, top))
        current = current.without_edges([victim])
        yield victim, current.components()


def girvan_newman(g: ClusterGraph, target_communities: int = 2) -> tuple[list[Community], float]:
    if target_communities < 1:
        raise ValueError("target_communities must be >= 1")
    if target_communities > len(g):
        raise TargetExceedsNodes(f"cannot split {len(g)} nodes into {target_communities} communities")
    comps = g.components()
    if len(comps) < target_communities:
        for _, comps in girvan_newman_removals(g):
            if len(comps) >= target_communities:
                break
    comms = _as_communities(g, comps)
    return comms, sum(c.modularity_contribution for c in comms)


def girvan_newman_dendrogram(g: ClusterGraph) -> list[tuple[list[Community], float]]:
    """Every distinct split down to isolated nodes, coarsest first."""
    comps = g.components()
    out = []
    last = len(comps)
    comms = _as_communities(g, comps)
    out.append((comms, sum(c.modularity_contribution for c in comms)))
    for _, comps in girvan_newman_removals(g):
        if len(comps) > last:
            last = len(comps)
            comms = _as_communities(g, comps)
            out.append((comms, sum(c.modularity_contribution for c in comms)))
    return out


# -- selection and resilience -----------------------------------------------


def _internal_ccp(g: ClusterGraph, members: Iterable[str]) -> float:
    s = set(members)
    return sum(e.joint_ccp for e in g.edges if e.a in s and e.b in s)


def elect_control_node(g: ClusterGraph) -> str:
    """Vehicle with the highest hop-count betweenness (ties to the lowest id)."""
    bcs = betweenness_centrality(g)
    vehicles = [v for v in g.node_ids if not g.node(v).is_rsu]
    if not vehicles:
        raise NoControlNode("cluster has no vehicle node")
    return min(vehicles, key=lambda v: (-bcs[v], v))


def select_cluster(
    g: ClusterGraph,
    method: str = "louvain",
    min_gain: float = 1e-6,
    seed: int = 0,
    target_communities: int = 2,
) -> SelectedCluster:
    """Pick the largest detected community and elect its control node."""
    if len(g) == 0:
        raise ValueError("empty graph")
    if method == "louvain":
        comms, q = louvain(g, min_gain, seed)
    elif method in ("girvan_newman", "gn"):
        method = "girvan_newman"
        comms, q = girvan_newman(g, min(target_communities, len(g)))
    else:
        raise ValueError(f"unknown detection method {method!r}")
    chosen = min(comms, key=lambda c: (-len(c), -_internal_ccp(g, c.members), c.members))
    sub = g.subgraph(chosen.members)
    return SelectedCluster(sub, elect_control_node(sub), method, q, tuple(comms))


def ccp_edge_length(e: ClusterEdge) -> float:
    return max(1.0 - e.joint_ccp, MIN_EDGE_LENGTH)


def weighted_betweenness(g: ClusterGraph) -> dict[str, float]:
    """Betweenness over shortest weighted paths, edge length 1 - joint CCP."""
    return betweenness_centrality(g, ccp_edge_length)


def resilience_score(selected: SelectedCluster, survivors: Iterable[str]) -> float:
    """Share of the cluster's total weighted betweenness held by survivors."""
    survivors = set(survivors)
    members = set(selected.members)
    if not survivors <= members:
        raise ValueError(f"survivors not in cluster: {sorted(survivors - members)}")
    bcs = weighted_betweenness(selected.subgraph)
    total = sum(bcs.values())
    if total == 0:
        if survivors == members:
            return 1.0
        raise UndefinedScore("cluster has zero total betweenness")
    return sum(bcs[v] for v in survivors) / total
