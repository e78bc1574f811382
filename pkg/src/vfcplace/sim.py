"""Step simulation of cluster break-up and service time.

Each step every vehicle draws its next road segment from its transition
matrix; a vehicle whose draw leaves the cluster's segment departs for good,
taking its links with it. Routes are never repaired, so a chain fails once
any node or link it uses is gone.
"""

from __future__ import annotations

import csv
import io
import json
import math
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .community import SelectedCluster, resilience_score
from .errors import UndefinedScore
from .feasibility import Placement
from .graph import ClusterGraph, GraphPath
from .mobility import TransitionMatrix
from .service import InstanceGraph, Stream, TypeGraph

TRACE_COLUMNS = ("t", "survivors", "live_edges", "failed_chains")


@dataclass(frozen=True)
class SimConfig:
    horizon: float = 600.0
    step: float = 60.0
    seed: int = 0
    hop_delay_s: float = 0.002
    rsu_speedup: float = 4.0
    cluster_segment: str = "RS1"
    edge_mode: bool = False

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if self.horizon < self.step:
            raise ValueError("horizon must be at least one step")
        if self.hop_delay_s < 0 or self.rsu_speedup <= 0:
            raise ValueError("latency parameters must be non-negative")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.horizon / self.step + 1e-9))


@dataclass(frozen=True)
class SimStep:
    t: float
    survivors: tuple[str, ...]
    live_edges: int
    service_times: Mapping[str, float | None]

    @property
    def failed(self) -> tuple[str, ...]:
        return tuple(c for c, s in self.service_times.items() if s is None)


@dataclass
class SimTrace:
    steps: list[SimStep]
    chain_lengths: dict[str, int]
    resilience: float
    edge_mode: bool = False
    seed: int = 0

    @property
    def survivor_count(self) -> int:
        return len(self.steps[-1].survivors)

    @property
    def final(self) -> SimStep:
        return self.steps[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for s in self.steps:
            w.writerow([repr(float(s.t)), len(s.survivors), s.live_edges, len(s.failed)])
        return buf.getvalue()

    def summary(self) -> dict:
        fin = self.final
        return {
            "seed": self.seed,
            "edge_mode": self.edge_mode,
            "steps": len(self.steps) - 1,
            "survivors": list(fin.survivors),
            "survivor_count": self.survivor_count,
            "resilience": None if math.isnan(self.resilience) else self.resilience,
            "service_times": {c: fin.service_times[c] for c in sorted(fin.service_times)},
            "chain_lengths": dict(sorted(self.chain_lengths.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def vehicle_rng(seed: int, vehicle_id: str) -> np.random.Generator:
    """Per-vehicle stream, independent of iteration order and cluster membership."""
    return np.random.default_rng([seed, zlib.crc32(vehicle_id.encode())])


def stay_probability(g: ClusterGraph, v: str, matrices: Mapping[str, TransitionMatrix] | None, segment: str) -> float:
    node = g.node(v)
    if node.is_rsu:
        return 1.0
    if matrices is not None and v in matrices:
        return matrices[v].prob(segment, segment)
    return node.ccp


def _stays(rng: np.random.Generator, m: TransitionMatrix | None, p_stay: float, segment: str) -> bool:
    u = rng.random()
    if m is None:
        return u < p_stay
    row = m.row(segment)
    nxt = min(int(np.searchsorted(np.cumsum(row), u, side="right")), len(row) - 1)
    return m.registry.segments[nxt] == segment


def survivor_schedule(
    g: ClusterGraph,
    cfg: SimConfig,
    matrices: Mapping[str, TransitionMatrix] | None = None,
    n_steps: int | None = None,
) -> list[tuple[str, ...]]:
    """Surviving members after each step; entry 0 is the full cluster."""
    n_steps = cfg.n_steps if n_steps is None else n_steps
    seg = cfg.cluster_segment
    alive = set(g.node_ids)
    rngs = {v: vehicle_rng(cfg.seed, v) for v in g.node_ids}
    out = [tuple(sorted(alive))]
    for _ in range(n_steps):
        for v in sorted(alive):
            if g.node(v).is_rsu:
                continue
            m = matrices.get(v) if matrices is not None else None
            if not _stays(rngs[v], m, stay_probability(g, v, matrices, seg), seg):
                alive.discard(v)
        out.append(tuple(sorted(alive)))
    return out


def transfer_time(kb: float, route: GraphPath, hop_delay_s: float) -> float:
    """Seconds to push ``kb`` kilobits over ``route``; zero for a local handoff."""
    if route.hop_count == 0:
        return 0.0
    if route.bottleneck_bandwidth <= 0:
        return math.inf
    return kb / route.bottleneck_bandwidth + route.hop_count * hop_delay_s


def chain_service_time(stream: Stream, pl: Placement, ig: InstanceGraph, cfg: SimConfig) -> float:
    """Transfer time of one window's data along the chain plus processing latency."""
    total = 0.0
    for key, rate in zip(stream.flow_keys, stream.rates):
        total += transfer_time(rate * cfg.step, pl.routes[key], cfg.hop_delay_s)
    for inst in stream.instances:
        total += ig.types[inst.label].proc_latency_s
    return total


def _chain_id(app: str, source: str) -> str:
    return f"{app}@{source}"


def _chain_alive(nodes: Iterable[str], routes: Iterable[GraphPath], alive: set[str]) -> bool:
    # a route edge disappears exactly when one of its end nodes departs
    return all(n in alive for n in nodes) and all(v in alive for p in routes for v in p.nodes)


def resilience_or_nan(sc: SelectedCluster, survivors: Iterable[str]) -> float:
    try:
        return resilience_score(sc, survivors)
    except UndefinedScore:
        return math.nan


def _live_edges(g: ClusterGraph, alive: set[str]) -> int:
    return sum(1 for e in g.edges if e.a in alive and e.b in alive)


def run(
    sc: SelectedCluster,
    pl: Placement,
    ig: InstanceGraph,
    cfg: SimConfig | None = None,
    matrices: Mapping[str, TransitionMatrix] | None = None,
    n_steps: int | None = None,
) -> SimTrace:
    """Simulate the placed service over the cluster's departures."""
    cfg = cfg or SimConfig()
    g = sc.subgraph
    for n in pl.mapping.values():
        if n not in g:
            raise ValueError(f"placement uses {n!r}, not a cluster member")
    chains = {}
    for s in ig.streams:
        cid = _chain_id(s.app, s.source)
        nodes = [pl.node_of(i) for i in s.instances] + [pl.node_of(s.flow_keys[-1][1])]
        routes = [pl.routes[k] for k in s.flow_keys]
        chains[cid] = (nodes, routes, chain_service_time(s, pl, ig, cfg), len(s.instances))
    steps = []
    for k, surv in enumerate(survivor_schedule(g, cfg, matrices, n_steps)):
        alive = set(surv)
        times = {cid: (t if _chain_alive(nodes, routes, alive) else None) for cid, (nodes, routes, t, _) in chains.items()}
        steps.append(SimStep(k * cfg.step, surv, _live_edges(g, alive), times))
    lengths = {cid: c[3] for cid, c in chains.items()}
    return SimTrace(steps, lengths, resilience_or_nan(sc, steps[-1].survivors), False, cfg.seed)


def edge_route(g: ClusterGraph, source: str, rsu: str) -> GraphPath | None:
    """Fewest-hop route to the RSU, widest bottleneck first among equals."""
    dist = g.hop_distances(source)
    if rsu not in dist:
        return None
    # expand shortest-hop layers, keeping the widest bottleneck per node
    frontier = {source: (math.inf, (source,))}
    for _ in range(dist[rsu]):
        nxt: dict[str, tuple[float, tuple[str, ...]]] = {}
        for u, (bw, nodes) in sorted(frontier.items()):
            for w in g.neighbors(u):
                if dist.get(w) != dist[u] + 1:
                    continue
                cand = (min(bw, g.edge(u, w).bandwidth), nodes + (w,))
                cur = nxt.get(w)
                if cur is None or (-cand[0], cand[1]) < (-cur[0], cur[1]):
                    nxt[w] = cand
        frontier = nxt
    best = frontier.get(rsu, (math.inf, (source,)))
    return g.path(best[1])


def run_edge_comparator(
    sc: SelectedCluster,
    sources: Sequence[str],
    app: TypeGraph,
    cfg: SimConfig | None = None,
    matrices: Mapping[str, TransitionMatrix] | None = None,
    n_steps: int | None = None,
) -> SimTrace:
    """Every processing step on the RSU, fed with raw source data.

    One instance per type serves all sources; the RSU computes
    ``rsu_speedup`` times faster than a vehicle.
    """
    cfg = cfg or SimConfig()
    g = sc.subgraph
    rsus = [v for v in g.node_ids if g.node(v).is_rsu]
    if not rsus:
        raise ValueError("cluster has no RSU")
    rsu = rsus[0]
    proc = sum(t.proc_latency_s for t in app.chain) / cfg.rsu_speedup
    kb = app.source_flow_kbps * cfg.step
    chains = {}
    for src in sources:
        route = edge_route(g, src, rsu)
        cid = _chain_id(app.name, src)
        if route is None:
            chains[cid] = ([src], [], None)
        else:
            chains[cid] = ([src], [route], transfer_time(kb, route, cfg.hop_delay_s) + proc)
    steps = []
    for k, surv in enumerate(survivor_schedule(g, cfg, matrices, n_steps)):
        alive = set(surv)
        times = {
            cid: (t if t is not None and _chain_alive(nodes, routes, alive) else None)
            for cid, (nodes, routes, t) in chains.items()
        }
        steps.append(SimStep(k * cfg.step, surv, _live_edges(g, alive), times))
    lengths = {cid: len(app) for cid in chains}
    return SimTrace(steps, lengths, resilience_or_nan(sc, steps[-1].survivors), True, cfg.seed)


@dataclass(frozen=True)
class ServiceTimeStats:
    minimum: float
    maximum: float
    mean: float
    completed: int
    failed: int

    def to_dict(self) -> dict:
        return {
            "min": self.minimum,
            "max": self.maximum,
            "mean": self.mean,
            "completed": self.completed,
            "failed": self.failed,
        }


def service_time_stats(traces: Sequence[SimTrace]) -> dict[int, ServiceTimeStats]:
    """Service time per chain length over every chain that lasted the run."""
    done: dict[int, list[float]] = {}
    failed: dict[int, int] = {}
    for tr in traces:
        for cid, t in tr.final.service_times.items():
            n = tr.chain_lengths[cid]
            done.setdefault(n, [])
            if t is None:
                failed[n] = failed.get(n, 0) + 1
            else:
                done[n].append(t)
    out = {}
    for n in sorted(done):
        vals = done[n]
        if vals:
            out[n] = ServiceTimeStats(min(vals), max(vals), float(np.mean(vals)), len(vals), failed.get(n, 0))
        else:
            out[n] = ServiceTimeStats(math.nan, math.nan, math.nan, 0, failed.get(n, 0))
    return out
