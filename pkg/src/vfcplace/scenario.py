"""Synthetic vehicle populations, road-segment traces and connectivity.

Vehicles sit on the cluster's road segment. Each has a ground-truth
transition matrix whose row for that segment puts a Beta-distributed
*loyalty* mass on one preferred next segment: a core vehicle prefers to stay
(a self-transition), a fringe vehicle prefers to leave. Core vehicles are
placed close together, fringe vehicles on a ring around them, and the RSU at
the roadside.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import InvalidSpec
from .graph import ClusterGraph
from .mobility import (
    ConfidenceRecord,
    SegmentRegistry,
    TimeWindow,
    TransitionMatrix,
    TransitionRecord,
    VehicleDescriptor,
    build_cluster_graph,
    calibrate,
    write_trace_csv,
)

RSU_ID = "rsu"


def _intersection() -> dict[str, tuple[str, ...]]:
    return {"RS1": ("RS2", "RS3", "RS4"), "RS2": ("RS1", "RS3"), "RS3": ("RS1", "RS4"), "RS4": ("RS1", "RS2")}


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    n_vehicles: int = 29
    n_core: int = 19
    n_newcomers: int = 2
    adjacency: Mapping[str, tuple[str, ...]] = field(default_factory=_intersection)
    cluster_segment: str = "RS1"
    traffic_state: str = "free_flow"
    core_loyalty: tuple[float, float] = (0.955, 400.0)  # Beta mean, concentration
    fringe_loyalty: tuple[float, float] = (0.7, 20.0)
    cpu_range: tuple[float, float] = (30.0, 60.0)
    mem_range: tuple[float, float] = (512.0, 1536.0)
    camera_fraction: float = 0.75
    bandwidth_range: tuple[float, float] = (1000.0, 5000.0)
    rsu_bandwidth: float = 5000.0
    rsu_capacities: Mapping[str, float] = field(
        default_factory=lambda: {"cpu": 200.0, "mem": 8192.0, "camera": 0.0, "gpu": 1.0}
    )
    transitions_per_vehicle: int = 1000
    core_radius: float = 0.15
    fringe_ring: tuple[float, float] = (0.3, 0.55)
    link_radius: float = 0.35
    rsu_position: tuple[float, float] = (0.5, 0.25)
    rsu_radius: float = 0.35
    trips_range: tuple[int, int] = (8, 20)
    follow_probability: float = 0.85
    max_layout_attempts: int = 200

    def __post_init__(self):
        problems = []
        if self.n_vehicles < 1:
            problems.append("n_vehicles must be >= 1")
        if not 0 <= self.n_core <= self.n_vehicles:
            problems.append("n_core must lie in [0, n_vehicles]")
        if self.n_newcomers < 0:
            problems.append("n_newcomers must be >= 0")
        if not 0.0 <= self.camera_fraction <= 1.0:
            problems.append("camera_fraction outside [0, 1]")
        for name in ("cpu_range", "mem_range", "bandwidth_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                problems.append(f"{name} must be a non-negative interval")
        for name in ("core_loyalty", "fringe_loyalty"):
            mean, conc = getattr(self, name)
            if not 0.0 < mean < 1.0 or conc <= 0:
                problems.append(f"{name} needs a mean in (0, 1) and positive concentration")
        if self.rsu_bandwidth < 0:
            problems.append("rsu_bandwidth must be >= 0")
        if self.cluster_segment not in self.adjacency:
            problems.append("cluster_segment is not a registered segment")
        if self.transitions_per_vehicle < 1:
            problems.append("transitions_per_vehicle must be >= 1")
        if not 0.0 <= self.follow_probability <= 1.0:
            problems.append("follow_probability outside [0, 1]")
        try:
            TimeWindow.for_traffic(self.traffic_state)
        except ValueError as exc:
            problems.append(str(exc))
        if problems:
            raise InvalidSpec("; ".join(problems))
        object.__setattr__(self, "adjacency", {k: tuple(v) for k, v in self.adjacency.items()})

    @property
    def registry(self) -> SegmentRegistry:
        return SegmentRegistry(tuple(sorted(self.adjacency)), self.adjacency)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adjacency"] = {k: list(v) for k, v in self.adjacency.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown scenario fields {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        if "adjacency" in kw:
            kw["adjacency"] = {s: tuple(a) for s, a in kw["adjacency"].items()}
        return cls(**kw)


@dataclass
class Scenario:
    spec: ScenarioSpec
    registry: SegmentRegistry
    vehicles: list[VehicleDescriptor]
    traces: list[TransitionRecord]
    connectivity: list[tuple[str, str, float]]
    ground_truth: dict[str, np.ndarray]
    positions: dict[str, tuple[float, float]]

    @property
    def window(self) -> TimeWindow:
        return TimeWindow.for_traffic(self.spec.traffic_state)

    def matrices(self) -> dict[str, TransitionMatrix]:
        ids = [v.id for v in self.vehicles if not v.is_rsu]
        return calibrate(self.traces, self.registry, vehicles=ids)

    def graph(self, threshold: float = 0.5, matrices: Mapping[str, TransitionMatrix] | None = None) -> ClusterGraph:
        m = self.matrices() if matrices is None else matrices
        return build_cluster_graph(self.vehicles, m, self.spec.cluster_segment, None, self.connectivity, threshold)

    def vehicles_json(self) -> str:
        return json.dumps([v.to_dict() for v in self.vehicles], indent=2, sort_keys=True)

    def trace_csv(self) -> str:
        return write_trace_csv(self.traces)

    def registry_json(self) -> str:
        return json.dumps(self.registry.to_dict(), indent=2, sort_keys=True)

    def connectivity_json(self) -> str:
        return json.dumps([{"a": a, "b": b, "bandwidth_kbps": bw} for a, b, bw in self.connectivity], indent=2)


def _stay_row(rng, registry, seg, preferred, mean, conc) -> np.ndarray:
    """Row of ``seg``: Beta loyalty on ``preferred``, the rest Dirichlet-split."""
    others = [s for s in (seg, *registry.adjacency[seg]) if s != preferred]
    loyalty = rng.beta(mean * conc, (1 - mean) * conc)
    row = np.zeros(len(registry))
    row[registry.index(preferred)] = loyalty
    if others:
        share = rng.dirichlet(np.ones(len(others))) * (1 - loyalty)
        for s, p in zip(others, share):
            row[registry.index(s)] += p
    else:
        row[registry.index(preferred)] = 1.0
    return row


def _ground_truth(rng, spec: ScenarioSpec, core: bool) -> np.ndarray:
    reg = spec.registry
    seg = spec.cluster_segment
    rows = []
    for s in reg.segments:
        if s == seg:
            if core:
                rows.append(_stay_row(rng, reg, s, s, *spec.core_loyalty))
            else:
                away = reg.adjacency[s][rng.integers(len(reg.adjacency[s]))] if reg.adjacency[s] else s
                rows.append(_stay_row(rng, reg, s, away, *spec.fringe_loyalty))
        else:
            nbrs = [s, *reg.adjacency[s]]
            row = np.zeros(len(reg))
            for t, p in zip(nbrs, rng.dirichlet(np.ones(len(nbrs)))):
                row[reg.index(t)] += p
            rows.append(row)
    return np.vstack(rows)


def _stratified_counts(row: np.ndarray, n: int) -> np.ndarray:
    """Largest-remainder rounding of ``row * n``, so counts match the row closely."""
    raw = row * n
    counts = np.floor(raw).astype(np.int64)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def _sample_traces(rng, spec: ScenarioSpec, vid: str, truth: np.ndarray) -> list[TransitionRecord]:
    reg = spec.registry
    k = len(reg)
    per_row = _stratified_counts(np.full(k, 1.0 / k), spec.transitions_per_vehicle)
    pairs = []
    for i in range(k):
        for j, c in enumerate(_stratified_counts(truth[i], int(per_row[i]))):
            pairs += [(reg.segments[i], reg.segments[j])] * int(c)
    order = rng.permutation(len(pairs))
    step = TimeWindow.for_traffic(spec.traffic_state).length
    return [TransitionRecord(vid, float(n * step), *pairs[o]) for n, o in enumerate(order)]


def _layout(rng, spec: ScenarioSpec, ids: list[str], core_ids: set[str]) -> dict[str, tuple[float, float]]:
    pos = {}
    cx, cy = 0.5, 0.5
    r0, r1 = spec.fringe_ring
    for vid in ids:
        ang = rng.uniform(0, 2 * math.pi)
        if vid in core_ids:
            rad = spec.core_radius * math.sqrt(rng.uniform())
        else:
            rad = math.sqrt(rng.uniform(r0 * r0, r1 * r1))
        pos[vid] = (cx + rad * math.cos(ang), cy + rad * math.sin(ang))
    pos[RSU_ID] = tuple(spec.rsu_position)
    return pos


def _links(rng, spec: ScenarioSpec, pos) -> list[tuple[str, str, float]]:
    ids = sorted(pos)
    out = []
    lo, hi = spec.bandwidth_range
    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            reach = spec.rsu_radius if RSU_ID in (a, b) else spec.link_radius
            if math.dist(pos[a], pos[b]) <= reach:
                bw = spec.rsu_bandwidth if RSU_ID in (a, b) else float(rng.uniform(lo, hi))
                out.append((a, b, round(bw, 3)))
    return out


def _connected(ids, links) -> bool:
    adj = {v: set() for v in ids}
    for a, b, _ in links:
        adj[a].add(b)
        adj[b].add(a)
    start = next(iter(ids))
    seen, stack = {start}, [start]
    while stack:
        for w in adj[stack.pop()]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == len(ids)


def generate(spec: ScenarioSpec) -> Scenario:
    """Build traces, vehicle descriptors and connectivity from ``spec``.

    Output is a pure function of the spec (including its seed).
    """
    ss = np.random.SeedSequence(spec.seed)
    r_caps, r_truth, r_trace, r_trips, r_layout = (np.random.default_rng(s) for s in ss.spawn(5))
    ids = [f"v{i:02d}" for i in range(spec.n_vehicles)]
    newcomers = [f"n{i:02d}" for i in range(spec.n_newcomers)]
    core_ids = set(ids[: spec.n_core])
    vehicles = []
    truth = {}
    traces: list[TransitionRecord] = []
    for vid in ids + newcomers:
        caps = {
            "cpu": round(float(r_caps.uniform(*spec.cpu_range)), 3),
            "mem": round(float(r_caps.uniform(*spec.mem_range)), 3),
            "camera": float(r_caps.uniform() < spec.camera_fraction),
            "gpu": 0.0,
        }
        if vid in newcomers:
            total = int(r_trips.integers(0, 3))
        else:
            total = int(r_trips.integers(spec.trips_range[0], spec.trips_range[1] + 1))
        followed = int(r_trips.binomial(total, spec.follow_probability)) if total else 0
        vehicles.append(VehicleDescriptor(vid, caps, spec.cluster_segment, ConfidenceRecord(followed, total)))
        truth[vid] = _ground_truth(r_truth, spec, vid in core_ids)
        traces += _sample_traces(r_trace, spec, vid, truth[vid])
    vehicles.append(VehicleDescriptor(RSU_ID, dict(spec.rsu_capacities), None, ConfidenceRecord(), True))
    all_ids = ids + newcomers + [RSU_ID]
    for _ in range(spec.max_layout_attempts):
        pos = _layout(r_layout, spec, ids + newcomers, core_ids)
        links = _links(r_layout, spec, pos)
        if _connected(all_ids, links):
            break
    else:
        raise InvalidSpec("could not draw a connected layout; widen link_radius")
    traces.sort(key=lambda r: (r.vehicle_id, r.timestamp))
    return Scenario(spec, spec.registry, vehicles, traces, links, truth, pos)


def reference_scenario() -> ScenarioSpec:
    """Bundled 30-node scenario: 29 vehicles plus an RSU, with 2 newcomers filtered out."""
    return ScenarioSpec(seed=REFERENCE_SEED)


REFERENCE_SEED = 0


def sized_variant(n_nodes: int, seed: int = REFERENCE_SEED) -> ScenarioSpec:
    """Reference-like scenario whose cluster graph has ``n_nodes`` nodes (RSU included)."""
    n_veh = n_nodes - 1
    base = reference_scenario()
    core = round(base.n_core * n_veh / base.n_vehicles)
    return replace(base, seed=seed, n_vehicles=n_veh, n_core=core)


def uplink_variant(spec: ScenarioSpec, constrained: bool) -> ScenarioSpec:
    """Same population with a thin (300 Kb/s) or wide (20000 Kb/s) RSU uplink."""
    return replace(spec, rsu_bandwidth=300.0 if constrained else 20000.0)
