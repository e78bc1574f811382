"""Per-vehicle Markov mobility models and cluster cohesion probabilities.

Road segments are Markov states. A vehicle's transition matrix is calibrated
from counted segment-to-segment transitions, and its cohesion probability
(CCP) is the probability that its next transition lands on the cluster's
segment. Staying on a segment across a window is a self-transition.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyCluster, MalformedRecord, UnknownSegment
from .graph import ClusterEdge, ClusterGraph, VehicleNode

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("vehicle_id", "timestamp", "from_segment", "to_segment")
FREE_FLOW_WINDOW_S = 300.0
CONGESTED_WINDOW_S = 600.0
DEFAULT_CONFIDENCE_THRESHOLD = 0.5
DEFAULT_MIN_TRIPS = 3


@dataclass(frozen=True)
class TimeWindow:
    t1: float
    t2: float

    def __post_init__(self):
        if not self.t2 > self.t1:
            raise ValueError(f"window end {self.t2} must exceed start {self.t1}")

    @classmethod
    def for_traffic(cls, state: str, start: float = 0.0) -> "TimeWindow":
        """Window sized by traffic state: 300 s free-flow, 600 s congested."""
        lengths = {"free_flow": FREE_FLOW_WINDOW_S, "congested": CONGESTED_WINDOW_S}
        try:
            return cls(start, start + lengths[state])
        except KeyError:
            raise ValueError(f"unknown traffic state {state!r}") from None

    @property
    def length(self) -> float:
        return self.t2 - self.t1

    def contains(self, t: float) -> bool:
        return self.t1 <= t < self.t2


@dataclass(frozen=True)
class SegmentRegistry:
    segments: tuple[str, ...]
    adjacency: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    allow_self: bool = True

    def __post_init__(self):
        segs = tuple(self.segments)
        if len(set(segs)) != len(segs):
            raise ValueError("segment ids must be unique")
        adj = {s: tuple(self.adjacency.get(s, ())) for s in segs}
        for s, nbrs in adj.items():
            for n in nbrs:
                if n not in adj:
                    raise UnknownSegment(n)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(segs)})

    def index(self, segment: str) -> int:
        try:
            return self._index[segment]
        except KeyError:
            raise UnknownSegment(segment) from None

    def __contains__(self, segment):
        return segment in self._index

    def __len__(self):
        return len(self.segments)

    def to_dict(self) -> dict:
        return {"segments": list(self.segments), "adjacency": {s: list(a) for s, a in self.adjacency.items()}}

    @classmethod
    def from_dict(cls, data: Mapping) -> "SegmentRegistry":
        return cls(tuple(data["segments"]), {k: tuple(v) for k, v in data.get("adjacency", {}).items()})


@dataclass(frozen=True)
class TransitionRecord:
    vehicle_id: str
    timestamp: float
    from_segment: str
    to_segment: str


class TransitionMatrix:
    """Transition counts of one vehicle plus the derived probabilities.

    Rows without any observed departure fall back to a uniform distribution
    over the registry's adjacent segments; :attr:`unobserved` lists them.
    """

    def __init__(self, vehicle_id: str, registry: SegmentRegistry, counts=None, window: TimeWindow | None = None):
        n = len(registry)
        if counts is None:
            counts = np.zeros((n, n), dtype=np.int64)
        counts = np.array(counts, dtype=np.int64)
        if counts.shape != (n, n):
            raise ValueError(f"counts shape {counts.shape} does not match {n} segments")
        if (counts < 0).any():
            raise ValueError("negative transition count")
        counts.flags.writeable = False
        self.vehicle_id = vehicle_id
        self.registry = registry
        self.counts = counts
        self.window = window

    def __eq__(self, other):
        return (
            isinstance(other, TransitionMatrix)
            and self.vehicle_id == other.vehicle_id
            and self.registry == other.registry
            and self.window == other.window
            and np.array_equal(self.counts, other.counts)
        )

    def __repr__(self):
        return f"TransitionMatrix({self.vehicle_id!r}, transitions={int(self.counts.sum())})"

    @property
    def unobserved(self) -> list[str]:
        totals = self.counts.sum(axis=1)
        return [s for s, t in zip(self.registry.segments, totals) if t == 0]

    def observed(self, segment: str) -> bool:
        return bool(self.counts[self.registry.index(segment)].sum() > 0)

    def row(self, segment: str) -> np.ndarray:
        i = self.registry.index(segment)
        c = self.counts[i]
        total = c.sum()
        if total > 0:
            return c / total
        row = np.zeros(len(self.registry))
        nbrs = self.registry.adjacency.get(segment, ())
        if not nbrs:
            row[i] = 1.0
        else:
            for s in nbrs:
                row[self.registry.index(s)] = 1.0 / len(nbrs)
        return row

    @property
    def probabilities(self) -> np.ndarray:
        return np.vstack([self.row(s) for s in self.registry.segments])

    def prob(self, from_segment: str, to_segment: str) -> float:
        return float(self.row(from_segment)[self.registry.index(to_segment)])

    def to_dict(self) -> dict:
        d = {
            "vehicle_id": self.vehicle_id,
            "segments": list(self.registry.segments),
            "counts": self.counts.tolist(),
            "unobserved": self.unobserved,
        }
        if self.window is not None:
            d["window"] = [self.window.t1, self.window.t2]
        return d


def calibrate(
    records: Iterable[TransitionRecord],
    registry: SegmentRegistry,
    window: TimeWindow | None = None,
    vehicles: Iterable[str] = (),
) -> dict[str, TransitionMatrix]:
    """Count transitions per vehicle and build their matrices.

    Only records inside ``window`` are counted when one is given. Vehicles
    listed in ``vehicles`` get a matrix even if they have no records.
    """
    n = len(registry)
    counts: dict[str, np.ndarray] = {v: np.zeros((n, n), dtype=np.int64) for v in vehicles}
    for rec in records:
        i = registry.index(rec.from_segment)
        j = registry.index(rec.to_segment)
        if i == j and not registry.allow_self:
            raise MalformedRecord(f"self-transition on {rec.from_segment} not allowed")
        if window is not None and not window.contains(rec.timestamp):
            continue
        c = counts.get(rec.vehicle_id)
        if c is None:
            c = counts[rec.vehicle_id] = np.zeros((n, n), dtype=np.int64)
        c[i, j] += 1
    return {v: TransitionMatrix(v, registry, c, window) for v, c in sorted(counts.items())}


def node_ccp(
    m: TransitionMatrix | None,
    current: str,
    cluster_segment: str,
    w: TimeWindow | None = None,
) -> float:
    """Probability that the vehicle's next transition is onto ``cluster_segment``.

    ``m=None`` denotes a stationary node (an RSU), which always stays.
    """
    if m is None:
        return 1.0
    if w is not None and m.window is not None and m.window != w:
        raise ValueError(f"matrix calibrated on {m.window}, asked for {w}")
    return m.prob(current, cluster_segment)


def link_joint_ccp(ccp_a: float, ccp_b: float) -> float:
    """Joint probability that two vehicles stay together, assuming independence."""
    for p in (ccp_a, ccp_b):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
    return ccp_a * ccp_b


@dataclass(frozen=True)
class ConfidenceRecord:
    """Trip history used for the confidence score of a vehicle."""

    followed: int = 0
    total: int = 0
    min_trips: int = DEFAULT_MIN_TRIPS

    def __post_init__(self):
        if not 0 <= self.followed <= self.total:
            raise ValueError("need 0 <= followed <= total")

    @property
    def score(self) -> float:
        # newcomers start from the least confidence
        return self.followed / self.total if self.total else 0.0

    @property
    def is_new(self) -> bool:
        return self.total < self.min_trips

    def record_trip(self, followed_preferred: bool) -> "ConfidenceRecord":
        return ConfidenceRecord(self.followed + int(followed_preferred), self.total + 1, self.min_trips)


def update_confidence(prev: float, followed_preferred: bool, trip_counts: tuple[int, int]) -> float:
    """Score after recording one more trip on top of ``trip_counts``.

    ``prev`` is the score before the trip; it must agree with the counts
    (0 for a vehicle with no trips).
    """
    rec = ConfidenceRecord(*trip_counts)
    if abs(prev - rec.score) > 1e-9:
        raise ValueError(f"prior score {prev} disagrees with counts {trip_counts}")
    return rec.record_trip(followed_preferred).score


@dataclass(frozen=True)
class VehicleDescriptor:
    id: str
    capacities: Mapping[str, float]
    current_segment: str | None = None
    confidence: ConfidenceRecord = field(default_factory=ConfidenceRecord)
    is_rsu: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "capacities": dict(self.capacities),
            "current_segment": self.current_segment,
            "followed": self.confidence.followed,
            "total": self.confidence.total,
            "is_rsu": self.is_rsu,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "VehicleDescriptor":
        return cls(
            id=str(d["id"]),
            capacities=dict(d["capacities"]),
            current_segment=d.get("current_segment"),
            confidence=ConfidenceRecord(int(d.get("followed", 0)), int(d.get("total", 0))),
            is_rsu=bool(d.get("is_rsu", False)),
        )


def eligible(v: VehicleDescriptor, threshold: float = DEFAULT_CONFIDENCE_THRESHOLD) -> bool:
    if v.is_rsu:
        return True
    return not v.confidence.is_new and v.confidence.score >= threshold


def build_cluster_graph(
    vehicles: Sequence[VehicleDescriptor],
    matrices: Mapping[str, TransitionMatrix],
    cluster_segment: str,
    w: TimeWindow | None,
    connectivity: Iterable[tuple[str, str, float]],
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
) -> ClusterGraph:
    """CCP-weighted cluster graph over the vehicles that pass the confidence filter."""
    known = {v.id for v in vehicles}
    nodes = {}
    for v in vehicles:
        if not eligible(v, threshold):
            continue
        if v.is_rsu:
            ccp = 1.0
        else:
            m = matrices.get(v.id)
            if m is None:
                reg = next(iter(matrices.values())).registry
                m = TransitionMatrix(v.id, reg)
            ccp = node_ccp(m, v.current_segment or cluster_segment, cluster_segment, w)
        nodes[v.id] = VehicleNode(v.id, v.capacities, ccp, v.confidence.score if not v.is_rsu else 1.0, v.is_rsu)
    if not any(not n.is_rsu for n in nodes.values()):
        raise EmptyCluster("no vehicle passed the confidence threshold")
    edges = []
    for a, b, bw in connectivity:
        for end in (a, b):
            if end not in known:
                raise KeyError(f"connectivity references unknown vehicle {end}")
        if a in nodes and b in nodes:
            edges.append(ClusterEdge(a, b, float(bw), link_joint_ccp(nodes[a].ccp, nodes[b].ccp)))
    return ClusterGraph(nodes.values(), edges)


# -- file formats ----------------------------------------------------------


def read_trace_csv(source, lenient: bool = False) -> list[TransitionRecord]:
    """Parse the trace CSV. ``source`` is a path or an open text stream.

    Malformed lines raise :class:`MalformedRecord` with their line number,
    or are logged and skipped when ``lenient`` is set.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_trace_csv(fh, lenient)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None:
        raise MalformedRecord("empty trace file, missing header", line=1)
    header = [h.strip() for h in header]
    for col in TRACE_COLUMNS:
        if col not in header:
            raise MalformedRecord(f"missing column {col!r}", line=1)
    idx = [header.index(c) for c in TRACE_COLUMNS]
    out: list[TransitionRecord] = []
    last_ts: dict[str, float] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            if len(row) < len(header):
                raise MalformedRecord(f"expected {len(header)} fields, got {len(row)}", lineno)
            vid, ts, a, b = (row[i].strip() for i in idx)
            try:
                t = float(ts)
            except ValueError:
                raise MalformedRecord(f"bad timestamp {ts!r}", lineno) from None
            if not vid or not a or not b:
                raise MalformedRecord("empty field", lineno)
            if vid in last_ts and t < last_ts[vid]:
                raise MalformedRecord(f"timestamp decreases for vehicle {vid}", lineno)
        except MalformedRecord as exc:
            if not lenient:
                raise
            log.warning("skipping record: %s", exc)
            continue
        last_ts[vid] = t
        out.append(TransitionRecord(vid, t, a, b))
    return out


def write_trace_csv(records: Iterable[TransitionRecord], target=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for r in records:
        w.writerow([r.vehicle_id, repr(float(r.timestamp)), r.from_segment, r.to_segment])
    text = buf.getvalue()
    if target is not None:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def matrices_to_json(matrices: Mapping[str, TransitionMatrix]) -> str:
    return json.dumps({v: m.to_dict() for v, m in sorted(matrices.items())}, indent=2, sort_keys=True)


def matrices_from_json(text: str, registry: SegmentRegistry) -> dict[str, TransitionMatrix]:
    data = json.loads(text)
    out = {}
    for vid, d in data.items():
        if list(d["segments"]) != list(registry.segments):
            raise ValueError(f"matrix for {vid} uses a different segment order")
        win = d.get("window")
        out[vid] = TransitionMatrix(vid, registry, d["counts"], TimeWindow(*win) if win else None)
    return out
