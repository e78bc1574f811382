"""Linear task chains (type graphs), built-in application profiles and
their scaled instance graphs.

A *stream* is the data of one source travelling down one application's
chain: it visits one instance of every type in order and finally reaches the
control node. Instance-level flows are the per-pair sums of stream rates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .graph import RESOURCE_KINDS

DEFAULT_SOURCE_FLOW_KBPS = 200.0


@dataclass(frozen=True)
class TaskType:
    label: str
    demands: Mapping[str, float] = field(default_factory=dict)
    alpha: float = 1.0
    n_min: int = 1
    n_max: int | None = None
    proc_latency_s: float = 0.0
    cpu_per_kbps: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"{self.label}: alpha {self.alpha} outside [0, 1]")
        if self.n_min < 1:
            raise ValueError(f"{self.label}: n_min must be >= 1")
        if self.n_max is not None and self.n_max < self.n_min:
            raise ValueError(f"{self.label}: n_max below n_min")
        dem = {k: float(self.demands.get(k, 0.0)) for k in RESOURCE_KINDS}
        if set(self.demands) - set(RESOURCE_KINDS):
            raise ValueError(f"{self.label}: unknown resource kinds")
        if any(v < 0 for v in dem.values()):
            raise ValueError(f"{self.label}: negative demand")
        if self.cpu_per_kbps < 0 or self.proc_latency_s < 0:
            raise ValueError(f"{self.label}: negative processing parameter")
        object.__setattr__(self, "demands", dem)

    def processing_load(self, inbound_kbps: float) -> float:
        """CPU needed to process an inbound flow of the given rate."""
        return self.cpu_per_kbps * inbound_kbps

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "demands": dict(self.demands),
            "alpha": self.alpha,
            "proc_latency_s": self.proc_latency_s,
            "cpu_per_kbps": self.cpu_per_kbps,
            "n_min": self.n_min,
            "n_max": self.n_max,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TaskType":
        return cls(
            label=d["label"],
            demands=d.get("demands", {}),
            alpha=float(d.get("alpha", 1.0)),
            n_min=int(d.get("n_min", 1)),
            n_max=d.get("n_max"),
            proc_latency_s=float(d.get("proc_latency_s", 0.0)),
            cpu_per_kbps=float(d.get("cpu_per_kbps", 0.0)),
        )


@dataclass(frozen=True)
class TypeGraph:
    name: str
    chain: tuple[TaskType, ...]
    source_flow_kbps: float = DEFAULT_SOURCE_FLOW_KBPS

    def __post_init__(self):
        chain = tuple(self.chain)
        if not chain:
            raise ValueError("type graph needs at least one task type")
        labels = [t.label for t in chain]
        if len(set(labels)) != len(labels):
            raise ValueError("task labels must be unique within a chain")
        if self.source_flow_kbps < 0:
            raise ValueError("negative source flow")
        object.__setattr__(self, "chain", chain)

    def __len__(self):
        return len(self.chain)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(t.label for t in self.chain)

    def stream_rates(self) -> tuple[float, ...]:
        """Rate leaving each position of the chain for one source.

        The first type emits the source flow; every later type scales its
        inbound rate by its alpha.
        """
        rates = [self.source_flow_kbps]
        for t in self.chain[1:]:
            rates.append(rates[-1] * t.alpha)
        return tuple(rates)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "chain": [t.to_dict() for t in self.chain],
            "source_flow_kbps": self.source_flow_kbps,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TypeGraph":
        return cls(d["name"], tuple(TaskType.from_dict(t) for t in d["chain"]), float(d["source_flow_kbps"]))


@dataclass(frozen=True)
class ApplicationProfile:
    name: str
    type_graph: TypeGraph
    source_count: tuple[int, int] = (1, 7)
    frame_size_kb: float = 2.7

    def to_dict(self) -> dict:
        d = self.type_graph.to_dict()
        d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ApplicationProfile":
        return cls(d["name"], TypeGraph.from_dict(d))


FULL_DETECTOR = {"proc_latency_s": 7.417, "cpu": 18.0}
TINY_DETECTOR = {"proc_latency_s": 0.31277, "cpu": 5.0}


def builtin_profiles(detector: str = "full", source_flow_kbps: float = DEFAULT_SOURCE_FLOW_KBPS) -> list[ApplicationProfile]:
    """The data-collection (chain 3) and object-detection (chain 4) apps.

    ``detector`` selects the full YOLOv3 latency profile or the tiny variant.
    """
    det = {"full": FULL_DETECTOR, "tiny": TINY_DETECTOR}[detector]
    capture = TaskType("capture", {"cpu": 5, "mem": 150, "camera": 1}, alpha=1.0)
    preprocess = TaskType("preprocess", {"cpu": 10, "mem": 120}, alpha=0.8, proc_latency_s=0.05, cpu_per_kbps=0.1)
    compress = TaskType("compress", {"cpu": 8, "mem": 110}, alpha=0.3, proc_latency_s=0.08, cpu_per_kbps=0.1)
    frame_extract = TaskType("frame_extract", {"cpu": 6, "mem": 110}, alpha=0.5, proc_latency_s=0.04, cpu_per_kbps=0.05)
    detect = TaskType(
        "detect",
        {"cpu": det["cpu"], "mem": 220, "gpu": 0},
        alpha=0.05,
        proc_latency_s=det["proc_latency_s"],
        cpu_per_kbps=0.2,
    )
    app1 = TypeGraph("app1", (capture, preprocess, compress), source_flow_kbps)
    app2 = TypeGraph("app2", (capture, preprocess, frame_extract, detect), source_flow_kbps)
    return [ApplicationProfile("app1", app1), ApplicationProfile("app2", app2)]


def profile_by_name(name: str, detector: str = "full") -> ApplicationProfile:
    for p in builtin_profiles(detector):
        if p.name == name:
            return p
    raise KeyError(f"unknown application {name!r}")


# -- instances -----------------------------------------------------------------


@dataclass(frozen=True, order=True)
class TaskInstance:
    label: str
    j: int

    def __str__(self):
        return f"{self.label}#{self.j}"

    @classmethod
    def parse(cls, text: str) -> "TaskInstance":
        label, _, j = text.rpartition("#")
        return cls(label, int(j))


# Sink of every chain; it lives wherever the control node is.
CONTROL = TaskInstance("@cn", 0)

FlowKey = tuple[TaskInstance, TaskInstance]


@dataclass(frozen=True)
class Stream:
    app: str
    source: str
    instances: tuple[TaskInstance, ...]
    rates: tuple[float, ...]

    def __post_init__(self):
        if len(self.instances) != len(self.rates):
            raise ValueError("one outgoing rate per visited instance")

    @property
    def flow_keys(self) -> list[FlowKey]:
        hops = list(self.instances) + [CONTROL]
        return list(zip(hops, hops[1:]))


class InstanceGraph:
    """Scaled instances, their flows, and the streams that induce them.

    ``flows`` may be given explicitly (e.g. to check hand-built rates);
    otherwise it is the per-pair sum of the stream rates.
    """

    def __init__(
        self,
        types: Mapping[str, TaskType],
        instances: Iterable[TaskInstance],
        flows: Mapping[FlowKey, float] | None = None,
        streams: Sequence[Stream] = (),
    ):
        self.types = dict(types)
        self.instances = list(instances)
        if len(set(self.instances)) != len(self.instances):
            raise ValueError("duplicate task instance")
        for inst in self.instances:
            if inst.label not in self.types:
                raise KeyError(f"instance {inst} has unknown type")
        self.streams = list(streams)
        if flows is None:
            acc: dict[FlowKey, float] = {}
            for s in self.streams:
                for key, rate in zip(s.flow_keys, s.rates):
                    acc[key] = acc.get(key, 0.0) + rate
            flows = acc
        known = set(self.instances) | {CONTROL}
        for a, b in flows:
            if a not in known or b not in known:
                raise KeyError(f"flow {a}->{b} references an unknown instance")
        self.flows = dict(flows)

    @property
    def counts(self) -> dict[str, int]:
        out = dict.fromkeys(self.types, 0)
        for inst in self.instances:
            out[inst.label] += 1
        return out

    def inbound(self, inst: TaskInstance) -> float:
        return sum(r for (a, b), r in self.flows.items() if b == inst)

    def outbound(self, inst: TaskInstance) -> float:
        return sum(r for (a, b), r in self.flows.items() if a == inst)

    def processing_load(self, inst: TaskInstance) -> float:
        return self.types[inst.label].processing_load(self.inbound(inst))

    def to_dict(self) -> dict:
        return {
            "types": [t.to_dict() for t in self.types.values()],
            "instances": [str(i) for i in self.instances],
            "flows": [{"src": str(a), "dst": str(b), "rate_kbps": r} for (a, b), r in self.flows.items()],
            "streams": [
                {"app": s.app, "source": s.source, "instances": [str(i) for i in s.instances], "rates": list(s.rates)}
                for s in self.streams
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "InstanceGraph":
        types = {t["label"]: TaskType.from_dict(t) for t in d["types"]}
        flows = {
            (TaskInstance.parse(f["src"]), TaskInstance.parse(f["dst"])): float(f["rate_kbps"]) for f in d["flows"]
        }
        streams = [
            Stream(s["app"], s["source"], tuple(TaskInstance.parse(i) for i in s["instances"]), tuple(s["rates"]))
            for s in d.get("streams", [])
        ]
        return cls(types, [TaskInstance.parse(i) for i in d["instances"]], flows, streams)


def _source_ids(sources: int | Sequence[str]) -> list[str]:
    if isinstance(sources, int):
        if sources < 1:
            raise ValueError("need at least one source")
        return [f"src{j}" for j in range(sources)]
    sources = list(sources)
    if not sources:
        raise ValueError("need at least one source")
    return sources


def scale_minimum(tg: TypeGraph, sources: int | Sequence[str]) -> InstanceGraph:
    """One first-type instance per source and ``n_min`` of every other type.

    Streams are wired round-robin onto the downstream instances, so with the
    usual ``n_min = 1`` every source feeds the same single instance.
    """
    srcs = _source_ids(sources)
    types = {t.label: t for t in tg.chain}
    first = tg.chain[0]
    instances = [TaskInstance(first.label, j) for j in range(len(srcs))]
    for t in tg.chain[1:]:
        instances += [TaskInstance(t.label, j) for j in range(t.n_min)]
    rates = tg.stream_rates()
    streams = []
    for j, src in enumerate(srcs):
        path = [TaskInstance(first.label, j)] + [TaskInstance(t.label, j % t.n_min) for t in tg.chain[1:]]
        streams.append(Stream(tg.name, src, tuple(path), rates))
    return InstanceGraph(types, instances, streams=streams)


def upper_limit(tg: TypeGraph, sources: int) -> dict[str, int]:
    """Instance-count ceiling per type: the number of sources for every type."""
    if sources < 1:
        raise ValueError("need at least one source")
    return {t.label: sources for t in tg.chain}


LOWER_LIMIT = 1


def shared_type_merge(
    graphs: Sequence[InstanceGraph],
    instance_capacity: Mapping[str, float] | None = None,
) -> InstanceGraph:
    """Merge several applications' instance graphs, reusing shared types.

    A label present in more than one graph is shared. Instances of a shared
    label are packed first-fit into as few instances as ``instance_capacity``
    (processing load per instance) allows; first-type instances are merged
    per source instead, since a camera feed is shared by the apps using it.
    """
    types: dict[str, TaskType] = {}
    seen_in: dict[str, int] = {}
    for g in graphs:
        for label, t in g.types.items():
            if label in types and types[label] != t:
                raise ValueError(f"shared type {label!r} differs between applications")
            types[label] = t
            seen_in[label] = seen_in.get(label, 0) + 1
    capacity = instance_capacity or {}
    first_types = {s.instances[0].label for g in graphs for s in g.streams}

    mapping: dict[tuple[int, TaskInstance], TaskInstance] = {}
    merged: list[TaskInstance] = []
    next_j: dict[str, int] = {}
    load_left: dict[TaskInstance, float] = {}
    by_source: dict[tuple[str, str], TaskInstance] = {}

    def fresh(label):
        inst = TaskInstance(label, next_j.get(label, 0))
        next_j[label] = inst.j + 1
        merged.append(inst)
        return inst

    for gi, g in enumerate(graphs):
        sources_of = {}
        for s in g.streams:
            sources_of.setdefault(s.instances[0], s.source)
        for inst in g.instances:
            label = inst.label
            if seen_in[label] < 2:
                mapping[(gi, inst)] = fresh(label)
            elif label in first_types:
                key = (label, sources_of.get(inst, f"{gi}:{inst}"))
                if key not in by_source:
                    by_source[key] = fresh(label)
                mapping[(gi, inst)] = by_source[key]
            else:
                need = g.processing_load(inst)
                cap = capacity.get(label, float("inf"))
                target = next(
                    (m for m in merged if m.label == label and load_left.get(m, -1.0) >= need - 1e-9), None
                )
                if target is None:
                    target = fresh(label)
                    load_left[target] = cap
                load_left[target] -= need
                mapping[(gi, inst)] = target

    streams = [
        Stream(s.app, s.source, tuple(mapping[(gi, i)] for i in s.instances), s.rates)
        for gi, g in enumerate(graphs)
        for s in g.streams
    ]
    return InstanceGraph(types, merged, streams=streams)


def with_limits(tg: TypeGraph, limits: Mapping[str, int]) -> TypeGraph:
    return replace(tg, chain=tuple(replace(t, n_max=limits.get(t.label, t.n_max)) for t in tg.chain))
