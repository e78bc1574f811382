import random

import pytest

from vfcplace.graph import ClusterEdge, ClusterGraph, VehicleNode
from vfcplace.service import TaskType, TypeGraph


def node(i, cpu=50.0, mem=1000.0, camera=1.0, ccp=1.0, rsu=False):
    return VehicleNode(i, {"cpu": cpu, "mem": mem, "camera": camera}, ccp, 1.0, rsu)


def edge(a, b, bw=1000.0, jccp=1.0):
    return ClusterEdge(a, b, bw, jccp)


def graph(edges, nodes=None, **node_kw):
    ids = sorted({x for e in edges for x in e[:2]} | set(nodes or ()))
    return ClusterGraph([node(i, **node_kw) for i in ids], [edge(*e) for e in edges])


def small_chain(flow=200.0, name="mini"):
    return TypeGraph(
        name,
        (
            TaskType("cap", {"cpu": 2, "mem": 100, "camera": 1}),
            TaskType("pre", {"cpu": 5, "mem": 120}, alpha=0.8, cpu_per_kbps=0.05),
            TaskType("cmp", {"cpu": 4, "mem": 110}, alpha=0.3, cpu_per_kbps=0.04),
        ),
        flow,
    )


def random_cluster(rng: random.Random, n: int, extra: int, rsu: bool = False) -> ClusterGraph:
    """Connected random graph: a random tree plus ``extra`` chords."""
    ids = [f"n{i}" for i in range(n)]
    nodes = []
    for i, v in enumerate(ids):
        if rsu and i == n - 1:
            nodes.append(VehicleNode(v, {"cpu": 100, "mem": 2000}, 1.0, 1.0, True))
            continue
        nodes.append(
            VehicleNode(
                v,
                {
                    "cpu": rng.uniform(8, 30),
                    "mem": rng.uniform(200, 500),
                    "camera": float(rng.random() < 0.7),
                },
                round(rng.uniform(0.5, 1.0), 3),
            )
        )
    ccp = {x.id: x.ccp for x in nodes}
    pairs = set()
    for i in range(1, n):
        pairs.add((ids[rng.randrange(i)], ids[i]))
    others = [(a, b) for i, a in enumerate(ids) for b in ids[i + 1 :] if (a, b) not in pairs]
    rng.shuffle(others)
    pairs |= set(others[:extra])
    edges = [ClusterEdge(a, b, rng.uniform(150, 600), ccp[a] * ccp[b]) for a, b in sorted(pairs)]
    return ClusterGraph(nodes, edges)


@pytest.fixture
def rng():
    return random.Random(1234)


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
