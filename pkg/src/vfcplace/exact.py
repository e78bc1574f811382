"""Exact placement by depth-first branch and bound.

The search decides, stream by stream and position by position, which
instance receives the data (an existing one or a new one on a chosen node)
and the route of every new flow. Every constraint only tightens as the
search goes deeper, so a violated partial assignment is pruned at once. The
lower bound adds, to the committed cost, a tree bound on the hops still
needed to connect unfinished streams to the control node and the cheapest
node cost of every type not yet instantiated.

A mixed-integer model of the same search space can be exported in LP format
or solved with :func:`scipy.optimize.milp` for cross-checking.
"""

from __future__ import annotations

import math
import re
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, LinearConstraint, milp

from .errors import InconsistentGap, Infeasible, InstanceTooLarge, SearchBudgetExceeded
from .feasibility import ObjectiveWeights, flow_link_cost
from .graph import RESOURCE_KINDS, GraphPath
from .placer import PlacementOutcome, PlacementRequest, PlacementState, finish, place
from .service import CONTROL, Stream, TaskInstance

EPS = 1e-12


@dataclass(frozen=True)
class ExactConfig:
    max_nodes: int = 12
    max_sources: int = 4
    max_chain: int = 4
    time_budget: float | None = 120.0
    weights: ObjectiveWeights | None = None
    prune: bool = True
    workers: int = 1
    seed_with_heuristic: bool = True


def check_limits(req: PlacementRequest, cfg: ExactConfig) -> None:
    if len(req.cluster) > cfg.max_nodes:
        raise InstanceTooLarge(f"instance too large: {len(req.cluster)} nodes > {cfg.max_nodes}")
    if len(req.sources) > cfg.max_sources:
        raise InstanceTooLarge(f"instance too large: {len(req.sources)} sources > {cfg.max_sources}")
    longest = max(len(a) for a in req.apps)
    if longest > cfg.max_chain:
        raise InstanceTooLarge(f"instance too large: chain length {longest} > {cfg.max_chain}")


def _link_coef(p: GraphPath) -> float:
    """Link cost of a route per unit of rate."""
    return flow_link_cost(1.0, p)


class _Timeout(Exception):
    pass


class _Search:
    """One depth-first search over a request; ``mode`` picks the objective.

    ``objective`` minimises the weighted cost; ``count`` minimises the number
    of processing instances.
    """

    def __init__(self, req: PlacementRequest, mode: str, prune: bool, deadline: float | None):
        self.req = req
        self.mode = mode
        self.prune = prune
        self.deadline = deadline
        self.st = PlacementState(req)
        self.streams = req.streams()
        # chain heads are pinned first, then each chain is laid out in turn
        self.plan = [(si, 0) for si in range(len(self.streams))]
        self.plan += [(si, q) for si, (app, _) in enumerate(self.streams) for q in range(1, len(app) + 1)]
        self.last_index = {}
        for d, (si, q) in enumerate(self.plan):
            self.last_index[si] = d
        self.pos: list[TaskInstance | None] = [None] * len(self.streams)
        self.heads = req.source_labels
        self.best = math.inf
        self.best_actions: tuple | None = None
        self.actions: list[tuple] = []
        self.visited = 0
        self.timed_out = False
        g = req.cluster
        hostable = [v for v in g.nodes if req.allow_rsu_hosting or not v.is_rsu]
        self.min_cost = {}
        for label in self.st.types:
            costs = [self.st.new_node_cost(v.id, label) for v in hostable]
            self.min_cost[label] = min(costs) if costs else math.inf
        # labels still required from plan index d onwards
        self.needed_from: list[frozenset[str]] = [frozenset()] * (len(self.plan) + 1)
        acc: set[str] = set()
        for d in range(len(self.plan) - 1, -1, -1):
            si, q = self.plan[d]
            app = self.streams[si][0]
            if 1 <= q < len(app):
                acc.add(app.labels[q])
            self.needed_from[d] = frozenset(acc)
        self.count_floor = self._count_floor(hostable)
        # when no link can saturate, the route only matters to the weighted
        # cost, so the count search keeps one route per target
        total = sum(sum(app.stream_rates()) for app, _ in self.streams)
        if req.bandwidth_mode == "literal":
            total = max((max(app.stream_rates()) for app, _ in self.streams), default=0.0)
        # edges that can carry every flow at once never constrain anything
        self.roomy = {e.key for e in g.edges if e.bandwidth >= total}
        self.one_route = mode == "count" and len(self.roomy) == len(g.edges)
        self._routes: dict[tuple[str, str], list[GraphPath]] = {}

    def _useful_routes(self, a: str, b: str) -> list[GraphPath]:
        """Routes from ``a`` to ``b`` not beaten by a route on roomy edges.

        A route loses when a roomy route is no worse on hops and on link cost
        per unit rate. Taking the roomy route instead never hurts later
        feasibility, so the dropped routes cannot be part of a unique optimum.
        """
        hit = self._routes.get((a, b))
        if hit is None:
            hit = self._routes[(a, b)] = self._filter_routes(self.st.paths(a, b))
        return hit

    def _filter_routes(self, paths: Sequence[GraphPath]) -> list[GraphPath]:
        if len(paths) < 2:
            return list(paths)
        scored = [(p.hop_count, _link_coef(p), p) for p in paths]
        safe = [(h, c, p) for h, c, p in scored if all(e in self.roomy for e in p.edges)]
        if not safe:
            return list(paths)
        out = []
        for h, c, p in scored:
            beaten = any(
                hs <= h and cs <= c and (hs, cs, ps.nodes) < (h, c, p.nodes) for hs, cs, ps in safe
            )
            if not beaten:
                out.append(p)
        return out

    def _count_floor(self, hostable) -> dict[str, int]:
        """Fewest instances per processing type that can carry its total load."""
        total: dict[str, float] = {}
        for app, _ in self.streams:
            rates = app.stream_rates()
            for q in range(1, len(app)):
                total[app.labels[q]] = total.get(app.labels[q], 0.0) + rates[q - 1]
        cpu = max((v.capacities["cpu"] for v in hostable), default=0.0)
        out = {}
        for label, rate in total.items():
            need = self.st.types[label].cpu_per_kbps * rate
            out[label] = max(1, math.ceil(need / cpu - 1e-9)) if cpu > 0 else 1
        return out

    # -- bound ------------------------------------------------------------
    def cost(self) -> float:
        if self.mode == "count":
            return float(sum(self.st.count(lb) for lb in self.st.types if lb not in self.heads))
        return self.st.objective

    def lower_bound(self, d: int) -> float:
        st = self.st
        if self.mode == "count":
            return float(
                sum(
                    max(st.count(lb), self.count_floor.get(lb, 0) if lb in self.needed_from[0] else 0)
                    for lb in st.types
                    if lb not in self.heads
                )
            )
        l1, _, l3 = st.lambdas
        extra = 0.0
        if l3 > 0:
            for label in self.needed_from[d]:
                if st.count(label) == 0:
                    extra += self.min_cost[label]
            seen_src = set()
            for dd in range(d, len(self.plan)):
                si, q = self.plan[dd]
                if q == 0:
                    app, src = self.streams[si]
                    key = (app.labels[0], src)
                    if key not in seen_src and not any(x.label == key[0] for x in st.hosted[src]):
                        seen_src.add(key)
                        extra += st.new_node_cost(src, key[0])
            extra *= l3
        if l1 > 0:
            extra += l1 * self._hop_bound(d)
        return st.objective + extra

    def _hop_bound(self, d: int) -> float:
        st = self.st
        cn = self.req.control_node
        terminals = []
        for si, (app, src) in enumerate(self.streams):
            if self.last_index[si] < d:
                continue
            cur = self.pos[si]
            terminals.append(st.node_of(cur) if cur is not None else src)
        if not terminals:
            return 0.0
        # nodes joined by an existing flow are a free hop for later data
        parent = {}

        def find(a):
            while parent.get(a, a) != a:
                a = parent[a]
            return a

        for (a, b) in st.flows:
            ra, rb = find(st.node_of(a)), find(st.node_of(b))
            if ra != rb:
                parent[ra] = rb
        groups: dict[str, list[str]] = {}
        for v in st.g.node_ids:
            groups.setdefault(find(v), []).append(v)
        g = st.g

        def distances(src: str) -> dict[str, float]:
            dist = {src: 0}
            dq = deque([src])
            while dq:
                u = dq.popleft()
                du = dist[u]
                for w in groups[find(u)]:
                    if w not in dist or dist[w] > du:
                        dist[w] = du
                        dq.appendleft(w)
                for w in g.neighbors(u):
                    if w not in dist or dist[w] > du + 1:
                        dist[w] = du + 1
                        dq.append(w)
            return dist

        from_cn = distances(cn)
        far = max(from_cn.get(t, math.inf) for t in terminals)
        points = terminals + [cn]
        tables = [distances(t) for t in terminals] + [from_cn]
        tour = 0.0
        for i, _ in enumerate(points):
            tour += min(tables[i].get(points[j], math.inf) for j in range(len(points)) if j != i)
        # linking k separate groups takes at least k - 1 new edges
        spread = len({find(p) for p in points}) - 1
        return max(far, tour / 2.0, spread)

    # -- moves ------------------------------------------------------------
    def options(self, d: int) -> list[tuple]:
        st = self.st
        si, q = self.plan[d]
        app, src = self.streams[si]
        l1, l2, l3 = st.lambdas
        if q == 0:
            label = app.labels[0]
            if any(x.label == label for x in st.hosted[src]):
                return [((0.0,), ("head",))]
            if st.count(label) < st.limit(label) and st.can_host(src, label, 0.0):
                return [((0.0,), ("head",))]
            return []
        rates = app.stream_rates()
        rate = rates[q - 1]
        cur = self.pos[si]
        cur_node = st.node_of(cur)
        opts = []

        def route_cost(p: GraphPath, new: bool) -> float:
            return (l1 * p.hop_count if new else 0.0) + l2 * flow_link_cost(rate, p)

        if q == len(app):
            key = (cur, CONTROL)
            if key in st.routes:
                p = st.routes[key]
                if st.route_fits(p, rate, key):
                    opts.append(((0.0, route_cost(p, False)), ("sink", None, p)))
            else:
                for p in self._useful_routes(cur_node, self.req.control_node):
                    if st.route_fits(p, rate, key):
                        opts.append(((0.0, route_cost(p, True), p.nodes), ("sink", None, p)))
                        if self.one_route:
                            break
            return sorted(opts, key=lambda o: o[0])
        label = app.labels[q]
        for x in st.by_label[label]:
            if not st.can_absorb(x, rate):
                continue
            key = (cur, x)
            if key in st.routes:
                p = st.routes[key]
                if st.route_fits(p, rate, key):
                    opts.append(((0.0, route_cost(p, False), 0, x.j), ("join", x, None)))
                continue
            for p in self._useful_routes(cur_node, st.node_of(x)):
                if st.route_fits(p, rate, key):
                    opts.append(((0.0, route_cost(p, True), 0, x.j, p.nodes), ("join", x, p)))
                    if self.one_route:
                        break
        if st.count(label) < st.limit(label):
            unit = 1.0 if self.mode == "count" else 0.0
            for n in st.g.node_ids:
                if not st.can_host(n, label, rate):
                    continue
                nc = l3 * st.new_node_cost(n, label)
                for p in self._useful_routes(cur_node, n):
                    if st.route_fits(p, rate, None):
                        opts.append(((unit, nc + route_cost(p, True), 1, n, p.nodes), ("new", n, p)))
                        if self.one_route:
                            break
        return sorted(opts, key=lambda o: o[0])

    def apply(self, d: int, action: tuple) -> None:
        st = self.st
        si, q = self.plan[d]
        app, src = self.streams[si]
        kind = action[0]
        if kind == "head":
            label = app.labels[0]
            x = next((y for y in st.hosted[src] if y.label == label), None)
            if x is None:
                x = st.create(label, src)
            self.pos[si] = x
            return
        rate = app.stream_rates()[q - 1]
        cur = self.pos[si]
        if kind == "sink":
            st.add_flow((cur, CONTROL), rate, action[2])
            self.pos[si] = CONTROL
        elif kind == "join":
            st.add_flow((cur, action[1]), rate, action[2])
            self.pos[si] = action[1]
        else:
            x = st.create(app.labels[q], action[1])
            st.add_flow((cur, x), rate, action[2])
            self.pos[si] = x

    def _delta(self, key: tuple) -> float:
        if self.mode == "count":
            return key[0]
        return key[1] if len(key) > 1 else 0.0

    # -- driver -------------------------------------------------------------
    def run(self, d: int = 0) -> None:
        self.visited += 1
        if self.deadline is not None and self.visited % 64 == 0 and time.perf_counter() > self.deadline:
            raise _Timeout
        if d == len(self.plan):
            c = self.cost()
            if c < self.best - EPS:
                self.best = c
                self.best_actions = tuple(self.actions)
            return
        si = self.plan[d][0]
        base = self.cost()
        for key, action in self.options(d):
            # options come sorted by their immediate cost increment
            if self.prune and base + self._delta(key) >= self.best - EPS:
                break
            mark = self.st.mark()
            saved = self.pos[si]
            self.apply(d, action)
            if not self.prune or self.lower_bound(d + 1) < self.best - EPS:
                self.actions.append(_portable(action))
                self.run(d + 1)
                self.actions.pop()
            self.st.rollback(mark)
            self.pos[si] = saved

    def first_branch_index(self) -> int:
        """Index of the first decision with more than one possible option."""
        for d in range(len(self.plan)):
            opts = self.options(d)
            if len(opts) != 1:
                return d
            self.apply(d, opts[0][1])
            self.actions.append(_portable(opts[0][1]))
        return len(self.plan)


def _portable(action: tuple) -> tuple:
    kind = action[0]
    if kind == "head":
        return action
    route = action[2].nodes if action[2] is not None else None
    target = action[1].j if kind == "join" else action[1]
    return (kind, target, route)


def _restore(st: PlacementState, plan_label: str, a: tuple) -> tuple:
    kind = a[0]
    if kind == "head":
        return a
    route = st.g.path(a[2]) if a[2] is not None else None
    if kind == "join":
        return (kind, TaskInstance(plan_label, a[1]), route)
    return (kind, a[1], route)


class _Replayer(_Search):
    def replay(self, actions: Sequence[tuple]) -> list[Stream]:
        """Re-apply recorded decisions; returns the streams they complete."""
        visited: dict[int, list[TaskInstance]] = {}
        for d, a in enumerate(actions):
            si, q = self.plan[d]
            app = self.streams[si][0]
            label = app.labels[q] if q < len(app) else CONTROL.label
            self.apply(d, _restore(self.st, label, a))
            if a[0] != "sink":
                visited.setdefault(si, []).append(self.pos[si])
        out = []
        for si, (app, src) in enumerate(self.streams):
            if self.last_index[si] < len(actions):
                out.append(Stream(app.name, src, tuple(visited[si]), app.stream_rates()))
        return out


def _outcome(req: PlacementRequest, actions: Sequence[tuple], t0: float) -> PlacementOutcome:
    r = _Replayer(req, "objective", False, None)
    streams = r.replay(actions)
    return finish(r.st, streams, [], t0)


def _run_branch(args) -> tuple[float, tuple | None, bool, int]:
    req, mode, prune, deadline, prefix, option_index, incumbent = args
    s = _Replayer(req, mode, prune, deadline)
    s.replay(prefix)
    s.actions = list(prefix)
    s.best = incumbent
    d = len(prefix)
    opts = s.options(d)
    action = opts[option_index][1]
    s.apply(d, action)
    try:
        if not prune or s.lower_bound(d + 1) < s.best - EPS:
            s.actions.append(_portable(action))
            s.run(d + 1)
    except _Timeout:
        s.timed_out = True
    return s.best, s.best_actions, s.timed_out, s.visited


def _search(req: PlacementRequest, cfg: ExactConfig, mode: str, incumbent: float):
    deadline = None if cfg.time_budget is None else time.perf_counter() + cfg.time_budget
    root = _Replayer(req, mode, cfg.prune, deadline)
    prefix = None
    if cfg.workers > 1:
        d = root.first_branch_index()
        prefix = tuple(root.actions)
        if d < len(root.plan):
            n_opts = len(root.options(d))
            jobs = [(req, mode, cfg.prune, deadline, prefix, i, incumbent) for i in range(n_opts)]
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(_run_branch, jobs))
            best, best_actions, timed_out, visited = incumbent, None, False, 0
            for b, acts, to, v in results:
                timed_out |= to
                visited += v
                if acts is not None and b < best - EPS:
                    best, best_actions = b, acts
            return best, best_actions, timed_out, visited
        root = _Replayer(req, mode, cfg.prune, deadline)
    root.best = incumbent
    try:
        root.run(0)
    except _Timeout:
        root.timed_out = True
    return root.best, root.best_actions, root.timed_out, root.visited


def solve_exact(req: PlacementRequest, cfg: ExactConfig | None = None) -> tuple[PlacementOutcome, bool]:
    """Minimum-objective feasible placement and whether optimality is proven.

    Raises :class:`Infeasible` when the complete search finds nothing and
    :class:`SearchBudgetExceeded` when time runs out before any solution.
    """
    cfg = cfg or ExactConfig()
    check_limits(req, cfg)
    if cfg.weights is not None:
        req = replace(req, weights=cfg.weights)
    t0 = time.perf_counter()
    incumbent = math.inf
    if cfg.prune and cfg.seed_with_heuristic:
        h = place(req)
        if h.status == "success":
            incumbent = h.report.costs.total_objective + 1e-9
    best, actions, timed_out, _ = _search(req, cfg, "objective", incumbent)
    if actions is None:
        if timed_out:
            raise SearchBudgetExceeded("no feasible placement found within the time budget")
        raise Infeasible("no placement satisfies the constraints")
    return _outcome(req, actions, t0), not timed_out


@dataclass(frozen=True)
class InstanceCountResult:
    counts: dict[str, int]
    total: int
    lower_bound: int
    proven: bool


def min_processing_instances(req: PlacementRequest, cfg: ExactConfig | None = None) -> InstanceCountResult:
    """Fewest processing instances of any feasible placement.

    Routing and scaling constraints are the same as for :func:`solve_exact`;
    the instance limits on graph size do not apply. Two integer models
    bracket the answer: one ignores bandwidth, the other routes only over
    links that can never saturate. When they disagree the depth-first
    search closes the gap. ``lower_bound`` holds even when time runs out.
    """
    cfg = cfg or ExactConfig()
    heads = req.source_labels
    probe = _Search(req, "count", True, None)
    floor = sum(probe.count_floor.values())
    deadline = math.inf if cfg.time_budget is None else time.perf_counter() + cfg.time_budget
    relaxed = _count_milp(req, "any", cfg.time_budget)
    if relaxed is None:
        raise Infeasible("no placement satisfies the constraints")
    floor = max(floor, relaxed[2])
    if relaxed[3] and _flow_total(req) <= min((e.bandwidth for e in req.cluster.edges), default=math.inf):
        return InstanceCountResult(relaxed[0], relaxed[1], relaxed[1], True)
    restricted = _count_milp(req, "roomy", _remaining(deadline))
    if restricted is not None and restricted[1] <= floor:
        return InstanceCountResult(restricted[0], restricted[1], restricted[1], True)
    t0 = time.perf_counter()
    incumbent = math.inf
    if cfg.seed_with_heuristic:
        h = place(req)
        if h.status == "success":
            incumbent = h.report.processing_instances + 0.5
    if restricted is not None:
        incumbent = min(incumbent, restricted[1] + 0.5)
    budget = _remaining(deadline)
    best, actions, timed_out, _ = _search(req, replace(cfg, prune=True, time_budget=budget), "count", incumbent)
    if actions is None:
        if restricted is not None:
            return InstanceCountResult(restricted[0], restricted[1], floor if timed_out else restricted[1], not timed_out)
        if timed_out:
            raise SearchBudgetExceeded("no feasible placement found within the time budget")
        raise Infeasible("no placement satisfies the constraints")
    out = _outcome(req, actions, t0)
    counts = {lb: n for lb, n in out.report.instance_counts.items() if lb not in heads}
    total = sum(counts.values())
    return InstanceCountResult(counts, total, total if not timed_out else floor, not timed_out)


def _remaining(deadline: float) -> float | None:
    return None if deadline == math.inf else max(1.0, deadline - time.perf_counter())


def _count_milp(req: PlacementRequest, reach: str, time_limit: float):
    """(counts, total, lower bound, proven) of a count model, None if infeasible."""
    heads = req.source_labels
    m = build_milp(req, count=True, reach=reach)
    try:
        res = _run_milp(m, time_limit)
    except Infeasible:
        return None
    except SearchBudgetExceeded:
        return None if reach == "roomy" else ({}, math.inf, 0, False)
    counts: dict[str, int] = {}
    for j, name in enumerate(m.names):
        if name.startswith("y[") and res.x[j] > 0.5:
            label = name[2:].split(",")[0]
            if label not in heads:
                counts[label] = counts.get(label, 0) + 1
    total = sum(counts.values())
    proven = res.status == 0
    bound = total if proven else math.ceil(getattr(res, "mip_dual_bound", 0.0) - 1e-6)
    return dict(sorted(counts.items())), total, bound, proven


def optimality_gap(heuristic_cost: float, exact_cost: float, strict: bool = True) -> float:
    """Percentage by which the heuristic exceeds the exact cost, floored at 0.

    With ``strict`` a heuristic cost below the exact one raises
    :class:`InconsistentGap`; otherwise it is reported as a zero gap.
    """
    tol = 1e-9 * max(1.0, abs(exact_cost))
    if heuristic_cost < exact_cost - tol:
        if strict:
            raise InconsistentGap(f"heuristic cost {heuristic_cost} below exact cost {exact_cost}")
        return 0.0
    if exact_cost == 0:
        return 0.0 if heuristic_cost <= tol else math.inf
    return max(0.0, 100.0 * (heuristic_cost - exact_cost) / exact_cost)


# -- mixed-integer model -------------------------------------------------------


@dataclass
class MilpModel:
    names: list[str]
    c: np.ndarray
    rows: list[tuple[dict[int, float], float, float, str]]
    lb: np.ndarray
    ub: np.ndarray
    integrality: np.ndarray
    constant: float = 0.0

    def matrix(self):
        data, ri, ci = [], [], []
        for r, (coefs, _, _, _) in enumerate(self.rows):
            for j, v in coefs.items():
                ri.append(r)
                ci.append(j)
                data.append(v)
        return sparse.csr_array((data, (ri, ci)), shape=(len(self.rows), len(self.names)))


def _flow_total(req: PlacementRequest) -> float:
    """Most traffic any one link could ever be asked to carry."""
    streams = req.streams()
    if req.bandwidth_mode == "literal":
        return max((max(app.stream_rates()) for app, _ in streams), default=0.0)
    return sum(sum(app.stream_rates()) for app, _ in streams)


def _forbid_pair(rows: list, xa, xb, name: str) -> None:
    """Both ends of an unroutable flow cannot be chosen together."""
    row: dict[int, float] = {}
    rhs = 1.0
    for ind in (xa, xb):
        if isinstance(ind, int):
            row[ind] = row.get(ind, 0.0) + 1.0
        else:
            rhs -= ind
    if row:
        rows.append((row, -np.inf, rhs, name))
    elif rhs < 0:
        rows.append(({}, -np.inf, rhs, name))


def build_milp(req: PlacementRequest, count: bool = False, reach: str | None = None) -> MilpModel:
    """Binary model of the search space explored by :func:`solve_exact`.

    Variables: ``y`` (type hosted on node), ``x`` (stream position served on
    node), ``r`` (route chosen for a flow), ``z`` (stream data on a route,
    continuous) and ``c`` (node hosts at least i instances).

    With ``count`` the objective is the number of processing instances.
    ``reach`` drops route variables for a reachability check: ``"any"``
    ignores bandwidth (a relaxation), ``"roomy"`` admits only routes whose
    links can carry every flow at once (a restriction).
    """
    if reach not in (None, "any", "roomy"):
        raise ValueError(f"unknown reach mode {reach!r}")
    st = PlacementState(req)
    g = req.cluster
    lams = req.weights.as_tuple()
    names: list[str] = []
    cost: list[float] = []
    lo: list[float] = []
    hi: list[float] = []
    integ: list[int] = []
    rows: list[tuple[dict[int, float], float, float, str]] = []

    def var(name, c=0.0, lower=0.0, upper=1.0, integer=True):
        names.append(name)
        cost.append(c)
        lo.append(lower)
        hi.append(upper)
        integ.append(1 if integer else 0)
        return len(names) - 1

    types = st.types
    heads = req.source_labels
    y = {}
    for label in types:
        for v in g.nodes:
            upper = 1.0
            lower = 0.0
            if label in heads:
                is_src = v.id in req.sources and any(
                    app.labels[0] == label for app in req.apps
                )
                lower = upper = 1.0 if is_src else 0.0
            elif v.is_rsu and not req.allow_rsu_hosting:
                upper = 0.0
            c = (0.0 if label in heads else 1.0) if count else lams[2] * st.new_node_cost(v.id, label)
            if upper == 0.0 or not math.isfinite(c):
                # an impossible host is excluded by the resource rows anyway
                c = 0.0
            y[label, v.id] = var(f"y[{label},{v.id}]", c, lower, upper)
    streams = req.streams()
    x = {}
    for si, (app, src) in enumerate(streams):
        for q in range(1, len(app)):
            row = {}
            for v in g.node_ids:
                x[si, q, v] = var(f"x[{si},{q},{v}]")
                row[x[si, q, v]] = 1.0
                rows.append(({x[si, q, v]: 1.0, y[app.labels[q], v]: -1.0}, -np.inf, 0.0, f"host[{si},{q},{v}]"))
            rows.append((row, 1.0, 1.0, f"assign[{si},{q}]"))

    def at(si, q, v):
        """Indicator (var index or constant) that stream si's position q sits on v."""
        app, src = streams[si]
        if q == 0:
            return 1.0 if v == src else 0.0
        if q == len(app):
            return 1.0 if v == req.control_node else 0.0
        return x[si, q, v]

    r = {}
    edge_rows: dict[tuple[str, str], dict[int, float]] = {}
    total_flow = _flow_total(req)

    def reachable(paths) -> bool:
        if reach == "roomy":
            return any(all(g.edge(*e).bandwidth >= total_flow for e in p.edges) for p in paths)
        return bool(paths)
    for si, (app, src) in enumerate(streams):
        rates = app.stream_rates()
        for q in range(1, len(app) + 1):
            rate = rates[q - 1]
            l_from = app.labels[q - 1]
            l_to = app.labels[q] if q < len(app) else CONTROL.label
            starts = [src] if q == 1 else list(g.node_ids)
            ends = [req.control_node] if q == len(app) else list(g.node_ids)
            for a in starts:
                for b in ends:
                    paths = st.paths(a, b)
                    if reach is not None:
                        if not reachable(paths):
                            _forbid_pair(rows, at(si, q - 1, a), at(si, q, b), f"reach[{si},{q},{a},{b}]")
                        continue
                    if not paths:
                        _forbid_pair(rows, at(si, q - 1, a), at(si, q, b), f"reach[{si},{q},{a},{b}]")
                        continue
                    key = (l_from, a, l_to, b)
                    if key not in r:
                        r[key] = [
                            var(f"r[{l_from},{a},{l_to},{b},{i}]", 0.0 if count else lams[0] * p.hop_count)
                            for i, p in enumerate(paths)
                        ]
                        rows.append(({j: 1.0 for j in r[key]}, -np.inf, 1.0, f"oneroute[{l_from},{a},{l_to},{b}]"))
                    xa, xb = at(si, q - 1, a), at(si, q, b)
                    if xa == 0.0 or xb == 0.0:
                        continue
                    # the flow exists whenever both ends are used by this stream
                    row = {j: 1.0 for j in r[key]}
                    rhs = -1.0
                    for ind in (xa, xb):
                        if isinstance(ind, int):
                            row[ind] = row.get(ind, 0.0) - 1.0
                        else:
                            rhs += ind
                    rows.append((row, rhs, np.inf, f"route[{si},{q},{a},{b}]"))
                    for i, p in enumerate(paths):
                        zc = 0.0 if count else lams[1] * flow_link_cost(rate, p)
                        z = var(f"z[{si},{q},{a},{b},{i}]", zc, 0.0, 1.0, False)
                        zrow = {z: 1.0, r[key][i]: -1.0}
                        zrhs = -2.0
                        for ind in (xa, xb):
                            if isinstance(ind, int):
                                zrow[ind] = zrow.get(ind, 0.0) - 1.0
                            else:
                                zrhs += ind
                        rows.append((zrow, zrhs, np.inf, f"use[{si},{q},{a},{b},{i}]"))
                        for e in p.edges:
                            edge_rows.setdefault(e, {})[z] = rate
    if req.bandwidth_mode == "aggregate":
        for e, row in sorted(edge_rows.items()):
            rows.append((row, -np.inf, g.edge(*e).bandwidth, f"bw[{e[0]},{e[1]}]"))
    else:
        for e, row in sorted(edge_rows.items()):
            for j, rate in row.items():
                rows.append(({j: rate}, -np.inf, g.edge(*e).bandwidth, f"bw[{e[0]},{e[1]},{names[j]}]"))
    for label, limit in req.limits.items():
        if label in heads:
            continue
        rows.append(({y[label, v]: 1.0 for v in g.node_ids}, -np.inf, float(limit), f"limit[{label}]"))
    for v in g.nodes:
        for k in RESOURCE_KINDS:
            row = {y[label, v.id]: types[label].demands[k] for label in types if types[label].demands[k] > 0}
            if row:
                rows.append((row, -np.inf, v.capacities[k], f"res[{v.id},{k}]"))
    # processing share: cpu split evenly among the instances on a node
    for v in g.nodes:
        kmax = len(types)
        cvars = [var(f"c[{v.id},{i}]") for i in range(1, kmax + 1)]
        row = {cv: 1.0 for cv in cvars}
        for label in types:
            row[y[label, v.id]] = -1.0
        rows.append((row, 0.0, 0.0, f"count[{v.id}]"))
        for a, b in zip(cvars, cvars[1:]):
            rows.append(({a: 1.0, b: -1.0}, 0.0, np.inf, f"order[{v.id}]"))
        for label, t in types.items():
            if t.cpu_per_kbps <= 0:
                continue
            load = {}
            total = 0.0
            for si, (app, src) in enumerate(streams):
                rates = app.stream_rates()
                for q in range(1, len(app)):
                    if app.labels[q] == label:
                        j = x[si, q, v.id]
                        load[j] = load.get(j, 0.0) + t.cpu_per_kbps * rates[q - 1]
                        total += t.cpu_per_kbps * rates[q - 1]
            if not load:
                continue
            for i, cv in enumerate(cvars, start=1):
                big = total
                row = dict(load)
                row[cv] = big
                rows.append((row, -np.inf, v.capacities["cpu"] / i + big, f"share[{v.id},{label},{i}]"))
    return MilpModel(names, np.array(cost), rows, np.array(lo), np.array(hi), np.array(integ))


def _run_milp(m: MilpModel, time_limit: float | None):
    lo = np.array([row[1] for row in m.rows])
    hi = np.array([row[2] for row in m.rows])
    opts = {} if time_limit is None else {"time_limit": time_limit}
    res = milp(
        m.c,
        constraints=LinearConstraint(m.matrix(), lo, hi),
        integrality=m.integrality,
        bounds=Bounds(m.lb, m.ub),
        options=opts,
    )
    if res.status == 2:
        raise Infeasible("model is infeasible")
    if res.x is None:
        raise SearchBudgetExceeded(res.message)
    return res


def solve_milp(req: PlacementRequest, time_limit: float | None = 60.0) -> float:
    """Optimal objective of :func:`build_milp` via scipy's HiGHS interface."""
    m = build_milp(req)
    return float(_run_milp(m, time_limit).fun) + m.constant


def _lp_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.]", "_", name)


def _lp_terms(coefs: dict[int, float], names: list[str]) -> str:
    parts = []
    for j, v in sorted(coefs.items()):
        if v == 0:
            continue
        sign = "-" if v < 0 else "+"
        parts.append(f"{sign} {abs(v):.12g} {_lp_name(names[j])}")
    text = " ".join(parts) or "0"
    return text[2:] if text.startswith("+ ") else text


def export_lp(req: PlacementRequest, path=None) -> str:
    """The model of :func:`build_milp` in CPLEX LP format."""
    m = build_milp(req)
    lines = ["\\ chain placement model", "Minimize", " obj: " + _lp_terms({j: c for j, c in enumerate(m.c)}, m.names)]
    lines.append("Subject To")
    for coefs, lo, hi, name in m.rows:
        terms = _lp_terms(coefs, m.names)
        n = _lp_name(name)
        if lo == hi:
            lines.append(f" {n}: {terms} = {lo:.12g}")
        else:
            if np.isfinite(lo):
                lines.append(f" {n}_lo: {terms} >= {lo:.12g}")
            if np.isfinite(hi):
                lines.append(f" {n}_hi: {terms} <= {hi:.12g}")
    lines.append("Bounds")
    for j, name in enumerate(m.names):
        lines.append(f" {m.lb[j]:.12g} <= {_lp_name(name)} <= {m.ub[j]:.12g}")
    lines.append("Binaries")
    lines.extend(" " + _lp_name(n) for j, n in enumerate(m.names) if m.integrality[j])
    lines.append("End")
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text
