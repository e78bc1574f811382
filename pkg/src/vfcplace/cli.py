"""Command-line entry point.

Exit codes: 0 success, 2 bad input, 3 instance over the exact solver's
limits, 4 no feasible placement.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .community import select_cluster
from .errors import Infeasible, InstanceTooLarge, NoSources, SearchBudgetExceeded, VfcError
from .exact import ExactConfig, solve_exact
from .experiment import (
    COMMUNITY_SIZES,
    SIM_SOURCES,
    ExperimentPlan,
    placement_cluster,
    reference_pipeline,
    resilience_comparison,
    rows_to_csv,
    run_experiment,
    service_time_table,
    simulation_pair,
)
from .feasibility import ObjectiveWeights, Placement
from .graph import ClusterGraph
from .mobility import SegmentRegistry, calibrate, matrices_to_json, read_trace_csv
from .placer import PlacementRequest, first_fit, pick_sources, place
from .scenario import ScenarioSpec, generate, reference_scenario, sized_variant, uplink_variant
from .service import ApplicationProfile, InstanceGraph, profile_by_name
from .sim import SimConfig, run as run_sim, survivor_schedule

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_LIMITS = 3
EXIT_INFEASIBLE = 4

SEED_ENV = "VFCPLACE_SEED"


class InputError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _write(path: str | Path, text: str) -> None:
    p = Path(path)
    if p.parent and not p.parent.exists():
        p.parent.mkdir(parents=True)
    p.write_text(text, encoding="utf-8")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _read_json(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def _int_list(text: str) -> tuple[int, ...]:
    """``"1-7"`` or ``"1,2,5"``."""
    try:
        if "-" in text and "," not in text:
            lo, hi = (int(x) for x in text.split("-"))
            return tuple(range(lo, hi + 1))
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range like 1-7 or a list like 1,2,3, got {text!r}") from None


def _weights(text) -> ObjectiveWeights:
    if isinstance(text, ObjectiveWeights):
        return text
    parts = text if isinstance(text, (list, tuple)) else str(text).split(",")
    try:
        vals = [float(x) for x in parts]
    except ValueError:
        raise InputError(f"weights must be three numbers, got {text!r}") from None
    if len(vals) != 3:
        raise InputError(f"weights must be three numbers, got {text!r}")
    try:
        return ObjectiveWeights(*vals)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _load_graph(path: str) -> ClusterGraph:
    try:
        return ClusterGraph.from_dict(_read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: not a cluster graph ({exc})") from None


def _spec(args) -> ScenarioSpec:
    if getattr(args, "spec", None):
        spec = ScenarioSpec.from_dict(_read_json(args.spec))
    else:
        spec = reference_scenario()
    if getattr(args, "nodes", None):
        sized = sized_variant(args.nodes, spec.seed)
        spec = replace(spec, n_vehicles=sized.n_vehicles, n_core=sized.n_core)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    return spec


# -- commands ------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    registry = SegmentRegistry.from_dict(_read_json(args.registry))
    try:
        records = read_trace_csv(args.traces, lenient=args.lenient)
    except FileNotFoundError:
        raise InputError(f"no such file: {args.traces}") from None
    matrices = calibrate(records, registry)
    _write(args.out, matrices_to_json(matrices) + "\n")
    print(f"calibrated {len(matrices)} vehicles -> {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    spec = _spec(args)
    sc = generate(spec)
    out = Path(args.out_dir)
    _write(out / "spec.json", _dump(spec.to_dict()))
    _write(out / "traces.csv", sc.trace_csv())
    _write(out / "registry.json", sc.registry_json() + "\n")
    _write(out / "vehicles.json", sc.vehicles_json() + "\n")
    _write(out / "connectivity.json", sc.connectivity_json() + "\n")
    _write(out / "graph.json", sc.graph().dumps() + "\n")
    print(f"scenario seed {spec.seed}: {len(sc.vehicles)} nodes, {len(sc.traces)} transitions -> {out}")
    return EXIT_OK


def cmd_select(args) -> int:
    g = _load_graph(args.graph)
    sel = select_cluster(g, args.method, seed=args.seed or 0, target_communities=args.communities)
    _write(args.out, _dump(sel.to_dict()))
    print(f"{sel.method}: {len(sel.members)} members, control node {sel.control_node}, modularity {sel.modularity:.6f}")
    return EXIT_OK


def _app(name: str, detector: str):
    if name.endswith(".json"):
        try:
            return ApplicationProfile.from_dict(_read_json(name)).type_graph
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{name}: not an application profile ({exc})") from None
    try:
        return profile_by_name(name, detector).type_graph
    except KeyError:
        raise InputError(f"unknown application {name!r}") from None


def cmd_place(args) -> int:
    g = _load_graph(args.graph)
    apps = [_app(a, args.detector) for a in args.apps]
    sel = select_cluster(g, args.method_detect)
    if args.cluster_nodes:
        sel = placement_cluster(sel, args.cluster_nodes)
    sources = pick_sources(sel.subgraph, args.sources, exclude=(sel.control_node,))
    req = PlacementRequest(
        sel.subgraph, sel.control_node, tuple(apps), sources, weights=_weights(args.weights), max_hops=args.max_hops
    )
    proven = None
    if args.method == "heuristic":
        out = place(req)
    elif args.method == "firstfit":
        out = first_fit(req)
    else:
        out, proven = solve_exact(req, ExactConfig(time_budget=args.time_budget))
    doc = out.to_dict(timing=args.timing)
    doc["decisions"] = list(out.decisions)
    doc["request"] = {
        "method": args.method,
        "apps": [a.name for a in apps],
        "sources": list(sources),
        "control_node": sel.control_node,
        "cluster": list(sel.members),
        "weights": list(req.weights.as_tuple()),
        "max_hops": req.max_hops,
    }
    if proven is not None:
        doc["proven_optimal"] = proven
    _write(args.out, _dump(doc))
    c = out.report.costs
    print(
        f"{out.status}: node_cost={c.node_cost:.6f} link_cost={c.link_cost:.6f} "
        f"hop_count={c.hop_count:g} total_objective={c.total_objective:.6f}"
    )
    return EXIT_INFEASIBLE if out.status == "failed" else EXIT_OK


def cmd_experiment(args) -> int:
    plan = ExperimentPlan(
        scenario=_spec(args),
        sweep=args.sweep,
        methods=tuple(args.methods.split(",") if isinstance(args.methods, str) else args.methods),
        seeds=args.seeds or (_spec(args).seed,),
        chains=args.chains,
        detector=args.detector,
        max_hops=args.max_hops,
        cluster_nodes=args.cluster_nodes,
        exact=ExactConfig(time_budget=args.time_budget),
        timing=args.timing,
        workers=args.workers,
    )
    text = rows_to_csv(run_experiment(plan))
    if args.out:
        _write(args.out, text)
        print(f"{text.count(chr(10)) - 1} rows -> {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _simulate_placement(args, cfg: SimConfig) -> int:
    g = _load_graph(args.graph)
    sel = select_cluster(g, "louvain")
    doc = _read_json(args.placement)
    try:
        pl = Placement.from_dict(doc["placement"], g)
        ig = InstanceGraph.from_dict(doc["instance_graph"])
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{args.placement}: not a placement file ({exc})") from None
    out = Path(args.out_dir)
    summary = []
    for seed in range(cfg.seed, cfg.seed + args.runs):
        tr = run_sim(sel, pl, ig, replace(cfg, seed=seed))
        if seed == cfg.seed:
            _write(out / "trace.csv", tr.to_csv())
        summary.append(tr.summary())
    _write(out / "summary.json", _dump(summary))
    print(f"{args.runs} runs -> {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = SimConfig(horizon=args.horizon, step=args.step, seed=args.seed or 0)
    if args.placement or args.graph:
        if not (args.placement and args.graph):
            raise InputError("--graph and --placement go together")
        return _simulate_placement(args, cfg)
    spec = _spec(args)
    out = Path(args.out_dir)
    seeds = range(cfg.seed, cfg.seed + args.runs)
    pipe = reference_pipeline(spec)
    m = pipe.scenario.matrices()
    surv_rows = ["seed,survivors"]
    for seed in seeds:
        final = survivor_schedule(pipe.selected.subgraph, replace(cfg, seed=seed), m)[-1]
        surv_rows.append(f"{seed},{len(final)}")
    _write(out / "survivors.csv", "\n".join(surv_rows) + "\n")
    service = {}
    for label, constrained in (("constrained", True), ("ample", False)):
        variant = uplink_variant(spec, constrained)
        table = service_time_table(variant, args.chains, seeds, n_sources=args.sources, cfg=cfg)
        service[label] = {
            mode: {str(n): s.to_dict() for n, s in per.items()} for mode, per in table.items()
        }
        for chain in args.chains:
            vfc, edge = simulation_pair(variant, chain, args.sources, [cfg.seed], cfg=cfg)
            _write(out / f"trace_{label}_vfc_chain{chain}.csv", vfc[0].to_csv())
            _write(out / f"trace_{label}_edge_chain{chain}.csv", edge[0].to_csv())
    _write(out / "service_times.json", _dump(service))
    entries = resilience_comparison(COMMUNITY_SIZES, seeds, spec.seed, cfg)
    _write(out / "resilience.json", _dump([e.to_dict() for e in entries]))
    print(f"simulated {args.runs} seeds -> {out}")
    return EXIT_OK


def _num(v: str) -> float | None:
    return float(v) if v not in ("", "inf") else (float("inf") if v == "inf" else None)


def cmd_report(args) -> int:
    try:
        with open(args.results, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except FileNotFoundError:
        raise InputError(f"no such file: {args.results}") from None
    need = {"sources", "method", "chain_len", "total", "processing_instances", "gap_pct"}
    if rows and not need <= set(rows[0]):
        raise InputError(f"{args.results}: missing columns {sorted(need - set(rows[0]))}")
    table: dict[tuple[int, int], dict[str, dict]] = {}
    for r in rows:
        table.setdefault((int(r["chain_len"]), int(r["sources"])), {})[r["method"]] = r
    lines = ["chain sources heuristic firstfit exact gap_pct total_gap_pct h_instances"]
    for (chain, n), by in sorted(table.items()):
        def cell(method, col="total"):
            v = by.get(method, {}).get(col, "")
            return v if v != "" else "-"

        lines.append(
            f"{chain} {n} {cell('heuristic')} {cell('firstfit')} {cell('exact')} "
            f"{cell('heuristic', 'gap_pct')} {cell('heuristic', 'total_gap_pct')} {cell('heuristic', 'processing_instances')}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    p = argparse.ArgumentParser(prog="vfcplace", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="JSON file of option defaults for the command (flags win)")
    sub = p.add_subparsers(dest="command", required=True)
    cmds = {}

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--seed", type=int, default=None, help=f"random seed (default ${SEED_ENV} or 0)")
        cmds[name] = sp
        return sp

    sp = add("calibrate", cmd_calibrate, "estimate per-vehicle transition matrices from a trace CSV")
    sp.add_argument("--traces", required=True, help="trace CSV: vehicle_id,timestamp,from_segment,to_segment")
    sp.add_argument("--registry", required=True, help="segment registry JSON")
    sp.add_argument("--out", required=True, help="matrices JSON to write")
    sp.add_argument("--lenient", action="store_true", help="skip malformed lines instead of failing")

    sp = add("generate", cmd_generate, "write a synthetic scenario (traces, registry, vehicles, graph)")
    sp.add_argument("--spec", help="scenario spec JSON (default: bundled reference)")
    sp.add_argument("--nodes", type=int, help="resize the population to this many graph nodes")
    sp.add_argument("--out-dir", required=True)

    sp = add("select", cmd_select, "detect communities and pick the service cluster")
    sp.add_argument("--graph", required=True, help="cluster graph JSON")
    sp.add_argument("--method", choices=("louvain", "girvan_newman"), default="louvain")
    sp.add_argument("--communities", type=int, default=2, help="Girvan-Newman target community count")
    sp.add_argument("--out", required=True)

    sp = add("place", cmd_place, "place application chains on the selected cluster")
    sp.add_argument("--graph", required=True, help="cluster graph JSON")
    sp.add_argument("--apps", nargs="+", default=["app1"], help="built-in app names or profile JSON files")
    sp.add_argument("--sources", type=int, default=1)
    sp.add_argument("--method", choices=("heuristic", "firstfit", "exact"), default="heuristic")
    sp.add_argument("--detect", dest="method_detect", choices=("louvain", "girvan_newman"), default="louvain")
    sp.add_argument("--weights", default="0.3333333333333333,0.3333333333333333,0.3333333333333334")
    sp.add_argument("--max-hops", type=int, default=3)
    sp.add_argument("--cluster-nodes", type=int, default=0, help="trim the cluster to this many nodes (0: keep all)")
    sp.add_argument("--detector", choices=("full", "tiny"), default="full")
    sp.add_argument("--time-budget", type=float, default=120.0)
    sp.add_argument("--timing", action="store_true", help="record wall time in the output")
    sp.add_argument("--out", required=True)

    sp = add("experiment", cmd_experiment, "sweep sources and methods on a scenario, emit CSV")
    sp.add_argument("--spec", help="scenario spec JSON (default: bundled reference)")
    sp.add_argument("--nodes", type=int)
    sp.add_argument("--sweep", type=_int_list, default=(1, 2, 3, 4, 5, 6, 7))
    sp.add_argument("--methods", default="heuristic,firstfit,exact")
    sp.add_argument("--chains", type=_int_list, default=(3, 4))
    sp.add_argument("--seeds", type=_int_list, default=None, help="scenario seeds (default: --seed)")
    sp.add_argument("--detector", choices=("full", "tiny"), default="full")
    sp.add_argument("--max-hops", type=int, default=3)
    sp.add_argument("--cluster-nodes", type=int, default=12)
    sp.add_argument("--time-budget", type=float, default=120.0, help="exact solver budget per point (s)")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--no-timing", dest="timing", action="store_false", help="leave runtime_s empty")
    sp.add_argument("--out")

    sp = add("simulate", cmd_simulate, "simulate cluster break-up and service time")
    sp.add_argument("--spec", help="scenario spec JSON (default: bundled reference)")
    sp.add_argument("--nodes", type=int)
    sp.add_argument("--graph", help="cluster graph JSON (with --placement: simulate that placement)")
    sp.add_argument("--placement", help="placement JSON written by 'place'")
    sp.add_argument("--runs", type=int, default=100)
    sp.add_argument("--sources", type=int, default=SIM_SOURCES)
    sp.add_argument("--chains", type=_int_list, default=(3, 4))
    sp.add_argument("--horizon", type=float, default=600.0)
    sp.add_argument("--step", type=float, default=60.0)
    sp.add_argument("--out-dir", required=True)

    sp = add("report", cmd_report, "summarise an experiment CSV")
    sp.add_argument("--results", required=True)
    sp.add_argument("--out")
    return p, cmds


def _apply_config(argv: list[str], cmds: dict[str, argparse.ArgumentParser]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("command", nargs="?")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = _read_json(known.config)
    if not isinstance(cfg, dict):
        raise InputError(f"{known.config}: expected a JSON object")
    sp = cmds.get(known.command or "")
    if sp is None:
        return
    dests = {a.dest for a in sp._actions}
    unknown = sorted(set(cfg) - dests)
    if unknown:
        raise InputError(f"{known.config}: unknown options for {known.command}: {unknown}")
    for a in sp._actions:
        if a.dest in cfg:
            a.required = False
    sp.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, cmds = build_parser()
    try:
        _apply_config(argv, cmds)
        args = parser.parse_args(argv)
        if args.seed is None:
            args.seed = default_seed()
        for name in ("sweep", "chains", "seeds"):
            v = getattr(args, name, None)
            if isinstance(v, str):
                setattr(args, name, _int_list(v))
            elif isinstance(v, list):
                setattr(args, name, tuple(v))
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0) if isinstance(exc.code, int) else EXIT_INPUT
    except InstanceTooLarge as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LIMITS
    except (Infeasible, NoSources, SearchBudgetExceeded) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (InputError, VfcError, ValueError, KeyError, argparse.ArgumentTypeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
