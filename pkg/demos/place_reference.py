"""Place both built-in chains on the reference cluster and compare the three placers."""

from vfcplace.exact import ExactConfig, solve_exact
from vfcplace.experiment import build_request, reference_pipeline
from vfcplace.placer import first_fit, place

pipe = reference_pipeline()
print(f"cluster: {len(pipe.placement.members)} nodes, control node {pipe.placement.control_node}")
for chain in (3, 4):
    req = build_request(pipe, 2, chain)
    ex, proven = solve_exact(req, ExactConfig(time_budget=60.0))
    for name, out in (("heuristic", place(req)), ("firstfit", first_fit(req)), ("exact", ex)):
        c = out.report.costs
        print(f"chain {chain} {name:9s} {out.status:8s} total={c.total_objective:.4f} link={c.link_cost:.4f} "
              f"instances={out.report.processing_instances}")
