"""Cluster survival and Louvain vs Girvan-Newman resilience over 20 seeds."""

import numpy as np

from vfcplace.experiment import reference_pipeline, resilience_comparison
from vfcplace.sim import SimConfig, survivor_schedule

pipe = reference_pipeline()
m = pipe.scenario.matrices()
final = [len(survivor_schedule(pipe.selected.subgraph, SimConfig(seed=s), m)[-1]) for s in range(20)]
print(f"{len(pipe.selected.members)} members, mean survivors at horizon {np.mean(final):.2f}")
for e in resilience_comparison(seeds=range(20)):
    print(f"{e.method:14s} size {e.size}: mean resilience {e.mean_resilience:.3f}, wins {e.wins}/{e.runs}")
