"""Mobility-aware service-chain scaling and placement for vehicle clusters."""

__version__ = "0.1.0"

from .community import louvain, girvan_newman, modularity, resilience_score, select_cluster
from .exact import ExactConfig, min_processing_instances, optimality_gap, solve_exact
from .feasibility import ObjectiveWeights, Placement, all_violations, total_objective
from .graph import ClusterEdge, ClusterGraph, GraphPath, VehicleNode, betweenness_centrality, enumerate_paths
from .mobility import calibrate, node_ccp, link_joint_ccp, build_cluster_graph
from .placer import PlacementRequest, first_fit, place, scaled_instance_count
from .service import TaskType, TypeGraph, builtin_profiles, scale_minimum

__all__ = [
    "ClusterEdge",
    "ClusterGraph",
    "ExactConfig",
    "GraphPath",
    "ObjectiveWeights",
    "Placement",
    "PlacementRequest",
    "TaskType",
    "TypeGraph",
    "VehicleNode",
    "all_violations",
    "betweenness_centrality",
    "build_cluster_graph",
    "builtin_profiles",
    "calibrate",
    "enumerate_paths",
    "first_fit",
    "girvan_newman",
    "link_joint_ccp",
    "louvain",
    "min_processing_instances",
    "modularity",
    "node_ccp",
    "optimality_gap",
    "place",
    "resilience_score",
    "scale_minimum",
    "scaled_instance_count",
    "select_cluster",
    "solve_exact",
    "total_objective",
]
