"""Latency-aware depth compression: block tables, exact DP planners and an exact conv merge engine."""

from .dp import (
    BaseSolution,
    ExtendedSolution,
    ExtImportanceDP,
    LatencyDP,
    extended_importance_of,
    importance_of,
    merge_latency_of,
    optimal_importance,
    optimal_latency,
    solve_base,
    solve_base_state,
    solve_extended,
    solve_extended_state,
)
from .errors import DepthMergeError
from .network import NetworkSpec, load_network, mobilenet_v2, validate_network
from .oracle import brute_force_base, brute_force_extended
from .plan import Plan, load_plan, save_plan
from .tables import CostTable, ImportanceTable, discretize

__all__ = [
    "BaseSolution",
    "CostTable",
    "DepthMergeError",
    "ExtImportanceDP",
    "ExtendedSolution",
    "ImportanceTable",
    "LatencyDP",
    "NetworkSpec",
    "Plan",
    "brute_force_base",
    "brute_force_extended",
    "discretize",
    "extended_importance_of",
    "importance_of",
    "load_network",
    "load_plan",
    "merge_latency_of",
    "mobilenet_v2",
    "optimal_importance",
    "optimal_latency",
    "save_plan",
    "solve_base",
    "solve_base_state",
    "solve_extended",
    "solve_extended_state",
    "validate_network",
]
