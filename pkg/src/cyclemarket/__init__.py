"""Cycle-aware electricity market clearing with Rainflow storage degradation."""
from ._kernels import BACKEND
from .dispatch import (DispatchSolution, Instance, brute_force_oracle, cycle_aware_clearing,
                       gcd_clearing, prosumer_clearing, simplified_planner, social_planner)
from .equilibrium import (alignment_condition, best_response_check, prosumer_bids,
                          prosumer_equilibrium, prosumer_matches_planner, truthful_bids)
from .qp import QuadraticProgram, solve as solve_qp
from .rainflow import count_cycles, depths_from_rates, rate_to_depth_operator
from .scenario import emit_reports, load_config, load_demand, run_scenario, run_sweep
from .settlement import MarketOutcome, compare, settle
from .storage import GeneratorParams, StorageParams, degradation_cost

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DispatchSolution", "GeneratorParams", "Instance", "MarketOutcome",
    "QuadraticProgram", "StorageParams", "alignment_condition", "best_response_check",
    "brute_force_oracle", "compare", "count_cycles", "cycle_aware_clearing",
    "degradation_cost", "depths_from_rates", "emit_reports", "gcd_clearing", "load_config",
    "load_demand", "prosumer_bids", "prosumer_clearing", "prosumer_equilibrium",
    "prosumer_matches_planner", "rate_to_depth_operator", "run_scenario", "run_sweep",
    "settle", "simplified_planner", "social_planner", "solve_qp", "truthful_bids",
]
