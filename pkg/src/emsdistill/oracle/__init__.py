"""Perfect-foresight oracle: exact DP on a discretised SoE grid."""

from .dp import (BACKEND, BRUTE_FORCE_LIMIT, DEFAULT_GRID_POINTS, OracleConfig, Schedule, brute_force_schedule,
                 dp_backward_compiled, dp_backward_python, dp_optimal_schedule, grid_gap_bound, lower_bound_cost,
                 make_grid)

__all__ = ["BACKEND", "BRUTE_FORCE_LIMIT", "DEFAULT_GRID_POINTS", "OracleConfig", "Schedule",
           "brute_force_schedule", "dp_backward_compiled", "dp_backward_python", "dp_optimal_schedule",
           "grid_gap_bound", "lower_bound_cost", "make_grid"]
