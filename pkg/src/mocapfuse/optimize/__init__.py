from .lbfgs import LbfgsConfig, LbfgsResult, LbfgsState, LineSearchResult, lbfgs_minimize, strong_wolfe_search
from .trajectory import (
    InitialPositionResult,
    OptimizationReport,
    OptimizerConfig,
    TrajectoryProblem,
    TrajectoryResult,
    data_term,
    default_schedule,
    diff1,
    diff2,
    group_optimize,
    optimize_initial_position,
    optimize_initial_positions,
    optimize_trajectories,
    predicted_between_distances,
    trajectory_objective,
)

__all__ = [
    "InitialPositionResult",
    "LbfgsConfig",
    "LbfgsResult",
    "LbfgsState",
    "LineSearchResult",
    "OptimizationReport",
    "OptimizerConfig",
    "TrajectoryProblem",
    "TrajectoryResult",
    "data_term",
    "default_schedule",
    "diff1",
    "diff2",
    "group_optimize",
    "lbfgs_minimize",
    "optimize_initial_position",
    "optimize_initial_positions",
    "optimize_trajectories",
    "predicted_between_distances",
    "strong_wolfe_search",
    "trajectory_objective",
]
