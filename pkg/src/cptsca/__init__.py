"""Budget allocation across agents with prospect-theoretic utilities."""

from .baseline import OracleConfig, grid_search, multistart_local
from .dual import DualConfig, DualSubgradientSolver, dual_ascent
from .errors import CptScaError
from .scenario import (
    Agent,
    AllocationProblem,
    ScenarioSpec,
    generate_scenario,
    load_problem,
    objective,
    save_problem,
)
from .sca import ScaConfig, SolverConfig, sca_solve
from .surrogate import Case, SurrogateConfig, build_surrogate, select_case
from .utility import CptParams, Side, eval_derivative, eval_utility

__all__ = [
    "Agent", "AllocationProblem", "Case", "CptParams", "CptScaError", "DualConfig",
    "DualSubgradientSolver", "OracleConfig", "ScaConfig", "ScenarioSpec", "Side",
    "SolverConfig", "SurrogateConfig", "build_surrogate", "dual_ascent", "eval_derivative",
    "eval_utility", "generate_scenario", "grid_search", "load_problem", "multistart_local",
    "objective", "save_problem", "sca_solve", "select_case",
]
