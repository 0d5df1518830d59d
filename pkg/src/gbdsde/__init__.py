"""Numerical laboratory for backward doubly stochastic equations driven by finite-alphabet Lévy jumps."""

from .errors import LabError, PicardBudgetWarning
from .levy_teugels import LevyJumpSpec, TeugelsBasis, orthonormalize, power_moments, teugels_increments
from .path_engine import (PathBundle, ScenarioTree, TimeGrid, a_process, build_tree,
                          simulate_paths)
from .generator_kit import (GeneratorSpec, ProblemSpec, box_sampler, generator_catalog,
                            inf_convolution, terminal_catalog, validate_envelope, validate_growth)
from .bdsde_solver import (GridSolution, SchemeConfig, em_norm, residual, solve_bounding,
                           solve_lipschitz, solve_maximal, solve_minimal)
from .comparison_lab import (ComparisonReport, beta_quotients, counterexample, jump_condition,
                             run_comparison)

__version__ = "0.1.0"

__all__ = [
    "LabError", "PicardBudgetWarning",
    "LevyJumpSpec", "TeugelsBasis", "orthonormalize", "power_moments", "teugels_increments",
    "PathBundle", "ScenarioTree", "TimeGrid", "a_process", "build_tree", "simulate_paths",
    "GeneratorSpec", "ProblemSpec", "box_sampler", "generator_catalog", "inf_convolution",
    "terminal_catalog", "validate_envelope", "validate_growth",
    "GridSolution", "SchemeConfig", "em_norm", "residual", "solve_bounding", "solve_lipschitz",
    "solve_maximal", "solve_minimal",
    "ComparisonReport", "beta_quotients", "counterexample", "jump_condition", "run_comparison",
]
