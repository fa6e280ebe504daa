"""Dynamic risk measures from backward equations, with horizon-risk diagnostics."""

from .core import (Claim, Constant, Custom, Driver, Entropic, Family, Linear, RiskQuery, RiskSurface,
                   TimeGrid, VolterraLinear, VolterraQuadratic, claim_eval, conjugate, eval_driver,
                   quadratic_form_driver)
from .diagnostics import (ConsistencyReport, GammaReport, check_acceptance_inclusion,
                          check_horizon_comparison, check_penalty_relations, check_structure,
                          check_time_consistency, gamma_surface, recover_driver)
from .duality import MeasureSpec, build_density, build_premium_measure, closed_form, penalty_mc
from .errors import (CapacityError, ConfigError, HorizonRiskError, InvalidArgumentError, NumericalError,
                     PositivityError, UnsupportedError)
from .kernels import BACKEND
from .mc import MCBackend, PathEnsemble, SolverConfig, mc_solve, mc_solve_bsde, mc_solve_bsvie, simulate_paths
from .tree import TreeMeasure, TreeModel, TreeSolution, tree_dual_sup, tree_pasting, tree_penalty, tree_solve

__version__ = "0.1.0"

__all__ = [
    "Claim", "Constant", "Custom", "Driver", "Entropic", "Family", "Linear", "RiskQuery",
    "RiskSurface", "TimeGrid", "VolterraLinear", "VolterraQuadratic", "claim_eval", "conjugate",
    "eval_driver", "quadratic_form_driver", "ConsistencyReport", "GammaReport",
    "check_acceptance_inclusion", "check_horizon_comparison", "check_penalty_relations",
    "check_structure", "check_time_consistency", "gamma_surface", "recover_driver", "MeasureSpec",
    "build_density", "build_premium_measure", "closed_form", "penalty_mc", "CapacityError",
    "ConfigError", "HorizonRiskError", "InvalidArgumentError", "NumericalError", "PositivityError",
    "UnsupportedError", "BACKEND", "MCBackend", "PathEnsemble", "SolverConfig", "mc_solve",
    "mc_solve_bsde", "mc_solve_bsvie", "simulate_paths", "TreeMeasure", "TreeModel",
    "TreeSolution", "tree_dual_sup", "tree_pasting", "tree_penalty", "tree_solve",
]
