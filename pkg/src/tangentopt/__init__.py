"""Constrained minimisation by tangential gradient steps plus Newton restoration."""

__version__ = "0.1.0"

from .active_set import run_active_set
from .equality import run_equality
from .minimax import MinimaxProblem, run_minimax
from .model import Constraint, Problem, SolveResult, SolverConfig, Status, problem_from_dict

__all__ = [
    "Constraint",
    "MinimaxProblem",
    "Problem",
    "SolveResult",
    "SolverConfig",
    "Status",
    "problem_from_dict",
    "run_active_set",
    "run_equality",
    "run_minimax",
]
