"""Minimax problems ``min_x max_i f_i(x)`` via an epigraph variable.

The problem is lifted to ``min z`` subject to ``f_i(x) - z <= 0`` in
``n + 1`` variables and handed to the active-set solver. A ring topology over
the objectives becomes a ring over the lifted constraints.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .active_set import run_active_set
from .model import (
    Constraint,
    ConstraintKind,
    IterationRecord,
    Problem,
    ProblemError,
    SmoothFunction,
    SolveResult,
    SolverConfig,
    validate,
)

__all__ = [
    "MinimaxProblem",
    "MinimaxResult",
    "epigraph_reformulate",
    "initial_point",
    "run_minimax",
]


@dataclass(frozen=True)
class MinimaxProblem:
    n: int
    objectives: tuple[SmoothFunction, ...]
    ring: tuple[int, ...] | None = None
    constraints: tuple[Constraint, ...] = ()
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "objectives", tuple(self.objectives))
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.ring is not None:
            object.__setattr__(self, "ring", tuple(self.ring))
        if len(self.objectives) < 1:
            raise ProblemError("a minimax problem needs at least one objective", "objectives")

    @property
    def m(self) -> int:
        return len(self.objectives)


def _lift_objective(fun: SmoothFunction, n: int) -> SmoothFunction:
    def g(xz):
        val, grad = fun(xz[:n])
        out = np.empty(n + 1)
        out[:n] = grad
        out[n] = -1.0
        return float(val) - xz[n], out

    return g


def _lift_plain(fun: SmoothFunction, n: int) -> SmoothFunction:
    def g(xz):
        val, grad = fun(xz[:n])
        return float(val), np.append(np.asarray(grad, dtype=float), 0.0)

    return g


def _epigraph_objective(xz):
    grad = np.zeros(len(xz))
    grad[-1] = 1.0
    return float(xz[-1]), grad


def epigraph_reformulate(mp: MinimaxProblem) -> Problem:
    """``min z`` s.t. ``f_i(x) <= z``; ``z`` is the last coordinate.

    Constraint ``i < m`` is the lifted objective ``i``; pass-through
    constraints follow in their original order.
    """
    n = mp.n
    lifted = [
        Constraint(_lift_objective(f, n), ConstraintKind.INEQUALITY, label=f"f{i + 1}<=z")
        for i, f in enumerate(mp.objectives)
    ]
    for c in mp.constraints:
        if c.kind.is_box:
            lifted.append(c)
        else:
            lifted.append(Constraint(_lift_plain(c.fun, n), c.kind, label=c.label))
    return Problem(n + 1, _epigraph_objective, tuple(lifted), mp.ring, name="epigraph")


def initial_point(mp: MinimaxProblem, x0: Sequence[float]) -> np.ndarray:
    """``(x0, max_i f_i(x0))`` so that no lifted objective starts violated."""
    x0 = np.asarray(x0, dtype=float)
    z0 = max(float(f(x0)[0]) for f in mp.objectives)
    return np.append(x0, z0)


@dataclass
class MinimaxResult:
    solve: SolveResult
    x: np.ndarray
    z: float
    objective_values: np.ndarray
    active_objectives: tuple[int, ...]
    objective_multipliers: np.ndarray

    @property
    def status(self):
        return self.solve.status

    def to_dict(self) -> dict:
        d = self.solve.to_dict()
        d.update(
            x=[float(v) for v in self.x],
            z=float(self.z),
            objective_values=[float(v) for v in self.objective_values],
            max_objective=float(np.max(self.objective_values)),
            active_objectives=list(self.active_objectives),
            objective_multipliers=[float(v) for v in self.objective_multipliers],
        )
        return d


def run_minimax(
    mp: MinimaxProblem,
    x0: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
    callback: Callable[[IterationRecord], None] | None = None,
) -> MinimaxResult:
    p = epigraph_reformulate(mp)
    errors = validate(p)
    if errors:
        raise ProblemError(errors)
    res = run_active_set(p, initial_point(mp, x0), cfg, callback)
    x, z = res.x[: mp.n], float(res.x[mp.n])
    values = np.array([float(f(x)[0]) for f in mp.objectives])
    active = tuple(i for i in res.active if i < mp.m)
    return MinimaxResult(res, x, z, values, active, res.multipliers[: mp.m].copy())
