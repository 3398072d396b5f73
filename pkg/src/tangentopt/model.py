"""Problem definitions, solver configuration, KKT residuals and iteration traces.

Every smooth function in this package follows one calling convention::

    fun(x) -> (value, gradient)

with ``x`` and ``gradient`` 1-D float arrays of the problem dimension.
Constraints are of the form ``g(x) == 0`` (equality) or ``g(x) <= 0``.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import expr

__all__ = [
    "SmoothFunction",
    "SolverError",
    "RankDeficient",
    "TooManyActive",
    "ProblemError",
    "ConstraintKind",
    "Constraint",
    "Problem",
    "DeactivationPolicy",
    "SolverConfig",
    "Status",
    "Event",
    "IterationRecord",
    "SolveResult",
    "kkt_residual",
    "validate",
    "problem_from_dict",
    "load_problem",
]

SmoothFunction = Callable[[np.ndarray], "tuple[float, np.ndarray]"]


class SolverError(RuntimeError):
    """Numerical failure inside a solver iteration."""


class RankDeficient(SolverError):
    """The active constraint gradients are (nearly) linearly dependent."""


class TooManyActive(SolverError):
    """More active constraints than variables."""


class ProblemError(ValueError):
    """A problem definition failed validation or could not be loaded.

    ``errors`` holds every violation found; ``path`` names the offending
    field of a problem file when known.
    """

    def __init__(self, errors: Sequence[str] | str, path: str | None = None):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        self.path = path
        prefix = f"{path}: " if path else ""
        super().__init__(prefix + "; ".join(self.errors))


class ConstraintKind(str, enum.Enum):
    EQUALITY = "eq"
    INEQUALITY = "ineq"
    BOX_LOWER = "lower"
    BOX_UPPER = "upper"

    @property
    def is_box(self) -> bool:
        return self in (ConstraintKind.BOX_LOWER, ConstraintKind.BOX_UPPER)


@dataclass(frozen=True)
class Constraint:
    """One scalar constraint.

    Box constraints carry a 0-based variable index and a bound; their function
    is ``bound - x[var]`` (lower) or ``x[var] - bound`` (upper).
    """

    fun: SmoothFunction | None
    kind: ConstraintKind = ConstraintKind.INEQUALITY
    var: int | None = None
    bound: float | None = None
    label: str = ""

    @classmethod
    def equality(cls, fun: SmoothFunction, label: str = "") -> "Constraint":
        return cls(fun, ConstraintKind.EQUALITY, label=label)

    @classmethod
    def inequality(cls, fun: SmoothFunction, label: str = "") -> "Constraint":
        return cls(fun, ConstraintKind.INEQUALITY, label=label)

    @classmethod
    def lower(cls, var: int, bound: float) -> "Constraint":
        return cls(None, ConstraintKind.BOX_LOWER, var, float(bound), f"x{var + 1}>={bound:g}")

    @classmethod
    def upper(cls, var: int, bound: float) -> "Constraint":
        return cls(None, ConstraintKind.BOX_UPPER, var, float(bound), f"x{var + 1}<={bound:g}")

    @property
    def sign(self) -> float:
        """Sign of the single nonzero gradient entry of a box constraint."""
        return -1.0 if self.kind is ConstraintKind.BOX_LOWER else 1.0

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        if self.kind.is_box:
            g = np.zeros(len(x))
            g[self.var] = self.sign
            return self.sign * (x[self.var] - self.bound), g
        val, grad = self.fun(x)
        return float(val), np.asarray(grad, dtype=float)


@dataclass(frozen=True)
class Problem:
    """``min f(x)`` subject to a list of constraints.

    ``ring`` optionally lists inequality-constraint indices in cyclic neighbour
    order; those constraints form an almost-continuum and are activated
    leader-first.
    """

    n: int
    objective: SmoothFunction
    constraints: tuple[Constraint, ...] = ()
    ring: tuple[int, ...] | None = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(self.constraints))
        if self.ring is not None:
            object.__setattr__(self, "ring", tuple(int(i) for i in self.ring))

    @property
    def m(self) -> int:
        return len(self.constraints)

    @property
    def equality_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.constraints) if c.kind is ConstraintKind.EQUALITY]

    @property
    def inequality_indices(self) -> list[int]:
        return [i for i, c in enumerate(self.constraints) if c.kind is not ConstraintKind.EQUALITY]

    @property
    def only_equalities(self) -> bool:
        return all(c.kind is ConstraintKind.EQUALITY for c in self.constraints)

    def f(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        val, grad = self.objective(x)
        return float(val), np.asarray(grad, dtype=float)

    def g(self, x: np.ndarray, indices: Iterable[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Constraint values and gradients (as rows) for ``indices``."""
        if indices is None:
            indices = range(self.m)
        indices = list(indices)
        vals = np.empty(len(indices))
        grads = np.empty((len(indices), self.n))
        for row, i in enumerate(indices):
            vals[row], grads[row] = self.constraints[i](x)
        return vals, grads


class DeactivationPolicy(str, enum.Enum):
    MOST_NEGATIVE = "most-negative"
    WARN_ON_MULTIPLE = "warn-on-multiple"


@dataclass(frozen=True)
class SolverConfig:
    eta: float = 0.1
    tol: float = 1e-10
    max_iter: int = 10000
    rho_min: float = 1e-12
    policy: DeactivationPolicy = DeactivationPolicy.MOST_NEGATIVE
    halve_eta: bool = False

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.rho_min > 0:
            raise ValueError("rho_min must be positive")
        object.__setattr__(self, "policy", DeactivationPolicy(self.policy))


class Status(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class Event:
    """Structured trace event: activate, deactivate, project, warn_too_fast, halve_eta."""

    kind: str
    index: int | None = None
    value: float | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"event": self.kind}
        if self.index is not None:
            d["index"] = self.index
        if self.value is not None:
            d["value"] = self.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Event":
        return cls(d["event"], d.get("index"), d.get("value"))


@dataclass
class IterationRecord:
    """State at the start of iteration ``k`` and the step taken from it."""

    k: int
    x: np.ndarray
    f: float
    constraint_values: np.ndarray
    active: tuple[int, ...]
    multipliers: np.ndarray  # aligned with ``active``
    step_norm: float
    eta: float
    events: list[Event] = field(default_factory=list)

    def __post_init__(self):
        self.active = tuple(int(i) for i in self.active)
        self.multipliers = np.asarray(self.multipliers, dtype=float).reshape(-1)
        if len(self.multipliers) != len(self.active):
            raise ValueError("one multiplier per active constraint expected")

    @property
    def active_norm(self) -> float:
        """Euclidean norm of the active constraint values."""
        if not self.active:
            return 0.0
        return float(np.linalg.norm(self.constraint_values[list(self.active)]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "k": self.k,
            "x": [float(v) for v in self.x],
            "f": float(self.f),
            "g": [float(v) for v in self.constraint_values],
            "active": list(self.active),
            "multipliers": [float(v) for v in self.multipliers],
            "step": float(self.step_norm),
            "eta": float(self.eta),
            "events": [e.to_dict() for e in self.events],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IterationRecord":
        return cls(
            k=int(d["k"]),
            x=np.asarray(d["x"], dtype=float),
            f=float(d["f"]),
            constraint_values=np.asarray(d["g"], dtype=float),
            active=tuple(d["active"]),
            multipliers=np.asarray(d["multipliers"], dtype=float),
            step_norm=float(d["step"]),
            eta=float(d["eta"]),
            events=[Event.from_dict(e) for e in d.get("events", [])],
        )


@dataclass
class SolveResult:
    x: np.ndarray
    status: Status
    multipliers: np.ndarray  # recovered lambda*, one entry per constraint, 0 when inactive
    active: tuple[int, ...]
    kkt_residual: float
    trace: list[IterationRecord]
    f: float = math.nan
    message: str = ""
    error: Exception | None = None

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def to_dict(self) -> dict[str, Any]:
        return {
            "status": self.status.value,
            "message": self.message,
            "iterations": self.iterations,
            "x": [float(v) for v in self.x],
            "f": float(self.f),
            "active": list(self.active),
            "multipliers": [float(v) for v in self.multipliers],
            "kkt_residual": float(self.kkt_residual),
        }


def kkt_residual(
    p: Problem,
    x: Sequence[float],
    active: Iterable[int],
    lam: Sequence[float],
) -> float:
    """First-order optimality residual at ``x`` for multipliers ``lam`` on ``active``.

    The maximum of the Lagrangian gradient (inf-norm), active constraint
    values, inactive constraint violations and negative inequality
    multipliers. Equality constraints are always counted as active (with a
    zero multiplier when not listed).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n,):
        raise ValueError(f"point has shape {x.shape}, problem dimension is {p.n}")
    active = list(active)
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if len(lam) != len(active):
        raise ValueError(f"{len(lam)} multipliers for {len(active)} active constraints")
    mult = dict(zip(active, lam))
    for i in p.equality_indices:
        mult.setdefault(i, 0.0)

    _, grad_f = p.f(x)
    lagr = grad_f.copy()
    worst = 0.0
    if p.m:
        vals, grads = p.g(x)
        for i, c in enumerate(p.constraints):
            if i in mult:
                lagr += mult[i] * grads[i]
                worst = max(worst, abs(vals[i]))
                if c.kind is not ConstraintKind.EQUALITY:
                    worst = max(worst, -mult[i])
            else:
                worst = max(worst, vals[i])
    return float(max(worst, np.max(np.abs(lagr)) if p.n else 0.0))


def validate(p: Problem) -> list[str]:
    """Return every structural problem found in ``p`` (empty when well-formed)."""
    errors = []
    if p.n < 1:
        errors.append("dimension n must be at least 1")
    n_eq = len(p.equality_indices)
    if n_eq >= p.n:
        errors.append(f"m<n violated: {n_eq} equality constraints for {p.n} variables")
    lower: dict[int, float] = {}
    upper: dict[int, float] = {}
    for i, c in enumerate(p.constraints):
        if c.kind.is_box:
            if c.var is None or not 0 <= c.var < p.n:
                errors.append(f"constraint {i}: box variable index {c.var} out of range")
                continue
            if c.bound is None or not math.isfinite(c.bound):
                errors.append(f"constraint {i}: box bound must be finite")
                continue
            table = lower if c.kind is ConstraintKind.BOX_LOWER else upper
            if c.var in table:
                errors.append(f"constraint {i}: duplicate {c.kind.value} bound on x{c.var + 1}")
            table[c.var] = c.bound
        elif c.fun is None:
            errors.append(f"constraint {i}: missing function")
    for var, a in lower.items():
        if var in upper and a > upper[var]:
            errors.append(f"box bounds on x{var + 1}: lower {a:g} > upper {upper[var]:g}")
    if p.ring is not None:
        ring = list(p.ring)
        if len(ring) < 2:
            errors.append("ring must contain at least 2 constraints")
        if len(set(ring)) != len(ring):
            errors.append("ring is not a cycle: repeated constraint index")
        for i in ring:
            if not 0 <= i < p.m:
                errors.append(f"ring index {i} out of range")
            elif p.constraints[i].kind is not ConstraintKind.INEQUALITY:
                errors.append(f"ring index {i} is not a general inequality constraint")
    return errors


# --- JSON problem files -----------------------------------------------------


def _parse_expr(text: Any, path: str, n: int) -> expr.Expression:
    if not isinstance(text, str):
        raise ProblemError("expected an expression string", path)
    try:
        e = expr.parse(text)
    except expr.ParseError as exc:
        raise ProblemError(str(exc), path) from exc
    if expr.max_index(e) > n:
        raise ProblemError(f"uses x{expr.max_index(e)} but n={n}", path)
    return e


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ProblemError("expected a finite number", path)
    return float(value)


def problem_from_dict(data: Any, objective_key: str = "objective") -> tuple[Problem, np.ndarray]:
    """Build a :class:`Problem` and its starting point from the JSON schema.

    ``box[*].var`` is 1-based (matching ``x1``); ``ring`` holds 0-based
    positions in ``constraints``. Box constraints are appended after the
    general constraints, lower before upper.
    """
    if not isinstance(data, dict):
        raise ProblemError("problem must be a JSON object", "$")
    n = data.get("n")
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ProblemError("expected a positive integer", "n")

    objective = None
    if objective_key is not None:
        objective = expr.as_function(_parse_expr(data.get(objective_key), objective_key, n))

    constraints = []
    raw = data.get("constraints", [])
    if not isinstance(raw, list):
        raise ProblemError("expected a list", "constraints")
    for i, c in enumerate(raw):
        path = f"constraints[{i}]"
        if not isinstance(c, dict):
            raise ProblemError("expected an object", path)
        e = _parse_expr(c.get("expr"), f"{path}.expr", n)
        kind = c.get("kind")
        if kind not in ("eq", "ineq"):
            raise ProblemError("kind must be 'eq' or 'ineq'", f"{path}.kind")
        constraints.append(Constraint(expr.as_function(e), ConstraintKind(kind), label=c["expr"]))

    box = data.get("box", [])
    if not isinstance(box, list):
        raise ProblemError("expected a list", "box")
    for i, b in enumerate(box):
        path = f"box[{i}]"
        if not isinstance(b, dict):
            raise ProblemError("expected an object", path)
        var = b.get("var")
        if isinstance(var, bool) or not isinstance(var, int) or not 1 <= var <= n:
            raise ProblemError(f"expected a variable index in 1..{n}", f"{path}.var")
        if b.get("lower") is None and b.get("upper") is None:
            raise ProblemError("needs 'lower' or 'upper'", path)
        if b.get("lower") is not None:
            constraints.append(Constraint.lower(var - 1, _number(b["lower"], f"{path}.lower")))
        if b.get("upper") is not None:
            constraints.append(Constraint.upper(var - 1, _number(b["upper"], f"{path}.upper")))

    ring = data.get("ring")
    if ring is not None:
        if not isinstance(ring, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in ring):
            raise ProblemError("expected a list of integers", "ring")
        ring = tuple(ring)

    x0 = data.get("x0")
    if not isinstance(x0, list) or len(x0) != n:
        raise ProblemError(f"expected a list of {n} numbers", "x0")
    x0 = np.array([_number(v, f"x0[{i}]") for i, v in enumerate(x0)])

    if objective is None:
        objective = _zero_objective
    p = Problem(n, objective, tuple(constraints), ring, name=str(data.get("name", "")))
    errors = validate(p)
    if errors:
        raise ProblemError(errors, "$")
    return p, x0


def _zero_objective(x):
    return 0.0, np.zeros(len(x))


def load_problem(path, objective_key: str = "objective") -> tuple[Problem, np.ndarray, dict]:
    """Read a problem JSON file; returns ``(problem, x0, raw_dict)``."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ProblemError(f"invalid JSON: {exc}", "$") from exc
    p, x0 = problem_from_dict(data, objective_key)
    return p, x0, data
