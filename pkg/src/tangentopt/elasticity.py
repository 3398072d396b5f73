"""Directional Poisson ratios of anisotropic 2D elastic tensors.

Symmetric 2x2 matrices are written in the orthonormal basis

    f1 = [[1, 0], [0, 0]],  f2 = [[0, 0], [0, 1]],  f3 = [[0, 1], [1, 0]] / sqrt(2)

so a fourth-order elasticity tensor is a symmetric 3x3 matrix and the
Frobenius product of two symmetric matrices is the dot product of their
3-vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .minimax import MinimaxProblem
from .model import Constraint

__all__ = [
    "NotPositiveDefinite",
    "ElasticTensor",
    "Direction",
    "to_matrix",
    "from_matrix",
    "isotropic_compliance",
    "invert",
    "stress_of_direction",
    "poisson_ratio",
    "poisson_gradient_compliance",
    "chain_to_stiffness",
    "cholesky_stiffness",
    "AuxeticObjective",
    "build_auxetic_problem",
    "IDENTITY_START",
]

SQRT2 = math.sqrt(2.0)


class NotPositiveDefinite(ValueError):
    pass


@dataclass(frozen=True)
class ElasticTensor:
    matrix: np.ndarray
    role: str = "stiffness"  # or "compliance"

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("elastic tensors are 3x3 in the f-basis")
        if not np.allclose(m, m.T, rtol=0, atol=1e-14 * max(1.0, np.abs(m).max())):
            raise ValueError("elastic tensor must be symmetric")
        if self.role not in ("stiffness", "compliance"):
            raise ValueError("role must be 'stiffness' or 'compliance'")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def is_positive_definite(self) -> bool:
        return bool(np.linalg.eigvalsh(self.matrix)[0] > 0)


@dataclass(frozen=True)
class Direction:
    degrees: float

    @property
    def vector(self) -> np.ndarray:
        phi = math.radians(self.degrees)
        return np.array([math.cos(phi), math.sin(phi)])


def to_matrix(s: Sequence[float]) -> np.ndarray:
    """3-vector in the f-basis -> symmetric 2x2 matrix."""
    a, b, c = s
    off = c / SQRT2
    return np.array([[a, off], [off, b]])


def from_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return np.array([m[0, 0], m[1, 1], SQRT2 * 0.5 * (m[0, 1] + m[1, 0])])


def isotropic_compliance(poisson: float, young: float = 1.0) -> np.ndarray:
    """Plane isotropic compliance in the f-basis.

    Shear entry is ``(1 + nu) / E``: ``f3`` is a unit-norm pure shear, so
    ``D f3 = (1 + nu) / E f3``.
    """
    return np.array(
        [[1.0, -poisson, 0.0], [-poisson, 1.0, 0.0], [0.0, 0.0, 1.0 + poisson]]
    ) / young


def _as_matrix(t) -> np.ndarray:
    return t.matrix if isinstance(t, ElasticTensor) else np.asarray(t, dtype=float)


def invert(c: ElasticTensor | np.ndarray) -> ElasticTensor:
    """Inverse tensor (stiffness <-> compliance)."""
    m = _as_matrix(c)
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("tensor is not positive definite") from exc
    inv_l = np.linalg.solve(chol, np.eye(3))
    inv = inv_l.T @ inv_l
    inv = 0.5 * (inv + inv.T)
    role = "stiffness"
    if isinstance(c, ElasticTensor) and c.role == "stiffness":
        role = "compliance"
    return ElasticTensor(inv, role)


def stress_of_direction(d: Direction | float) -> tuple[np.ndarray, np.ndarray]:
    """Unit stretch along ``d`` and along its normal, as f-basis 3-vectors."""
    if not isinstance(d, Direction):
        d = Direction(d)
    v1, v2 = d.vector
    sigma = np.array([v1 * v1, v2 * v2, SQRT2 * v1 * v2])
    sigma_perp = np.array([v2 * v2, v1 * v1, -SQRT2 * v1 * v2])
    return sigma, sigma_perp


def _products(dm: np.ndarray, d) -> tuple[np.ndarray, np.ndarray, float, float]:
    sigma, perp = stress_of_direction(d)
    ds = dm @ sigma
    axial = float(ds @ sigma)
    if not axial > 0:
        raise NotPositiveDefinite("compliance gives non-positive axial strain")
    return sigma, perp, axial, float(ds @ perp)


def poisson_ratio(compliance: ElasticTensor | np.ndarray, d: Direction | float) -> float:
    """``-<D s, s_perp> / <D s, s>`` for a stretch ``s`` along ``d``."""
    _, _, axial, transverse = _products(_as_matrix(compliance), d)
    return -transverse / axial


def poisson_gradient_compliance(compliance: ElasticTensor | np.ndarray, d: Direction | float) -> np.ndarray:
    """Derivative of :func:`poisson_ratio` with respect to the compliance matrix.

    Symmetric, so contracting it (Frobenius) with a symmetric perturbation
    gives the directional derivative.
    """
    sigma, perp, axial, transverse = _products(_as_matrix(compliance), d)
    cross = np.outer(sigma, perp)
    return -0.5 * (cross + cross.T) / axial + (transverse / axial**2) * np.outer(sigma, sigma)


def chain_to_stiffness(compliance, grad_wrt_compliance, delta_stiffness) -> float:
    """Directional derivative of a function of ``D = C^-1`` along ``delta C``.

    Uses ``dD = -D dC D``.
    """
    dm = _as_matrix(compliance)
    dd = -dm @ np.asarray(delta_stiffness, dtype=float) @ dm
    return float(np.sum(np.asarray(grad_wrt_compliance) * dd))


# --- auxetic demo problem ---------------------------------------------------

# lower-triangular entries of L, row by row: L11, L21, L22, L31, L32, L33
_TRIL = np.tril_indices(3)
_DIAG_POSITIONS = (0, 2, 5)
IDENTITY_START = np.array([1.0, 0.0, 1.0, 0.0, 0.0, 1.0])


def cholesky_stiffness(params: Sequence[float]) -> np.ndarray:
    """Stiffness ``L L^T`` from the 6 lower-triangular entries of ``L``."""
    chol = np.zeros((3, 3))
    chol[_TRIL] = params
    return chol @ chol.T


class AuxeticObjective:
    """Poisson ratio along one direction as a function of the Cholesky parameters."""

    def __init__(self, degrees: float):
        self.degrees = float(degrees)

    def __repr__(self):
        return f"AuxeticObjective({self.degrees:g})"

    def __call__(self, params):
        chol = np.zeros((3, 3))
        chol[_TRIL] = params
        dm = invert(chol @ chol.T).matrix
        nu = poisson_ratio(dm, self.degrees)
        gd = poisson_gradient_compliance(dm, self.degrees)
        # d nu = <gd, -D dC D> = <M, dC>, dC = dL L^T + L dL^T
        m = -dm @ gd @ dm
        return nu, (2.0 * m @ chol)[_TRIL]


def _trace_constraint(target: float):
    def g(params):
        params = np.asarray(params, dtype=float)
        return float(params @ params) - target, 2.0 * params

    return g


def build_auxetic_problem(
    k: int = 10,
    min_diagonal: float = 0.05,
    trace: float = 3.0,
) -> MinimaxProblem:
    """Minimise the largest Poisson ratio over ``k`` directions in ``[0, 180)``.

    Variables are the Cholesky entries of the stiffness; the diagonal entries
    are bounded below by ``min_diagonal`` and ``trace(C) = trace`` removes the
    scale invariance of the Poisson ratio. The directions form a ring.
    """
    if k < 2:
        raise ValueError("need at least two directions")
    angles = [180.0 * i / k for i in range(k)]
    constraints = [Constraint.equality(_trace_constraint(trace), label=f"trace(C)={trace:g}")]
    constraints += [Constraint.lower(j, min_diagonal) for j in _DIAG_POSITIONS]
    return MinimaxProblem(
        n=6,
        objectives=tuple(AuxeticObjective(a) for a in angles),
        ring=tuple(range(k)),
        constraints=tuple(constraints),
        labels=tuple(f"nu({a:g})" for a in angles),
    )
