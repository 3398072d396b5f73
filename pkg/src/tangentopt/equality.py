"""Tangential-gradient / Newton iteration for equality constraints.

Each iterate moves by ``-eta * grad f - grad g @ lam`` where the multipliers
``lam`` are chosen so that the step satisfies the linearised constraint
``Dg(x) step = -g(x)``. Also holds the two building blocks it combines:
plain steepest descent and the under-determined (pseudo-inverse) Newton
iteration for ``g(x) = 0``.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .model import (
    Constraint,
    Event,
    IterationRecord,
    Problem,
    RankDeficient,
    SmoothFunction,
    SolveResult,
    SolverConfig,
    SolverError,
    Status,
    kkt_residual,
)

__all__ = [
    "MaxIterationsError",
    "gram_solve",
    "compute_multipliers",
    "equality_step",
    "run_equality",
    "steepest_descent",
    "newton_restore",
]


class MaxIterationsError(SolverError):
    pass


def gram_solve(rows: np.ndarray, rhs: np.ndarray, rho_min: float = 1e-12) -> np.ndarray:
    """Solve ``(rows @ rows.T) lam = rhs``.

    Raises :class:`RankDeficient` when the smallest eigenvalue of the Gram
    matrix is below ``rho_min`` times the largest.
    """
    rows = np.atleast_2d(rows)
    m = rows.shape[0]
    if m == 0:
        return np.zeros(0)
    if not np.all(np.isfinite(rows)) or not np.all(np.isfinite(rhs)):
        raise RankDeficient("non-finite constraint data")
    gram = rows @ rows.T
    if m == 1:
        norm2 = gram[0, 0]
        if not norm2 > 0:
            raise RankDeficient("constraint gradient vanishes")
        return np.array([rhs[0] / norm2])
    eig = np.linalg.eigvalsh(gram)
    if not eig[0] >= rho_min * eig[-1] or eig[-1] <= 0:
        raise RankDeficient(
            f"constraint gradients nearly dependent (eigenvalue ratio {eig[0] / max(eig[-1], 1e-300):.3e})"
        )
    return scipy.linalg.cho_solve(scipy.linalg.cho_factor(gram), rhs)


def compute_multipliers(
    p: Problem,
    x: Sequence[float],
    eta: float,
    indices: Sequence[int] | None = None,
    rho_min: float = 1e-12,
) -> np.ndarray:
    """Multipliers making the next step satisfy the linearised constraints.

    Solves ``Dg Dg^T lam = g - eta Dg grad f`` over the constraints in
    ``indices`` (default: all).
    """
    x = np.asarray(x, dtype=float)
    _, grad_f = p.f(x)
    vals, grads = p.g(x, indices)
    return gram_solve(grads, vals - eta * (grads @ grad_f), rho_min)


def equality_step(
    p: Problem,
    x: Sequence[float],
    eta: float,
    rho_min: float = 1e-12,
) -> tuple[np.ndarray, np.ndarray]:
    """One iteration from ``x``; returns ``(x_next, lam)``."""
    x = np.asarray(x, dtype=float)
    _, grad_f = p.f(x)
    vals, grads = p.g(x)
    lam = gram_solve(grads, vals - eta * (grads @ grad_f), rho_min)
    return x - eta * grad_f - grads.T @ lam, lam


def _diverging(steps: list[float]) -> bool:
    return len(steps) > 5 and steps[-1] > 10.0 * steps[-6]


def run_equality(
    p: Problem,
    x0: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
    callback: Callable[[IterationRecord], None] | None = None,
) -> SolveResult:
    """Iterate :func:`equality_step` until the step norm drops below ``cfg.tol``."""
    if not p.only_equalities:
        raise ValueError("run_equality only handles equality constraints; use run_active_set")
    x = np.array(x0, dtype=float)
    if x.shape != (p.n,) or not np.all(np.isfinite(x)):
        raise ValueError("x0 must be a finite point of the problem dimension")
    eta = cfg.eta
    active = tuple(range(p.m))
    trace: list[IterationRecord] = []
    steps: list[float] = []
    status = Status.MAX_ITERATIONS
    error = None
    for k in range(cfg.max_iter):
        try:
            fval, grad_f = p.f(x)
            vals, grads = p.g(x)
            lam = gram_solve(grads, vals - eta * (grads @ grad_f), cfg.rho_min)
        except (SolverError, ArithmeticError) as exc:
            status, error = Status.NUMERICAL_FAILURE, exc
            break
        delta = -eta * grad_f - grads.T @ lam
        step = float(np.linalg.norm(delta))
        events = []
        rec = IterationRecord(k, x.copy(), fval, vals, active, lam, step, eta, events)
        trace.append(rec)
        steps.append(step)
        if not np.isfinite(step):
            status, error = Status.NUMERICAL_FAILURE, SolverError("non-finite step")
            if callback:
                callback(rec)
            break
        x = x + delta
        if cfg.halve_eta and _diverging(steps):
            eta /= 2.0
            events.append(Event("halve_eta", value=eta))
        if callback:
            callback(rec)
        if step < cfg.tol:
            status = Status.CONVERGED
            break
    return _finish(p, x, active, eta, cfg, status, trace, error)


def _finish(p, x, active, eta, cfg, status, trace, error=None) -> SolveResult:
    # lam(x)/eta evaluated at the returned point approximates the true multiplier
    mult = np.zeros(p.m)
    lam_star = np.zeros(len(active))
    try:
        if active:
            lam_star = compute_multipliers(p, x, eta, active, cfg.rho_min) / eta
        mult[list(active)] = lam_star
        kkt = kkt_residual(p, x, active, lam_star)
        fval = p.f(x)[0]
    except (SolverError, ArithmeticError, ValueError):
        kkt, fval = float("nan"), float("nan")
    messages = {
        Status.CONVERGED: f"converged after {len(trace)} iterations",
        Status.MAX_ITERATIONS: f"the method failed after {cfg.max_iter} iterations",
        Status.NUMERICAL_FAILURE: f"numerical failure: {error}",
    }
    return SolveResult(
        x=x,
        status=status,
        multipliers=mult,
        active=tuple(active),
        kkt_residual=kkt,
        trace=trace,
        f=fval,
        message=messages[status],
        error=error,
    )


def steepest_descent(
    f: SmoothFunction,
    x0: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
    callback: Callable[[IterationRecord], None] | None = None,
) -> SolveResult:
    """Fixed-step gradient descent ``x <- x - eta grad f(x)``."""
    x = np.array(x0, dtype=float)
    p = Problem(len(x), f)
    return run_equality(p, x, cfg, callback)


def newton_restore(
    constraints: Sequence[SmoothFunction | Constraint],
    x0: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
) -> np.ndarray:
    """Find a point with ``g(x) = 0`` by pseudo-inverse Newton steps.

    ``x <- x - Dg^+ g`` with ``Dg^+ = Dg^T (Dg Dg^T)^{-1}``, stopping when
    ``||g(x)|| < cfg.tol``.
    """
    x = np.array(x0, dtype=float)
    for _ in range(cfg.max_iter + 1):
        rows = [c(x) for c in constraints]
        vals = np.array([r[0] for r in rows], dtype=float)
        if np.linalg.norm(vals) < cfg.tol:
            return x
        grads = np.array([r[1] for r in rows], dtype=float)
        x = x - grads.T @ gram_solve(grads, vals, cfg.rho_min)
    raise MaxIterationsError(f"constraints not restored after {cfg.max_iter} iterations")
