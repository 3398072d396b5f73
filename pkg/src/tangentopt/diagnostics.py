"""Empirical checks of the convergence theory on concrete runs.

* :func:`spectral_radius_iteration_map` estimates the contraction factor of
  the fixed-point map ``S(x) = x - eta grad f - grad g Lambda(x)`` at a
  solution (finite-difference Jacobian + power iteration).
* :func:`convergence_report` fits linear rates to a trace.
* :func:`second_order_probe` measures the curvature of the Lagrangian on the
  tangent space of the active constraints.

These use second differences of the (exact) gradients; the solvers
themselves never do.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .equality import gram_solve
from .model import IterationRecord, Problem, RankDeficient

__all__ = [
    "InsufficientTail",
    "ConvergenceReport",
    "iteration_map",
    "jacobian_fd",
    "power_iteration",
    "spectral_radius_iteration_map",
    "convergence_report",
    "check_gradient",
    "second_order_probe",
]


class InsufficientTail(ValueError):
    pass


def iteration_map(p: Problem, eta: float, active: Sequence[int] | None = None, rho_min: float = 1e-12):
    """The solver's update as a function ``S(x)`` with a fixed active set."""
    active = list(range(p.m)) if active is None else list(active)

    def S(x):
        x = np.asarray(x, dtype=float)
        _, grad_f = p.f(x)
        vals, grads = p.g(x, active)
        lam = gram_solve(grads, vals - eta * (grads @ grad_f), rho_min)
        return x - eta * grad_f - grads.T @ lam

    return S


def jacobian_fd(fun: Callable[[np.ndarray], np.ndarray], x: Sequence[float], h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian, step ``h * (1 + |x_i|)``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(len(x)):
        hi = h * (1.0 + abs(x[i]))
        e = np.zeros(len(x))
        e[i] = hi
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * hi))
    return np.column_stack(cols)


def power_iteration(a: np.ndarray, steps: int = 200, seed: int = 0, window: int = 20) -> float:
    """Spectral radius estimate from the growth rate of ``a^k v``.

    Averages the log growth over the last ``window`` steps, which also
    handles a dominant complex pair.
    """
    a = np.asarray(a, dtype=float)
    v = np.random.default_rng(seed).standard_normal(a.shape[0])
    v /= np.linalg.norm(v)
    logs = []
    for _ in range(steps):
        w = a @ v
        nw = np.linalg.norm(w)
        if nw == 0.0 or not np.isfinite(nw):
            return 0.0 if nw == 0.0 else math.inf
        logs.append(math.log(nw))
        v = w / nw
    return float(math.exp(np.mean(logs[-window:])))


def spectral_radius_iteration_map(
    p: Problem,
    x_star: Sequence[float],
    eta: float,
    active: Sequence[int] | None = None,
    steps: int = 200,
    seed: int = 0,
) -> float:
    """Spectral radius of the Jacobian of the iteration map at ``x_star``."""
    s = iteration_map(p, eta, active)
    try:
        jac = jacobian_fd(s, x_star)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient(str(exc)) from exc
    return power_iteration(jac, steps, seed)


@dataclass
class ConvergenceReport:
    rate: float  # fitted linear contraction factor of ||x_k - x*||
    r_squared: float
    constraint_rate: float | None  # fitted factor for ||g(x_k)||; 0.0 if g vanished exactly
    constraint_slope: float  # -inf when the constraints are met exactly
    error_slope: float
    slope_ratio: float | None
    spectral_radius: float | None
    errors: list[float] = field(default_factory=list)
    linear: bool = False
    decay_ok: bool = False
    used_proxy: bool = False

    @property
    def verified(self) -> bool:
        ok = self.linear and 0.0 < self.rate < 1.0
        if self.spectral_radius is not None:
            ok = ok and self.spectral_radius < 1.0
        return ok

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verified"] = self.verified
        for key in ("constraint_slope",):
            if d[key] == -math.inf:
                d[key] = "-inf"
        return d


def _fit(k: np.ndarray, values: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of ``log(values)`` against iteration ``k``, and R^2."""
    k = np.asarray(k, dtype=float)
    y = np.log(values)
    slope, intercept = np.polyfit(k, y, 1)
    resid = y - (slope * k + intercept)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return float(slope), r2


def _tail(values: np.ndarray, floor: float, min_tail: int) -> np.ndarray:
    usable = np.nonzero(values > floor)[0]
    if len(usable) == 0:
        return usable
    # contiguous run ending at the last usable point
    end = usable[-1]
    start = end
    while start > 0 and values[start - 1] > floor:
        start -= 1
    idx = np.arange(start, end + 1)
    take = max(min_tail, len(idx) // 2)
    return idx[-take:]


def convergence_report(
    trace: Sequence[IterationRecord],
    x_star: Sequence[float] | None = None,
    problem: Problem | None = None,
    min_tail: int = 20,
    floor: float = 1e-13,
    g_floor: float = 1e-14,
    seed: int = 0,
) -> ConvergenceReport:
    """Fit the linear rate of ``||x_k - x*||`` and of the active constraint norm.

    Without ``x_star`` the last iterate stands in for the solution and the
    final 5 records (biased towards zero error) are dropped. With
    ``problem`` the spectral radius of the iteration map at ``x*`` is added.
    Raises :class:`InsufficientTail` when fewer than ``min_tail`` error values
    exceed ``floor``; constraint values at or below ``g_floor`` are treated
    as rounding noise.
    """
    if len(trace) == 0:
        raise InsufficientTail("empty trace")
    xs = np.array([r.x for r in trace])
    used_proxy = x_star is None
    if used_proxy:
        x_star = xs[-1]
        xs_fit = xs[:-5]
        records = list(trace[:-5])
    else:
        x_star = np.asarray(x_star, dtype=float)
        if x_star.shape != xs.shape[1:]:
            raise ValueError("x_star dimension does not match the trace")
        xs_fit = xs
        records = list(trace)
    errors = np.linalg.norm(xs_fit - x_star, axis=1) if len(xs_fit) else np.zeros(0)
    idx = _tail(errors, floor, min_tail)
    if len(idx) < max(min_tail, 2):
        raise InsufficientTail(f"{len(idx)} usable tail iterations, need {max(min_tail, 2)}")
    e_slope, r2 = _fit(idx, errors[idx])
    rate = math.exp(e_slope)

    gnorm = np.array([r.active_norm for r in records])
    # same window as the error fit, minus values lost to rounding
    g_idx = np.arange(idx[0], len(gnorm))
    g_idx = g_idx[gnorm[g_idx] > g_floor]
    if len(g_idx) < 3:
        g_idx = np.nonzero(gnorm > g_floor)[0]
        g_idx = g_idx[len(g_idx) // 2 :]
    if np.count_nonzero(gnorm[1:]) == 0 or len(g_idx) < 3:
        g_slope, g_rate, ratio = -math.inf, 0.0, None
    else:
        g_slope, _ = _fit(g_idx, gnorm[g_idx])
        g_rate = math.exp(g_slope)
        ratio = g_slope / e_slope if e_slope != 0 else None

    rho = None
    if problem is not None:
        last = trace[-1]
        rho = spectral_radius_iteration_map(problem, x_star, last.eta, last.active, seed=seed)

    return ConvergenceReport(
        rate=rate,
        r_squared=r2,
        constraint_rate=g_rate,
        constraint_slope=g_slope,
        error_slope=e_slope,
        slope_ratio=ratio,
        spectral_radius=rho,
        errors=[float(e) for e in errors],
        linear=bool(r2 > 0.99 and rate < 1.0),
        decay_ok=ratio is not None and 1.7 <= ratio <= 2.3,
        used_proxy=used_proxy,
    )


def check_gradient(fun: Callable, p: Sequence[float], h: float = 1e-6) -> float:
    """Max deviation between ``fun``'s gradient and central differences.

    ``fun(x) -> (value, gradient)``. The deviation is scaled by the largest
    gradient entry (analytic or numeric), floored at 1 so that differencing
    noise around a vanishing gradient is measured in absolute terms. A unit
    size gradient off by a factor 2 scores 0.5.
    """
    p = np.asarray(p, dtype=float)
    _, grad = fun(p)
    grad = np.asarray(grad, dtype=float)
    fd = np.empty(len(p))
    for i in range(len(p)):
        hi = h * (1.0 + abs(p[i]))
        e = np.zeros(len(p))
        e[i] = hi
        fd[i] = (fun(p + e)[0] - fun(p - e)[0]) / (2 * hi)
    scale = max(np.max(np.abs(grad), initial=0.0), np.max(np.abs(fd), initial=0.0), 1.0)
    return float(np.max(np.abs(grad - fd)) / scale)


def _hessian_fd(fun, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    def grad(y):
        return np.asarray(fun(y)[1], dtype=float)

    hess = jacobian_fd(grad, x, h)
    return 0.5 * (hess + hess.T)


def second_order_probe(
    p: Problem,
    x_star: Sequence[float],
    lam_star: Sequence[float],
    active: Sequence[int] | None = None,
    rho_min: float = 1e-12,
) -> float:
    """Smallest eigenvalue of the Lagrangian Hessian on the tangent space.

    ``lam_star`` is aligned with ``active`` (default: every constraint).
    Returns ``inf`` when the tangent space is trivial.
    """
    x = np.asarray(x_star, dtype=float)
    active = list(range(p.m)) if active is None else list(active)
    lam = np.asarray(lam_star, dtype=float).reshape(-1)
    if len(lam) != len(active):
        raise ValueError("one multiplier per active constraint expected")
    hess = _hessian_fd(p.objective, x)
    for li, i in zip(lam, active):
        hess += li * _hessian_fd(p.constraints[i], x)
    if active:
        grads = p.g(x, active)[1]
        eig = np.linalg.eigvalsh(grads @ grads.T)
        if not eig[0] >= rho_min * eig[-1] or eig[-1] <= 0:
            raise RankDeficient("active constraint gradients are dependent at x*")
        q, _ = np.linalg.qr(grads.T, mode="complete")
        basis = q[:, len(active):]
    else:
        basis = np.eye(p.n)
    if basis.shape[1] == 0:
        return math.inf
    reduced = basis.T @ hess @ basis
    return float(np.linalg.eigvalsh(0.5 * (reduced + reduced.T))[0])
