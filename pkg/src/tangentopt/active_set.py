"""Active-set extension for inequality and box constraints.

A violated inequality becomes active and is then treated like an equality;
it leaves the active set when its multiplier turns negative (most negative
first, re-solving after every removal). Violated box bounds are enforced by
projection, and the variables they block drop out of the multiplier system.

Constraints listed in ``Problem.ring`` form an almost-continuum: among
neighbouring violated constraints only the worst one (the cluster leader)
is activated.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .equality import gram_solve
from .model import (
    ConstraintKind,
    DeactivationPolicy,
    Event,
    IterationRecord,
    Problem,
    SolveResult,
    SolverConfig,
    SolverError,
    Status,
    TooManyActive,
    kkt_residual,
)

__all__ = [
    "Cluster",
    "ActiveSetState",
    "ring_clusters",
    "activate_violated",
    "solve_reduced_multipliers",
    "deactivation_loop",
    "run_active_set",
]


@dataclass(frozen=True)
class Cluster:
    members: tuple[int, ...]  # constraint indices in ring order
    leader: int


@dataclass(frozen=True)
class ActiveSetState:
    active: tuple[int, ...] = ()
    clusters: tuple[Cluster, ...] = ()

    @classmethod
    def initial(cls, p: Problem) -> "ActiveSetState":
        return cls(tuple(p.equality_indices))

    def box_active(self, p: Problem) -> list[int]:
        return [i for i in self.active if p.constraints[i].kind.is_box]

    def blocked(self, p: Problem) -> list[int]:
        """Variables currently held at a bound."""
        return [p.constraints[i].var for i in self.box_active(p)]

    def with_active(self, active) -> "ActiveSetState":
        return replace(self, active=tuple(sorted(set(active))))


def ring_clusters(ring: Sequence[int], values: np.ndarray, member: Sequence[bool]) -> list[Cluster]:
    """Maximal runs of consecutive ring positions flagged in ``member``.

    ``values`` and ``member`` are indexed by ring position. The leader of a
    cluster is its member with the largest value (lowest constraint index on
    ties).
    """
    k = len(ring)
    member = list(member)
    if not any(member):
        return []
    if all(member):
        runs = [list(range(k))]
    else:
        start = next(j for j in range(k) if not member[j])
        runs, cur = [], []
        for off in range(1, k + 1):
            j = (start + off) % k
            if member[j]:
                cur.append(j)
            elif cur:
                runs.append(cur)
                cur = []
        if cur:
            runs.append(cur)
    clusters = []
    for run in runs:
        lead = max(run, key=lambda j: (values[j], -ring[j]))
        clusters.append(Cluster(tuple(ring[j] for j in run), ring[lead]))
    return clusters


def _independent(p: Problem, x: np.ndarray, active: set[int], candidate: int, rho_min: float) -> bool:
    """Whether adding ``candidate`` keeps the reduced active gradients independent."""
    blocked = [p.constraints[i].var for i in active if p.constraints[i].kind.is_box]
    general = sorted(i for i in active if not p.constraints[i].kind.is_box) + [candidate]
    free = np.ones(p.n, dtype=bool)
    free[blocked] = False
    rows = p.g(x, general)[1][:, free]
    if rows.shape[0] > rows.shape[1]:
        return False
    eig = np.linalg.eigvalsh(rows @ rows.T)
    return bool(eig[0] >= rho_min * eig[-1] and eig[-1] > 0)


def activate_violated(
    state: ActiveSetState,
    p: Problem,
    x: Sequence[float],
    policy: DeactivationPolicy = DeactivationPolicy.MOST_NEGATIVE,
    rho_min: float = 1e-12,
) -> tuple[ActiveSetState, np.ndarray, list[Event]]:
    """Activate violated constraints; project violated box bounds.

    Returns the new state, the (possibly projected) point and the events.
    Raises :class:`TooManyActive` if more than ``n`` constraints end up active.
    """
    x = np.array(x, dtype=float)
    active = set(state.active)
    events: list[Event] = []
    new: list[int] = []

    for i, c in enumerate(p.constraints):
        if c.kind.is_box and i not in active and c(x)[0] > 0:
            x[c.var] = c.bound
            active.add(i)
            new.append(i)
            events.append(Event("activate", i))
            events.append(Event("project", i, c.bound))

    ring = set(p.ring or ())
    vals = np.array([c(x)[0] if not c.kind.is_box else 0.0 for c in p.constraints])
    for i, c in enumerate(p.constraints):
        if c.kind is ConstraintKind.INEQUALITY and i not in ring and i not in active and vals[i] > 0:
            active.add(i)
            new.append(i)
            events.append(Event("activate", i))

    clusters: list[Cluster] = []
    if p.ring:
        ring_vals = vals[list(p.ring)]
        member = [ring_vals[j] > 0 or i in active for j, i in enumerate(p.ring)]
        clusters = ring_clusters(p.ring, ring_vals, member)
        # worst leader first, so it wins when two leaders compete for independence
        for cl in sorted(clusters, key=lambda c: (-vals[c.leader], c.leader)):
            if cl.leader not in active and vals[cl.leader] > 0:
                if len(active) >= p.n or not _independent(p, x, active, cl.leader, rho_min):
                    events.append(Event("skip_dependent", cl.leader))
                    continue
                active.add(cl.leader)
                new.append(cl.leader)
                events.append(Event("activate", cl.leader))

    if policy is DeactivationPolicy.WARN_ON_MULTIPLE and len(new) > 1:
        events.append(Event("warn_too_fast", value=float(len(new))))
    if len(active) > p.n:
        raise TooManyActive(f"{len(active)} active constraints for {p.n} variables")
    return ActiveSetState(tuple(sorted(active)), tuple(clusters)), x, events


def solve_reduced_multipliers(
    state: ActiveSetState,
    p: Problem,
    x: Sequence[float],
    eta: float,
    rho_min: float = 1e-12,
) -> np.ndarray:
    """Multipliers for ``state.active`` (in that order).

    Non-box multipliers solve the Gram system restricted to the variables not
    blocked by an active box bound. Box multipliers are then recovered one by
    one from the blocked coordinate of the step, which must vanish. Assumes
    active box constraints hold exactly at ``x``.
    """
    x = np.asarray(x, dtype=float)
    active = list(state.active)
    box = [i for i in active if p.constraints[i].kind.is_box]
    general = [i for i in active if not p.constraints[i].kind.is_box]
    _, grad_f = p.f(x)
    vals, grads = p.g(x, general)
    if box:
        blocked = [p.constraints[i].var for i in box]
        if len(set(blocked)) != len(blocked):
            raise SolverError("two active box bounds on the same variable")
        free = np.ones(p.n, dtype=bool)
        free[blocked] = False
        rows, gf = grads[:, free], grad_f[free]
    else:
        rows, gf = grads, grad_f
    lam_general = gram_solve(rows, vals - eta * (rows @ gf), rho_min)

    out = dict(zip(general, lam_general))
    for i in box:
        c = p.constraints[i]
        j = c.var
        out[i] = -c.sign * (eta * grad_f[j] + grads[:, j] @ lam_general)
    return np.array([out[i] for i in active])


def deactivation_loop(
    state: ActiveSetState,
    p: Problem,
    x: Sequence[float],
    eta: float,
    cfg: SolverConfig = SolverConfig(),
) -> tuple[ActiveSetState, np.ndarray, list[Event], float]:
    """Drop active inequalities with negative multipliers, one at a time.

    The most negative multiplier goes first (lowest index on ties) and the
    remaining multipliers are re-solved after each removal. Equality
    constraints are never removed. Returns ``(state, multipliers, events,
    eta)``; ``eta`` changes only when ``cfg.halve_eta`` is set and several
    multipliers were negative at once under the warn-on-multiple policy.
    """
    events: list[Event] = []
    while True:
        lam = solve_reduced_multipliers(state, p, x, eta, cfg.rho_min)
        candidates = [
            (lam[pos], i)
            for pos, i in enumerate(state.active)
            if p.constraints[i].kind is not ConstraintKind.EQUALITY
        ]
        negative = [c for c in candidates if c[0] < 0]
        if not negative:
            return state, lam, events, eta
        if cfg.policy is DeactivationPolicy.WARN_ON_MULTIPLE and len(negative) > 1:
            events.append(Event("warn_too_fast", value=float(len(negative))))
            if cfg.halve_eta:
                eta /= 2.0
                events.append(Event("halve_eta", value=eta))
        _, worst = min(negative)
        state = replace(state, active=tuple(i for i in state.active if i != worst))
        events.append(Event("deactivate", worst))


def run_active_set(
    p: Problem,
    x0: Sequence[float],
    cfg: SolverConfig = SolverConfig(),
    callback: Callable[[IterationRecord], None] | None = None,
) -> SolveResult:
    """Minimise under equality, inequality and box constraints.

    Per iteration: activate violated constraints (projecting box bounds),
    run the deactivation loop, then step with blocked variables held fixed.
    Stops when the step norm drops below ``cfg.tol``.
    """
    x = np.array(x0, dtype=float)
    if x.shape != (p.n,) or not np.all(np.isfinite(x)):
        raise ValueError("x0 must be a finite point of the problem dimension")
    eta = cfg.eta
    state = ActiveSetState.initial(p)
    trace: list[IterationRecord] = []
    status = Status.MAX_ITERATIONS
    error = None
    for k in range(cfg.max_iter):
        try:
            state, x, events = activate_violated(state, p, x, cfg.policy, cfg.rho_min)
            state, lam, more, eta = deactivation_loop(state, p, x, eta, cfg)
            events += more
            fval, grad_f = p.f(x)
            vals, grads = p.g(x)
        except (SolverError, ArithmeticError) as exc:
            status, error = Status.NUMERICAL_FAILURE, exc
            break
        active = list(state.active)
        delta = -eta * grad_f - grads[active].T @ lam
        delta[state.blocked(p)] = 0.0
        step = float(np.linalg.norm(delta))
        rec = IterationRecord(k, x.copy(), fval, vals, state.active, lam, step, eta, events)
        trace.append(rec)
        if callback:
            callback(rec)
        if not np.isfinite(step):
            status, error = Status.NUMERICAL_FAILURE, SolverError("non-finite step")
            break
        x = x + delta
        if step < cfg.tol:
            status = Status.CONVERGED
            break

    mult = np.zeros(p.m)
    try:
        lam_star = solve_reduced_multipliers(state, p, x, eta, cfg.rho_min) / eta
        mult[list(state.active)] = lam_star
        kkt = kkt_residual(p, x, state.active, lam_star)
        fval = p.f(x)[0]
    except (SolverError, ArithmeticError, ValueError):
        kkt, fval = float("nan"), float("nan")
    messages = {
        Status.CONVERGED: f"converged after {len(trace)} iterations",
        Status.MAX_ITERATIONS: f"the method failed after {cfg.max_iter} iterations",
        Status.NUMERICAL_FAILURE: f"numerical failure: {error}",
    }
    return SolveResult(x, status, mult, state.active, kkt, trace, fval, messages[status], error)
