"""Hand-solvable problems shared by the test modules.

Functions here are written directly in numpy (not through the expression
parser) so they double as independent oracles for the parser.
"""

import numpy as np

from tangentopt.model import Constraint, Problem


def linear(c, d=0.0):
    c = np.asarray(c, dtype=float)

    def fun(x):
        return float(c @ x + d), c.copy()

    return fun


def quadratic(a, b=None, c=0.0):
    """``0.5 x^T A x + b^T x + c``."""
    a = np.asarray(a, dtype=float)
    b = np.zeros(len(a)) if b is None else np.asarray(b, dtype=float)

    def fun(x):
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ a @ x + b @ x + c), a @ x + b

    return fun


def sphere_constraint(radius=1.0):
    def g(x):
        x = np.asarray(x, dtype=float)
        return float(x @ x - radius**2), 2.0 * x

    return g


def sphere_problem():
    """min x1 on the unit circle: x* = (-1, 0), lambda* = 0.5."""
    return Problem(2, linear([1.0, 0.0]), (Constraint.equality(sphere_constraint()),), name="sphere")


def maximizer_problem():
    """min -x1 on the unit circle, examined at the maximiser (-1, 0) where lambda = -0.5."""
    return Problem(2, linear([-1.0, 0.0]), (Constraint.equality(sphere_constraint()),), name="maximizer")


def plane_problem():
    """min x1^2 + x2^2 s.t. x1 + x2 = 2: x* = (1, 1), lambda* = -2."""
    return Problem(2, quadratic(2 * np.eye(2)), (Constraint.equality(linear([1.0, 1.0], -2.0)),))


def qp_problem(box=False):
    """min (x1-2)^2 + (x2-1)^2 s.t. x1 <= 1, x2 <= 2: x* = (1, 1), lambda* = (2, 0)."""
    f = quadratic(2 * np.eye(2), [-4.0, -2.0], 5.0)
    if box:
        cons = (Constraint.upper(0, 1.0), Constraint.upper(1, 2.0))
    else:
        cons = (Constraint.inequality(linear([1, 0], -1.0)), Constraint.inequality(linear([0, 1], -2.0)))
    return Problem(2, f, cons, name="qp")


def lp_problem():
    """min -x1 - x2 s.t. x1 <= 1, x2 <= 1: x* = (1, 1), lambda* = (1, 1)."""
    cons = (Constraint.inequality(linear([1, 0], -1.0)), Constraint.inequality(linear([0, 1], -1.0)))
    return Problem(2, linear([-1.0, -1.0]), cons, name="lp")


def parabola(shift):
    def f(x):
        return float((x[0] - shift) ** 2), np.array([2.0 * (x[0] - shift)])

    return f


def square(x):
    x = np.asarray(x, dtype=float)
    return float(x @ x), 2.0 * x


def random_polynomial(rng, n_vars, depth=3):
    """Random polynomial text over x1..x{n_vars} with small integer powers."""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.6:
            v = f"x{rng.integers(1, n_vars + 1)}"
            return f"{v}^{rng.integers(1, 4)}" if rng.random() < 0.3 else v
        return f"{rng.uniform(-2, 2):.3f}"
    op = rng.choice(["+", "-", "*"])
    left = random_polynomial(rng, n_vars, depth - 1)
    right = random_polynomial(rng, n_vars, depth - 1)
    return f"({left}) {op} ({right})"


def random_mixed_fixture(rng, max_cond=1e3):
    """Random problem and point with some box bounds active and satisfied exactly.

    Returns ``(problem, x, active, eta)``. General constraints are random
    quadratics; at most ``n`` constraints, all of them active. Draws whose
    full Gram matrix has condition number above ``max_cond`` are rejected so
    the point is safely regular.
    """
    while True:
        p, x, active, eta = _mixed_draw(rng)
        rows = np.array([p.constraints[i](x)[1] for i in active])
        if np.linalg.cond(rows @ rows.T) <= max_cond:
            return p, x, active, eta


def _mixed_draw(rng):
    n = int(rng.integers(3, 8))
    n_box = int(rng.integers(1, n - 1))
    n_gen = int(rng.integers(1, n - n_box + 1))
    blocked = rng.choice(n, n_box, replace=False)
    x = rng.uniform(-1.0, 1.0, n)
    cons = []
    for j in blocked:
        bound = float(rng.uniform(-1.0, 1.0))
        x[j] = bound
        cons.append(Constraint.lower(int(j), bound) if rng.random() < 0.5 else Constraint.upper(int(j), bound))
    for _ in range(n_gen):
        a = rng.standard_normal((n, n))
        kind = Constraint.inequality if rng.random() < 0.7 else Constraint.equality
        cons.append(kind(quadratic(a + a.T, rng.standard_normal(n), float(rng.standard_normal()))))
    m = rng.standard_normal((n, n))
    f = quadratic(m @ m.T + np.eye(n), rng.standard_normal(n))
    order = rng.permutation(len(cons))
    cons = [cons[i] for i in order]
    problem = Problem(n, f, tuple(cons))
    active = tuple(range(len(cons)))
    return problem, x, active, float(rng.uniform(0.01, 1.0))


def full_system_multipliers(problem, x, active, eta):
    """Dense solve of the Gram system with every active constraint, box rows included."""
    _, grad_f = problem.f(x)
    rows = np.array([problem.constraints[i](x)[1] for i in active])
    vals = np.array([problem.constraints[i](x)[0] for i in active])
    return np.linalg.solve(rows @ rows.T, vals - eta * rows @ grad_f)
