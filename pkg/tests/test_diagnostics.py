import math

import numpy as np
import pytest

from fixtures import linear, maximizer_problem, plane_problem, quadratic, qp_problem, sphere_problem
from tangentopt.active_set import run_active_set
from tangentopt.diagnostics import (
    InsufficientTail,
    check_gradient,
    convergence_report,
    jacobian_fd,
    power_iteration,
    spectral_radius_iteration_map,
    second_order_probe,
)
from tangentopt.elasticity import AuxeticObjective
from tangentopt.equality import run_equality
from tangentopt.model import Problem, SolverConfig

X0 = [-0.6, 0.8]
X_STAR = np.array([-1.0, 0.0])


def sphere_run(eta, max_iter=10000):
    return run_equality(sphere_problem(), X0, SolverConfig(eta=eta, max_iter=max_iter))


class TestPrimitives:
    def test_jacobian_of_linear_map(self):
        a = np.array([[1.0, 2.0], [-3.0, 0.5]])
        np.testing.assert_allclose(jacobian_fd(lambda x: a @ x, [0.3, -2.0]), a, atol=1e-9)

    def test_power_iteration(self):
        assert power_iteration(np.diag([0.3, -0.7, 0.1])) == pytest.approx(0.7, rel=1e-6)
        rot = 0.9 * np.array([[0.0, -1.0], [1.0, 0.0]])
        assert power_iteration(rot) == pytest.approx(0.9, rel=1e-9)
        assert power_iteration(np.zeros((2, 2))) == 0.0


class TestSpectralRadius:
    @pytest.mark.parametrize("eta", [0.1, 0.2, 0.5, 0.8, 1.0, 1.5, 1.9])
    def test_sphere_matches_theory(self, eta):
        # the tangent curvature of the Lagrangian is 2 lambda* = 1
        rho = spectral_radius_iteration_map(sphere_problem(), X_STAR, eta)
        assert abs(rho - abs(1 - eta)) < 1e-3

    def test_divergent_step(self):
        assert spectral_radius_iteration_map(sphere_problem(), X_STAR, 2.5) > 1.0

    def test_small_step_tends_to_one(self):
        rhos = [spectral_radius_iteration_map(sphere_problem(), X_STAR, eta) for eta in (0.1, 0.01, 0.001)]
        assert rhos[0] > 0.89 and rhos[2] > 0.998
        assert rhos == sorted(rhos)

    def test_plane(self):
        # Hessian 2I on a one-dimensional tangent space
        rho = spectral_radius_iteration_map(plane_problem(), [1.0, 1.0], 0.1)
        assert rho == pytest.approx(0.8, abs=1e-6)


class TestConvergenceReport:
    def test_sphere_half_step(self):
        res = sphere_run(0.5)
        rep = convergence_report(res.trace, X_STAR, sphere_problem())
        assert rep.linear and rep.verified
        assert abs(rep.rate - 0.5) < 0.05
        assert 1.7 <= rep.slope_ratio <= 2.3 and rep.decay_ok
        assert rep.spectral_radius == pytest.approx(0.5, abs=1e-3)

    @pytest.mark.parametrize("eta", [0.2, 0.5])
    def test_rate_matches_step(self, eta):
        rep = convergence_report(sphere_run(eta).trace, X_STAR)
        assert abs(rep.rate - abs(1 - eta)) < 0.05

    def test_proxy_solution(self):
        rep = convergence_report(sphere_run(0.5).trace)
        assert rep.used_proxy
        assert abs(rep.rate - 0.5) < 0.05

    def test_linear_constraint_is_exact(self):
        res = run_equality(plane_problem(), [3.0, 0.0], SolverConfig(eta=0.1))
        rep = convergence_report(res.trace, [1.0, 1.0])
        assert rep.constraint_slope == -math.inf
        assert rep.slope_ratio is None and not rep.decay_ok
        assert rep.to_dict()["constraint_slope"] == "-inf"
        assert rep.rate == pytest.approx(0.8, abs=1e-3)

    def test_diverging_run_not_verified(self):
        res = sphere_run(2.5, max_iter=60)
        with pytest.raises(InsufficientTail):
            convergence_report(res.trace[:3], X_STAR)
        rep = convergence_report(res.trace, X_STAR, min_tail=5)
        assert not (rep.linear and rep.rate < 1.0)
        assert not rep.verified

    def test_insufficient_tail(self):
        res = sphere_run(0.5, max_iter=3)
        with pytest.raises(InsufficientTail):
            convergence_report(res.trace, X_STAR)
        with pytest.raises(InsufficientTail):
            convergence_report([], X_STAR)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            convergence_report(sphere_run(0.5).trace, [0.0, 0.0, 0.0])

    def test_read_only(self):
        res = sphere_run(0.5)
        before = [r.x.copy() for r in res.trace]
        convergence_report(res.trace, X_STAR, sphere_problem())
        for b, r in zip(before, res.trace):
            np.testing.assert_array_equal(b, r.x)


class TestCheckGradient:
    def test_polynomial(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a = rng.standard_normal((4, 4))
            f = quadratic(a + a.T, rng.standard_normal(4))
            assert check_gradient(f, rng.uniform(-2, 2, 4)) < 1e-8

    def test_poisson_objective(self):
        p = np.array([1.0, -0.3, 0.8, 0.2, 0.1, 0.9])
        assert check_gradient(AuxeticObjective(30.0), p) < 1e-6

    def test_wrong_gradient_is_caught(self):
        def bad(x):
            return float(x @ x), 4.0 * x  # twice the true gradient

        assert check_gradient(bad, [0.5, -1.0]) == pytest.approx(0.5, abs=1e-6)

    def test_vanishing_gradient(self):
        # x1 - x1 differences to rounding noise, not to a relative error of 1
        fun = lambda x: ((0.3 + x[0]) - x[0], np.zeros(1))
        assert check_gradient(fun, [-0.12345]) < 1e-9

    def test_constant(self):
        assert check_gradient(lambda x: (3.0, np.zeros(2)), [1.0, 2.0]) == 0.0


class TestSecondOrderProbe:
    def test_sphere_minimum(self):
        assert second_order_probe(sphere_problem(), X_STAR, [0.5]) == pytest.approx(1.0, abs=1e-5)

    def test_maximizer(self):
        assert second_order_probe(maximizer_problem(), X_STAR, [-0.5]) == pytest.approx(-1.0, abs=1e-5)

    def test_unconstrained_is_min_eigenvalue(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            a = rng.standard_normal((3, 3))
            h = a @ a.T - np.eye(3)
            p = Problem(3, quadratic(h, rng.standard_normal(3)))
            probe = second_order_probe(p, rng.standard_normal(3), [], active=[])
            assert probe == pytest.approx(np.linalg.eigvalsh(h)[0], abs=1e-5)

    def test_trivial_tangent_space(self):
        p = Problem(1, linear([1.0]))
        assert math.isinf(second_order_probe(qp_problem(box=True), [1.0, 2.0], [2.0, 0.0]))
        assert second_order_probe(p, [0.0], [], active=[]) == 0.0

    def test_active_set_solution(self):
        res = run_active_set(qp_problem(), [3.0, 3.0], SolverConfig(eta=0.1))
        lam = res.multipliers[list(res.active)]
        assert second_order_probe(qp_problem(), res.x, lam, res.active) == pytest.approx(2.0, abs=1e-5)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            second_order_probe(sphere_problem(), X_STAR, [0.5, 1.0])
