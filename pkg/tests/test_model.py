import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixtures import linear, plane_problem, quadratic, sphere_problem
from tangentopt.model import (
    Constraint,
    ConstraintKind,
    Event,
    IterationRecord,
    Problem,
    ProblemError,
    SolverConfig,
    kkt_residual,
    load_problem,
    problem_from_dict,
    validate,
)


class TestKKTResidual:
    def test_solution_of_plane_problem(self):
        assert kkt_residual(plane_problem(), [1, 1], [0], [-2]) == 0.0

    def test_origin_of_plane_problem(self):
        assert kkt_residual(plane_problem(), [0, 0], [0], [0]) == 2.0

    def test_unconstrained_stationary(self):
        p = Problem(1, quadratic([[2.0]]))
        assert kkt_residual(p, [0.0], [], []) == 0.0

    def test_equality_counted_when_not_listed(self):
        # |g| = 2 must show up even with an empty active set
        assert kkt_residual(plane_problem(), [0, 0], [], []) == 2.0

    def test_inactive_violation_and_negative_multiplier(self):
        p = Problem(1, linear([1.0]), (Constraint.inequality(linear([1.0], -1.0)),))
        assert kkt_residual(p, [3.0], [], []) == pytest.approx(2.0)  # g = 2 > 0 while inactive
        assert kkt_residual(p, [1.0], [0], [-1.0]) == pytest.approx(1.0)  # gradient 0 but lambda < 0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            kkt_residual(plane_problem(), [1, 1, 1], [0], [-2])
        with pytest.raises(ValueError):
            kkt_residual(plane_problem(), [1, 1], [0], [])

    def test_box_constraint(self):
        # x1 <= 1 active at x1 = 1 for f = (x1 - 2)^2: lambda = 2
        p = Problem(1, quadratic([[2.0]], [-4.0], 4.0), (Constraint.upper(0, 1.0),))
        assert kkt_residual(p, [1.0], [0], [2.0]) == 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.randoms(use_true_random=False))
    def test_permutation_invariance(self, rnd):
        rng = np.random.default_rng(rnd.randint(0, 2**32 - 1))
        n, m = 4, 3
        cons = [Constraint.inequality(linear(rng.standard_normal(n), rng.standard_normal())) for _ in range(m)]
        f = quadratic(np.eye(n), rng.standard_normal(n))
        x = rng.standard_normal(n)
        active = [0, 2]
        lam = rng.standard_normal(2)
        ref = kkt_residual(Problem(n, f, tuple(cons)), x, active, lam)
        perm = rng.permutation(m)
        inverse = np.argsort(perm)
        permuted = Problem(n, f, tuple(cons[i] for i in perm))
        new_active = [int(inverse[i]) for i in active]
        assert kkt_residual(permuted, x, new_active, lam) == pytest.approx(ref, abs=1e-14)


class TestValidate:
    def test_sphere_ok(self):
        assert validate(sphere_problem()) == []

    def test_too_many_equalities(self):
        c = Constraint.equality(linear([1.0, 0.0]))
        errors = validate(Problem(2, linear([0.0, 0.0]), (c, c)))
        assert any("m<n violated" in e for e in errors)

    def test_box_ordering(self):
        p = Problem(2, linear([0, 0]), (Constraint.lower(0, 1.0), Constraint.upper(0, 0.0)))
        assert any("lower 1 > upper 0" in e for e in validate(p))

    def test_collects_all_errors(self):
        c = Constraint.equality(linear([1.0]))
        p = Problem(1, linear([0.0]), (c, Constraint.lower(3, 0.0), Constraint.lower(0, 1.0), Constraint.upper(0, 0.0)))
        assert len(validate(p)) == 3

    def test_ring_checks(self):
        ineq = Constraint.inequality(linear([1.0, 0.0]))
        eq = Constraint.equality(linear([0.0, 1.0]))
        f = linear([0.0, 0.0])
        assert validate(Problem(2, f, (ineq, ineq), ring=(0, 1))) == []
        assert validate(Problem(2, f, (ineq, ineq), ring=(0, 0)))
        assert validate(Problem(2, f, (ineq, ineq), ring=(0, 5)))
        assert validate(Problem(2, f, (ineq, eq), ring=(0, 1)))
        assert validate(Problem(2, f, (ineq, ineq), ring=(0,)))


class TestSolverConfig:
    def test_defaults(self):
        cfg = SolverConfig()
        assert (cfg.eta, cfg.tol, cfg.max_iter, cfg.rho_min) == (0.1, 1e-10, 10000, 1e-12)
        assert cfg.halve_eta is False

    @pytest.mark.parametrize("kwargs", [{"eta": 0}, {"tol": -1}, {"max_iter": 0}, {"rho_min": 0}, {"policy": "bogus"}])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            SolverConfig(**kwargs)

    def test_frozen(self):
        with pytest.raises(AttributeError):
            SolverConfig().eta = 1.0


class TestTraceSerialisation:
    def test_record_round_trip(self):
        rec = IterationRecord(
            3,
            np.array([0.5, -1.0]),
            1.25,
            np.array([0.0, -0.5]),
            (0,),
            np.array([0.75]),
            0.01,
            0.1,
            [Event("activate", 0), Event("project", 2, 1.0), Event("warn_too_fast", value=2.0)],
        )
        d = json.loads(json.dumps(rec.to_dict()))
        assert set(d) == {"k", "x", "f", "g", "active", "multipliers", "step", "eta", "events"}
        assert d["events"][1] == {"event": "project", "index": 2, "value": 1.0}
        back = IterationRecord.from_dict(d)
        assert back.k == 3 and back.active == (0,)
        np.testing.assert_array_equal(back.x, rec.x)
        assert back.events == rec.events
        assert back.active_norm == 0.0

    def test_multipliers_match_active(self):
        with pytest.raises(ValueError):
            IterationRecord(0, np.zeros(2), 0.0, np.zeros(1), (0,), np.zeros(2), 0.0, 0.1, [])


SPHERE = {
    "n": 2,
    "objective": "x1",
    "constraints": [{"expr": "x1^2 + x2^2 - 1", "kind": "eq"}],
    "x0": [-0.6, 0.8],
}


class TestProblemFiles:
    def test_sphere(self):
        p, x0 = problem_from_dict(SPHERE)
        assert p.n == 2 and p.m == 1 and p.only_equalities
        np.testing.assert_array_equal(x0, [-0.6, 0.8])
        val, grad = p.constraints[0](np.array([1.0, 2.0]))
        assert val == 4.0
        np.testing.assert_array_equal(grad, [2, 4])

    def test_box_entries_are_one_based_and_appended(self):
        data = dict(SPHERE, box=[{"var": 2, "lower": -1, "upper": 1}], constraints=[])
        p, _ = problem_from_dict(data)
        kinds = [(c.kind, c.var, c.bound) for c in p.constraints]
        assert kinds == [(ConstraintKind.BOX_LOWER, 1, -1.0), (ConstraintKind.BOX_UPPER, 1, 1.0)]

    @pytest.mark.parametrize(
        "patch, path",
        [
            ({"n": "two"}, "n"),
            ({"objective": 3}, "objective"),
            ({"objective": "x1 +"}, "objective"),
            ({"objective": "x3"}, "objective"),
            ({"constraints": [{"expr": "x1", "kind": "le"}]}, "constraints[0].kind"),
            ({"constraints": [{"kind": "eq"}]}, "constraints[0].expr"),
            ({"box": [{"var": 0, "lower": 0}]}, "box[0].var"),
            ({"box": [{"var": 1}]}, "box[0]"),
            ({"box": [{"var": 1, "lower": "a"}]}, "box[0].lower"),
            ({"x0": [1.0]}, "x0"),
            ({"x0": [1.0, None]}, "x0[1]"),
            ({"ring": "all"}, "ring"),
        ],
    )
    def test_errors_name_the_field(self, patch, path):
        with pytest.raises(ProblemError) as info:
            problem_from_dict(dict(SPHERE, **patch))
        assert info.value.path == path
        assert str(info.value).startswith(path)

    def test_parse_error_keeps_offset(self):
        with pytest.raises(ProblemError) as info:
            problem_from_dict(dict(SPHERE, objective="x1 +"))
        assert "offset 4" in str(info.value)

    def test_validation_errors(self):
        data = dict(SPHERE, constraints=[{"expr": "x1", "kind": "eq"}, {"expr": "x2", "kind": "eq"}])
        with pytest.raises(ProblemError) as info:
            problem_from_dict(data)
        assert any("m<n" in e for e in info.value.errors)

    def test_load_problem(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text(json.dumps(SPHERE))
        p, x0, raw = load_problem(path)
        assert raw == SPHERE and p.m == 1
        path.write_text("{")
        with pytest.raises(ProblemError) as info:
            load_problem(path)
        assert info.value.path == "$"
