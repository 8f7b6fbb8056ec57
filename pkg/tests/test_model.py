"""Tests for the uncertain model containers."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ramp.geometry import HPolytope
from ramp.model import (
    ConstraintSet,
    DisturbanceSet,
    ParamHypercube,
    UncertainModel,
    eval_dynamics,
    mass_spring_damper,
    regressor,
)


def _random_model(rng, n=2, m=1, p=2):
    A = [rng.standard_normal((n, n)) for _ in range(p + 1)]
    B = [rng.standard_normal((n, m)) for _ in range(p + 1)]
    return UncertainModel(tuple(A), tuple(B))


class TestEvalDynamics:
    def test_zero_theta_returns_nominal(self):
        rng = np.random.default_rng(1)
        model = _random_model(rng)
        A, B = eval_dynamics(model, np.zeros(2))
        np.testing.assert_array_equal(A, model.A[0])
        np.testing.assert_array_equal(B, model.B[0])

    def test_single_parameter_identity_direction(self):
        A0 = np.array([[1.0, 2.0], [3.0, 4.0]])
        model = UncertainModel((A0, np.eye(2)),
                               (np.zeros((2, 1)), np.zeros((2, 1))))
        A, _ = eval_dynamics(model, [2.0])
        np.testing.assert_allclose(A, A0 + 2 * np.eye(2))

    def test_mass_spring_damper_true_parameters(self):
        model, theta_of = mass_spring_damper()
        theta_star = theta_of(c=0.3, k=0.5)
        np.testing.assert_allclose(theta_star, [1.0, -1.0])
        A, B = eval_dynamics(model, theta_star)
        ts = 0.1
        expected_A = np.array([[1.0, ts], [-ts * 0.5, 1.0 - ts * 0.3]])
        np.testing.assert_allclose(A, expected_A, atol=1e-12)
        np.testing.assert_allclose(B, [[0.0], [ts]], atol=1e-12)

    def test_dimension_mismatch(self):
        model, _ = mass_spring_damper()
        with pytest.raises(ValueError):
            eval_dynamics(model, [1.0])


class TestRegressor:
    def test_zero_point_zero_matrix(self):
        rng = np.random.default_rng(2)
        model = _random_model(rng)
        D = regressor(model, np.zeros(2), np.zeros(1))
        np.testing.assert_array_equal(D, np.zeros((2, 2)))

    def test_identity_direction_column(self):
        A0 = np.zeros((2, 2))
        model = UncertainModel((A0, np.eye(2)),
                               (np.zeros((2, 1)), np.zeros((2, 1))))
        D = regressor(model, np.array([1.0, 2.0]), np.zeros(1))
        np.testing.assert_allclose(D[:, 0], [1.0, 2.0])

    def test_affinity_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            model = _random_model(rng)
            x = rng.standard_normal(2)
            u = rng.standard_normal(1)
            theta = rng.standard_normal(2)
            tb = rng.standard_normal(2)
            A1, B1 = eval_dynamics(model, theta)
            A2, B2 = eval_dynamics(model, tb)
            lhs = (A1 @ x + B1 @ u) - (A2 @ x + B2 @ u)
            rhs = regressor(model, x, u) @ (theta - tb)
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_affinity_identity_property(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, 3))
    p = int(rng.integers(1, 4))
    A = tuple(rng.standard_normal((n, n)) for _ in range(p + 1))
    B = tuple(rng.standard_normal((n, m)) for _ in range(p + 1))
    model = UncertainModel(A, B)
    x = rng.standard_normal(n)
    u = rng.standard_normal(m)
    theta = rng.standard_normal(p)
    tb = rng.standard_normal(p)
    Ath, Bth = eval_dynamics(model, theta)
    Atb, Btb = eval_dynamics(model, tb)
    lhs = (Ath @ x + Bth @ u) - (Atb @ x + Btb @ u)
    np.testing.assert_allclose(lhs, regressor(model, x, u) @ (theta - tb),
                               atol=1e-12)


class TestParamHypercube:
    def test_membership_is_inf_norm_ball(self):
        cube = ParamHypercube(np.array([0.5, -0.5]), 2.0)
        rng = np.random.default_rng(4)
        for _ in range(200):
            theta = rng.uniform(-2.5, 2.5, size=2)
            expected = np.max(np.abs(theta - cube.center)) <= 1.0
            assert cube.contains(theta, tol=0.0) == expected

    def test_vertices_are_corners(self):
        cube = ParamHypercube(np.zeros(2), 2.0)
        got = {tuple(v) for v in cube.vertices()}
        assert got == {(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)}

    def test_clamp_projects_componentwise(self):
        cube = ParamHypercube(np.zeros(2), 2.0)
        np.testing.assert_allclose(cube.clamp([3.0, -0.5]), [1.0, -0.5])

    def test_negative_eta_rejected(self):
        with pytest.raises(ValueError):
            ParamHypercube(np.zeros(1), -0.1)

    def test_zero_eta_singleton(self):
        cube = ParamHypercube(np.array([1.0]), 0.0)
        assert cube.contains([1.0])
        assert not cube.contains([1.001], tol=1e-12)


class TestConstraintSet:
    def test_case_study_box_accepted(self):
        F = np.array([[1 / 1.1, 0.0], [-10.0, 0.0], [0.0, 0.2],
                      [0.0, -0.2], [0.0, 0.0], [0.0, 0.0]])
        G = np.array([[0.0], [0.0], [0.0], [0.0], [0.2], [-0.2]])
        cs = ConstraintSet(F, G)
        assert cs.q == 6
        assert cs.satisfied([1.0, 0.0], [0.0])
        assert not cs.satisfied([1.2, 0.0], [0.0])

    def test_unbounded_rejected(self):
        # no input rows at all: u unbounded
        F = np.vstack([np.eye(2), -np.eye(2)])
        G = np.zeros((4, 1))
        with pytest.raises(ValueError, match="compact"):
            ConstraintSet(F, G)


class TestDisturbanceSet:
    def test_origin_membership_warns_only(self):
        shifted = HPolytope.from_box([1.0], [2.0])
        with pytest.warns(UserWarning, match="origin"):
            DisturbanceSet(shifted)

    def test_contains_origin_silent(self):
        import warnings as w
        with w.catch_warnings():
            w.simplefilter("error")
            DisturbanceSet.from_box([-0.02], [0.02])

    def test_unbounded_rejected(self):
        half = HPolytope(np.array([[1.0]]), np.array([1.0]))
        with pytest.raises(ValueError, match="compact"):
            DisturbanceSet(half)

    def test_degenerate_box_accepted(self):
        ds = DisturbanceSet.from_box([0.0, -0.02], [0.0, 0.02])
        assert ds.dim == 2


class TestModelValidation:
    def test_list_length_mismatch(self):
        with pytest.raises(ValueError):
            UncertainModel((np.eye(2),), (np.zeros((2, 1)), np.zeros((2, 1))))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            UncertainModel((np.eye(2), np.eye(3)),
                           (np.zeros((2, 1)), np.zeros((2, 1))))

    def test_input_certainty_flag(self):
        model, _ = mass_spring_damper()
        assert model.input_is_certain
        rng = np.random.default_rng(9)
        assert not _random_model(rng).input_is_certain
