"""Tests for the LP/QP solver interface."""

import numpy as np
import pytest

from ramp.solvers import (
    LinearProgram,
    QuadraticProgram,
    solve_lp,
    solve_qp,
)
from oracles import brute_support_2d, brute_vertices_2d


def _random_bounded_lp(rng, n=4, k=6):
    """A feasible, bounded random LP (box rows guarantee boundedness)."""
    A = rng.standard_normal((k, n))
    x0 = rng.standard_normal(n)
    b = A @ x0 + rng.uniform(0.1, 1.0, size=k)
    A_full = np.vstack([A, np.eye(n), -np.eye(n)])
    b_full = np.concatenate([b, np.full(2 * n, 10.0)])
    c = rng.standard_normal(n)
    return LinearProgram(c, ineq=(A_full, b_full), sense="min")


class TestSolveLP:
    def test_single_active_constraint(self):
        lp = LinearProgram(np.array([1.0]),
                           ineq=(np.array([[1.0], [-1.0]]), np.array([3.0, 0.0])),
                           sense="max")
        res = solve_lp(lp)
        assert res.ok
        assert res.primal[0] == pytest.approx(3.0, abs=1e-8)
        assert res.objective == pytest.approx(3.0, abs=1e-8)

    def test_infeasible_status(self):
        lp = LinearProgram(np.array([1.0]),
                           ineq=(np.array([[1.0], [-1.0]]), np.array([1.0, -2.0])),
                           sense="max")
        res = solve_lp(lp)
        assert res.status == "infeasible"
        assert res.primal is None

    def test_unbounded_status(self):
        lp = LinearProgram(np.array([1.0]),
                           ineq=(np.array([[-1.0]]), np.array([0.0])),
                           sense="max")
        res = solve_lp(lp)
        assert res.status == "unbounded"

    def test_support_matches_vertex_enumeration(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            # random bounded 2-D polytope around the origin
            k = rng.integers(4, 9)
            angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
            H = np.column_stack([np.cos(angles), np.sin(angles)])
            h = rng.uniform(0.5, 2.0, size=k)
            if brute_vertices_2d(H, h).shape[0] < 3:
                continue
            d = rng.standard_normal(2)
            lp = LinearProgram(d, ineq=(H, h), sense="max")
            res = solve_lp(lp)
            assert res.ok
            assert res.objective == pytest.approx(
                brute_support_2d(H, h, d), abs=1e-7)

    def test_feasibility_of_reported_optimum(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            lp = _random_bounded_lp(rng)
            res = solve_lp(lp)
            assert res.ok
            A, b = lp.ineq
            assert np.all(A @ res.primal <= b + 1e-8)

    def test_duality_spot_check(self):
        # the returned dual vector must be dual feasible and close the gap
        rng = np.random.default_rng(3)
        for _ in range(25):
            lp = _random_bounded_lp(rng)
            res = solve_lp(lp)
            assert res.ok
            A, b = lp.ineq
            y = res.dual_ineq
            assert y is not None
            assert np.all(y >= -1e-9)
            assert np.max(np.abs(A.T @ y + lp.objective)) < 1e-7
            dual_obj = -float(b @ y)
            assert dual_obj == pytest.approx(res.objective, abs=1e-6)


class TestSolveQP:
    def test_scalar_bound(self):
        qp = QuadraticProgram(np.array([[2.0]]), np.array([0.0]),
                              ineq=(np.array([[-1.0]]), np.array([-1.0])))
        res = solve_qp(qp)
        assert res.ok
        assert res.primal[0] == pytest.approx(1.0, abs=1e-7)

    def test_box_projection(self):
        # min ||x - (2,2)||^2 subject to x <= (1,1)
        qp = QuadraticProgram(2 * np.eye(2), np.array([-4.0, -4.0]),
                              ineq=(np.eye(2), np.ones(2)))
        res = solve_qp(qp)
        assert res.ok
        np.testing.assert_allclose(res.primal, [1.0, 1.0], atol=1e-7)

    def test_unconstrained_matches_linear_solve(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            n = int(rng.integers(2, 6))
            M = rng.standard_normal((n, n))
            H = M @ M.T + 0.5 * np.eye(n)
            c = rng.standard_normal(n)
            qp = QuadraticProgram(H, c)
            res = solve_qp(qp)
            assert res.ok
            np.testing.assert_allclose(res.primal, -np.linalg.solve(H, c),
                                       atol=1e-6)

    def test_infeasible_status(self):
        qp = QuadraticProgram(np.eye(1), np.zeros(1),
                              ineq=(np.array([[1.0], [-1.0]]),
                                    np.array([1.0, -2.0])))
        res = solve_qp(qp)
        assert res.status == "infeasible"

    def test_stationarity_recorded(self):
        qp = QuadraticProgram(2 * np.eye(2), np.array([-4.0, -4.0]),
                              ineq=(np.eye(2), np.ones(2)))
        res = solve_qp(qp)
        assert res.ok
        assert res.extra["stationarity"] <= 1e-6

    @pytest.mark.parametrize("backend", ["cvxopt", "osqp"])
    def test_zero_hessian_routes_lps(self, backend):
        # an LP passed as a QP with zero Hessian must agree with solve_lp
        rng = np.random.default_rng(23)
        for _ in range(5):
            lp = _random_bounded_lp(rng)
            res_lp = solve_lp(lp)
            qp = QuadraticProgram(np.zeros((4, 4)), lp.objective, ineq=lp.ineq)
            res_qp = solve_qp(qp, backend=backend)
            assert res_lp.ok and res_qp.ok
            assert res_qp.objective == pytest.approx(res_lp.objective, abs=1e-6)

    def test_backends_agree(self):
        rng = np.random.default_rng(29)
        for _ in range(5):
            n = 6
            M = rng.standard_normal((n, n))
            H = M @ M.T + np.eye(n)
            c = rng.standard_normal(n)
            A = rng.standard_normal((8, n))
            b = A @ rng.standard_normal(n) + rng.uniform(0.1, 1.0, size=8)
            qp = QuadraticProgram(H, c, ineq=(A, b))
            r1 = solve_qp(qp, backend="cvxopt")
            r2 = solve_qp(qp, backend="osqp")
            assert r1.ok and r2.ok
            assert r1.objective == pytest.approx(r2.objective, abs=1e-6)

    def test_equality_constraints(self):
        # projection of the origin shifted by c onto a hyperplane sum(x) = 1
        H = 2 * np.eye(3)
        c = np.array([-2.0, 0.0, 0.0])
        qp = QuadraticProgram(H, c, eq=(np.ones((1, 3)), np.array([1.0])))
        res = solve_qp(qp)
        assert res.ok
        # KKT by hand: x = (1,0,0) + t*(1,1,1)/? -> solve analytically
        x = res.primal
        assert np.sum(x) == pytest.approx(1.0, abs=1e-8)
        grad = H @ x + c
        # gradient must be aligned with the equality normal
        assert np.max(np.abs(grad - grad.mean())) < 1e-6


class TestValidation:
    def test_rejects_asymmetric_hessian(self):
        with pytest.raises(ValueError):
            QuadraticProgram(np.array([[1.0, 1.0], [0.0, 1.0]]), np.zeros(2))

    def test_rejects_indefinite_hessian(self):
        with pytest.raises(ValueError):
            QuadraticProgram(np.array([[-1.0]]), np.zeros(1))

    def test_rejects_bad_dimensions(self):
        with pytest.raises(ValueError):
            LinearProgram(np.zeros(2), ineq=(np.eye(3), np.ones(3)))

    def test_rejects_nonfinite_rhs(self):
        with pytest.raises(ValueError):
            LinearProgram(np.zeros(1), ineq=(np.eye(1), np.array([np.inf])))
