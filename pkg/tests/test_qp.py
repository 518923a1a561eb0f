from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcaids.qp import INFEASIBLE, OPTIMAL, UNBOUNDED, solve_qp


def test_unconstrained_box_interior():
    # min (x-1)^2 + (y-2)^2 with x + y = 3 and loose bounds -> (1, 2)
    Q = 2 * np.eye(2)
    c = np.array([-2.0, -4.0])
    G = np.vstack([np.eye(2), -np.eye(2)])
    h = np.full(4, 10.0)
    r = solve_qp(Q, c, [[1, 1]], [3], G, h)
    assert r.status == OPTIMAL
    assert np.allclose(r.x, [1, 2])
    assert r.kkt_residual < 1e-10


def test_active_bound_and_multiplier():
    # min x^2 + y^2, x + y = 2, x <= 0.5 -> (0.5, 1.5), multiplier on x <= 0.5 is 2
    Q = 2 * np.eye(2)
    r = solve_qp(Q, np.zeros(2), [[1, 1]], [2], [[1, 0]], [0.5])
    assert r.status == OPTIMAL
    assert np.allclose(r.x, [0.5, 1.5])
    assert r.active == [0]
    assert r.ineq_multipliers[0] == pytest.approx(2.0)


def test_linear_program_vertex():
    # min -x - 2y over the simplex-like polygon
    G = np.array([[1, 1], [-1, 0], [0, -1], [0, 1]], dtype=float)
    h = np.array([4, 0, 0, 3], dtype=float)
    r = solve_qp(np.zeros((2, 2)), np.array([-1.0, -2.0]), np.zeros((0, 2)), [], G, h)
    assert r.status == OPTIMAL
    assert np.allclose(r.x, [1, 3])


def test_infeasible_detected():
    r = solve_qp(np.eye(1), np.zeros(1), [[1]], [5], [[1]], [2])
    assert r.status == INFEASIBLE
    assert r.infeasibility > 1


def test_unbounded_lp():
    r = solve_qp(np.zeros((1, 1)), np.array([-1.0]), np.zeros((0, 1)), [], [[-1]], [0])
    assert r.status == UNBOUNDED


def test_degenerate_lp_terminates():
    # many redundant constraints through the optimum
    G = np.array([[1, 1], [1, 2], [2, 1], [1, 0], [0, 1], [-1, 0], [0, -1]], dtype=float)
    h = np.array([2, 3, 3, 1, 1, 0, 0], dtype=float)
    r = solve_qp(np.zeros((2, 2)), np.array([-1.0, -1.0]), np.zeros((0, 2)), [], G, h)
    assert r.status == OPTIMAL
    assert -r.x.sum() == pytest.approx(-2.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_random_convex_qp_matches_cvxpy(seed):
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    M = rng.normal(size=(n, n))
    Q = M @ M.T + 0.1 * np.eye(n)
    c = rng.normal(size=n)
    G = rng.normal(size=(2 * n, n))
    x_feas = rng.normal(size=n)
    h = G @ x_feas + rng.uniform(0.1, 1.0, size=2 * n)
    A = rng.normal(size=(1, n))
    b = A @ x_feas
    r = solve_qp(Q, c, A, b, G, h)
    x = cp.Variable(n)
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, Q) + c @ x), [A @ x == b, G @ x <= h])
    prob.solve()
    assert r.status == OPTIMAL
    assert r.objective == pytest.approx(prob.value, rel=1e-6, abs=1e-6)
    assert r.kkt_residual < 1e-6
