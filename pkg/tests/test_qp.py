"""Tests for the dense active-set QP solver.

The box-constrained cases are checked against an independent accelerated
projected-gradient reference implemented here; the general inequality cases
are checked through first-order optimality residuals computed from their
definitions rather than from solver internals.
"""

import numpy as np
import pytest

from quadmpc.qp import kkt_residuals, solve_qp


def _fista_box(H, q, lo, hi, iters=60000, tol=1e-13):
    """Accelerated projected gradient for min 1/2 u'Hu + q'u, lo <= u <= hi."""
    L = float(np.max(np.linalg.eigvalsh(H)))
    u = np.clip(np.zeros(H.shape[0]), lo, hi)
    y = u.copy()
    t = 1.0
    for _ in range(iters):
        u_new = np.clip(y - (H @ y + q) / L, lo, hi)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y_new = u_new + ((t - 1.0) / t_new) * (u_new - u)
        if np.dot(y - u_new, u_new - u) > 0.0:
            # momentum points uphill, restart
            y_new = u_new.copy()
            t_new = 1.0
        if np.max(np.abs(u_new - u)) <= tol * max(1.0, np.max(np.abs(u_new))):
            return u_new
        u, y, t = u_new, y_new, t_new
    return u


def _random_spd(rng, n, cond=50.0):
    M = rng.standard_normal((n, n))
    u_, _, vt = np.linalg.svd(M)
    s = np.geomspace(1.0, 1.0 / cond, n)
    return (u_ * s) @ u_.T


def _pyramid_constraints(n_feet, mu, f_min, f_max):
    """Friction rows for [fx fy fz] per foot, two-sided form."""
    n = 3 * n_feet
    rows, lo, hi = [], [], []
    for k in range(n_feet):
        ex, ey, ez = (np.eye(n)[3 * k + i] for i in range(3))
        rows += [ex - mu * ez, ex + mu * ez, ey - mu * ez, ey + mu * ez, ez]
        lo += [-np.inf, 0.0, -np.inf, 0.0, f_min]
        hi += [0.0, np.inf, 0.0, np.inf, f_max]
    return np.array(rows), np.array(lo), np.array(hi)


def test_box_qp_matches_projected_gradient_reference():
    rng = np.random.default_rng(7)
    for trial in range(150):
        n = int(rng.integers(2, 13))
        H = _random_spd(rng, n, cond=30.0)
        q = rng.standard_normal(n) * 2.0
        lo = rng.uniform(-2.0, 0.0, n)
        hi = lo + rng.uniform(0.2, 3.0, n)
        ref = _fista_box(H, q, lo, hi)
        sol = solve_qp(H, q, np.eye(n), lo, hi, u0=np.clip(np.zeros(n), lo, hi))
        assert sol.certified, f"trial {trial} not certified"
        assert np.max(np.abs(sol.u - ref)) <= 1e-6, (
            f"trial {trial}: |u - ref| = {np.max(np.abs(sol.u - ref)):.3e}")


def test_kkt_residuals_on_friction_pyramid_problems():
    rng = np.random.default_rng(11)
    mu, f_min, f_max = 0.4, 0.0, 120.0
    for trial in range(200):
        n_feet = int(rng.integers(1, 5))
        n = 3 * n_feet
        H = _random_spd(rng, n, cond=200.0)
        q = rng.standard_normal(n) * rng.uniform(1.0, 50.0)
        C, lo, hi = _pyramid_constraints(n_feet, mu, f_min, f_max)
        u0 = np.tile([0.0, 0.0, 0.5 * (f_min + f_max)], n_feet)
        sol = solve_qp(H, q, C, lo, hi, u0=u0)
        assert sol.certified
        res = kkt_residuals(H, q, C, lo, hi, sol.u, sol.lam_lo, sol.lam_hi)
        for name, val in res.items():
            assert val <= 1e-8, f"trial {trial}: {name} residual {val:.3e}"


def test_pyramid_rows_hold_to_tight_tolerance():
    rng = np.random.default_rng(3)
    mu, f_min, f_max = 0.4, 0.0, 120.0
    for _ in range(50):
        n_feet = 4
        n = 3 * n_feet
        H = _random_spd(rng, n, cond=100.0)
        q = rng.standard_normal(n) * 30.0
        C, lo, hi = _pyramid_constraints(n_feet, mu, f_min, f_max)
        u0 = np.tile([0.0, 0.0, 0.5 * f_max], n_feet)
        sol = solve_qp(H, q, C, lo, hi, u0=u0)
        f = sol.u.reshape(n_feet, 3)
        assert np.all(np.abs(f[:, 0]) <= mu * f[:, 2] + 1e-8)
        assert np.all(np.abs(f[:, 1]) <= mu * f[:, 2] + 1e-8)
        assert np.all(f[:, 2] >= f_min - 1e-8)
        assert np.all(f[:, 2] <= f_max + 1e-8)


def test_solution_is_bitwise_deterministic():
    rng = np.random.default_rng(19)
    n = 12
    H = _random_spd(rng, n)
    q = rng.standard_normal(n)
    C, lo, hi = _pyramid_constraints(4, 0.4, 0.0, 100.0)
    u0 = np.tile([0.0, 0.0, 50.0], 4)
    a = solve_qp(H.copy(), q.copy(), C.copy(), lo.copy(), hi.copy(), u0=u0.copy())
    b = solve_qp(H.copy(), q.copy(), C.copy(), lo.copy(), hi.copy(), u0=u0.copy())
    assert np.array_equal(a.u, b.u)
    assert np.array_equal(a.lam_lo, b.lam_lo)
    assert a.active_set == b.active_set


def test_warm_start_agrees_with_cold_start():
    rng = np.random.default_rng(23)
    n = 12
    C, lo, hi = _pyramid_constraints(4, 0.4, 0.0, 100.0)
    u0 = np.tile([0.0, 0.0, 50.0], 4)
    H = _random_spd(rng, n, cond=80.0)
    q = rng.standard_normal(n) * 10.0
    first = solve_qp(H, q, C, lo, hi, u0=u0)
    q2 = q + 0.01 * rng.standard_normal(n)
    cold = solve_qp(H, q2, C, lo, hi, u0=u0)
    warm = solve_qp(H, q2, C, lo, hi, u0=first.u)
    assert warm.certified and cold.certified
    assert abs(warm.objective - cold.objective) <= 1e-8
    assert np.max(np.abs(warm.u - cold.u)) <= 1e-6
    assert warm.iterations <= cold.iterations + 2


def test_unconstrained_and_empty_problems():
    rng = np.random.default_rng(5)
    n = 6
    H = _random_spd(rng, n)
    q = rng.standard_normal(n)
    sol = solve_qp(H, q, np.zeros((0, n)), np.zeros(0), np.zeros(0))
    assert np.allclose(sol.u, -np.linalg.solve(H, q), atol=1e-10)
    empty = solve_qp(np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0)),
                     np.zeros(0), np.zeros(0))
    assert empty.certified and empty.u.size == 0


def test_iteration_cap_returns_uncertified():
    rng = np.random.default_rng(9)
    n = 12
    H = _random_spd(rng, n)
    q = rng.standard_normal(n) * 100.0
    C, lo, hi = _pyramid_constraints(4, 0.4, 0.0, 10.0)
    u0 = np.tile([0.0, 0.0, 5.0], 4)
    sol = solve_qp(H, q, C, lo, hi, u0=u0, max_iter=1)
    assert not sol.certified
    assert "stationarity" in sol.kkt


def test_infeasible_start_is_rejected():
    H = np.eye(2)
    q = np.zeros(2)
    C = np.eye(2)
    with pytest.raises(ValueError):
        solve_qp(H, q, C, np.array([1.0, 1.0]), np.array([2.0, 2.0]),
                 u0=np.zeros(2))
