"""Dense convex QP solver with KKT certificates.

Solves   min  1/2 u^T H u + q^T u   s.t.  c_lo <= C u <= c_hi

with H strictly positive definite. The method is a primal active-set
iteration computed in the null space of the working constraints: a QR
factorization of the active rows is updated incrementally, and each step
direction is p = Z p_z with Z the orthonormal null-space basis. Constructing
p inside the null space keeps the iterate on the active manifold to machine
precision even when H carries near-null directions many orders below its
dominant eigenvalues, which is exactly the regime of a force-regularized
receding-horizon cost. Ties break on the lowest row index, which makes the
solver bitwise deterministic.

Infeasibility cannot occur for the stance problems built by the MPC layer:
with f_min = 0 the all-zero force vector satisfies every friction-pyramid
row (0 <= mu * 0) and the box rows, so a feasible start always exists and
the caller can fall back to it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr, qr_delete, qr_insert, \
    solve_triangular


@dataclass
class QpSolution:
    u: np.ndarray
    lam_lo: np.ndarray
    lam_hi: np.ndarray
    objective: float
    kkt: dict
    iterations: int
    certified: bool
    solve_time: float
    active_set: tuple = ()


def kkt_residuals(H, q, C, c_lo, c_hi, u, lam_lo, lam_hi) -> dict:
    """Stationarity, primal, dual and complementarity residuals (inf norms).

    Lagrangian: 1/2 u^T H u + q^T u + lam_lo^T (c_lo - Cu) + lam_hi^T (Cu - c_hi).
    """
    if C.shape[0] == 0:
        grad = H @ u + q
        return {
            "stationarity": float(np.max(np.abs(grad))) if u.size else 0.0,
            "primal": 0.0,
            "dual": 0.0,
            "complementarity": 0.0,
        }
    cu = C @ u
    grad = H @ u + q - C.T @ lam_lo + C.T @ lam_hi
    lo_viol = np.where(np.isfinite(c_lo), c_lo - cu, -np.inf)
    hi_viol = np.where(np.isfinite(c_hi), cu - c_hi, -np.inf)
    primal = max(float(np.max(lo_viol, initial=-np.inf)),
                 float(np.max(hi_viol, initial=-np.inf)), 0.0)
    dual = max(float(np.max(-lam_lo, initial=0.0)),
               float(np.max(-lam_hi, initial=0.0)), 0.0)
    comp_lo = np.abs(lam_lo * np.where(np.isfinite(c_lo), cu - c_lo, 0.0))
    comp_hi = np.abs(lam_hi * np.where(np.isfinite(c_hi), c_hi - cu, 0.0))
    comp = max(float(np.max(comp_lo, initial=0.0)),
               float(np.max(comp_hi, initial=0.0)))
    return {
        "stationarity": float(np.max(np.abs(grad))),
        "primal": primal,
        "dual": dual,
        "complementarity": comp,
    }


def _one_sided(C, c_lo, c_hi):
    """Expand two-sided rows into >=-form (a^T u >= b) with back-references."""
    rows = []
    for i in range(C.shape[0]):
        if np.isfinite(c_lo[i]):
            rows.append((C[i], c_lo[i], i, 0))
        if np.isfinite(c_hi[i]):
            rows.append((-C[i], -c_hi[i], i, 1))
    if not rows:
        return np.zeros((0, C.shape[1])), np.zeros(0), np.zeros((0, 2), dtype=int)
    A = np.array([r[0] for r in rows])
    b = np.array([r[1] for r in rows])
    ref = np.array([[r[2], r[3]] for r in rows], dtype=int)
    return A, b, ref


def solve_qp(H, q, C, c_lo, c_hi, u0=None, tol=1e-9, max_iter=None) -> QpSolution:
    """Active-set solve. u0 must be feasible if given; the caller provides a
    trivially feasible start for MPC problems (zero or clamped warm start).

    On hitting the iteration cap the best iterate is returned flagged
    certified=False; residuals in `kkt` still describe it honestly.
    """
    t0 = time.perf_counter()
    n = H.shape[0]
    if n == 0:
        return QpSolution(u=np.zeros(0), lam_lo=np.zeros(C.shape[0]),
                          lam_hi=np.zeros(C.shape[0]), objective=0.0,
                          kkt={"stationarity": 0.0, "primal": 0.0, "dual": 0.0,
                               "complementarity": 0.0},
                          iterations=0, certified=True,
                          solve_time=time.perf_counter() - t0)
    H_in = np.asarray(H, dtype=float)
    q_in = np.asarray(q, dtype=float).reshape(n)
    C = np.asarray(C, dtype=float).reshape(-1, n)
    c_lo = np.asarray(c_lo, dtype=float).reshape(C.shape[0])
    c_hi = np.asarray(c_hi, dtype=float).reshape(C.shape[0])

    # normalize the objective by a power of two: exact in floating point, so
    # uniformly rescaled weights give bit-identical iterates, and internal
    # tolerances become scale-free
    d_max = float(np.max(np.abs(np.diag(H_in))))
    s = 2.0 ** np.floor(np.log2(d_max)) if d_max > 0.0 else 1.0
    H = H_in / s
    q = q_in / s

    chol = cho_factor(H, lower=True, check_finite=False)
    A, b, ref = _one_sided(C, c_lo, c_hi)
    m = A.shape[0]
    if max_iter is None:
        max_iter = 50 + 10 * m

    u = np.zeros(n) if u0 is None else np.asarray(u0, dtype=float).copy()
    slack = A @ u - b if m else np.zeros(0)
    if m and np.min(slack) < -1e-9:
        raise ValueError("u0 is infeasible for the constraint set")

    # QR of the active rows stacked as columns: A_W^T = Q_ R_; the trailing
    # n-k columns of Q_ span the null space of the working set
    work: list[int] = []
    in_work = np.zeros(m, dtype=bool)
    Q_ = np.eye(n)
    R_ = np.zeros((n, 0))

    def add_row(j):
        nonlocal Q_, R_
        k = len(work)
        Q_, R_ = qr_insert(Q_, R_, A[j], k, which="col")
        work.append(j)
        in_work[j] = True

    def drop_row(t_):
        nonlocal Q_, R_
        Q_, R_ = qr_delete(Q_, R_, t_, which="col")
        in_work[work.pop(t_)] = False

    def independent(j):
        """Row j has a component outside the span of the working set."""
        if not work:
            return True
        z_part = Q_[:, len(work):].T @ A[j]
        return float(np.linalg.norm(z_part)) > 1e-8 * float(np.linalg.norm(A[j]))

    # seed the working set with an independent subset of the rows active at
    # u0; for a shifted warm start this recovers last tick's vertex in one
    # factorization instead of one add per iteration
    if m:
        cand = np.flatnonzero(slack <= 1e-10 * (1.0 + np.abs(b)))
        if cand.size:
            _, r_piv, piv = qr(A[cand].T, mode="economic", pivoting=True)
            diag = np.abs(np.diag(r_piv))
            keep = int(np.sum(diag > 1e-10 * max(diag[0], 1e-300))) if diag.size else 0
            chosen = sorted(int(cand[piv[t]]) for t in range(min(keep, n)))
            if chosen:
                Q_, R_ = qr(A[chosen].T, mode="full")
                work = [int(j) for j in chosen]
                in_work[work] = True

    certified = False
    it = 0
    while it < max_iter:
        it += 1
        g = H @ u + q
        k = len(work)
        if k == 0:
            p = -cho_solve(chol, g, check_finite=False)
        elif k < n:
            Z = Q_[:, k:]
            W = Z.T @ H @ Z
            W = 0.5 * (W + W.T)
            p_z = -cho_solve(cho_factor(W, lower=True, check_finite=False),
                             Z.T @ g, check_finite=False)
            p = Z @ p_z
        else:
            p = np.zeros(n)

        # declare the subproblem solved when the step is tiny or when the
        # achievable objective decrease (-g'p/2 for an exact KKT step) is at
        # rounding level; the latter matters when the force-regularization
        # eigenvalues sit many orders below the state-cost eigenvalues
        scale = max(1.0, float(np.max(np.abs(u))))
        obj_now = 0.5 * float(u @ g + q @ u)
        decrease = -0.5 * float(g @ p)
        if (float(np.max(np.abs(p))) <= tol * scale
                or decrease <= 1e-14 * (1.0 + abs(obj_now))):
            if not work:
                certified = True
                break
            lam = solve_triangular(R_[:k, :k], Q_[:, :k].T @ (g + H @ p))
            t_min = int(np.argmin(lam))
            if lam[t_min] >= -tol * (1.0 + float(np.max(np.abs(lam)))):
                certified = True
                break
            drop_row(t_min)
            continue

        # step to the nearest blocking constraint
        alpha = 1.0
        block = -1
        if m:
            ap = A @ p
            p_norm = float(np.linalg.norm(p))
            cand = (~in_work) & (ap < -1e-13)
            ratios = np.full(m, np.inf)
            if np.any(cand):
                ratios[cand] = np.maximum((b[cand] - A[cand] @ u) / ap[cand], 0.0)
            while True:
                j = int(np.argmin(ratios))  # first minimum: lowest row index
                if ratios[j] >= alpha - 1e-15:
                    break
                if ap[j] >= -1e-6 * p_norm and not independent(j):
                    # a row spanned by the working set keeps constant slack
                    # along every feasible direction; its tiny negative ap is
                    # rounding noise, not a real blocking constraint
                    ratios[j] = np.inf
                    continue
                alpha = ratios[j]
                block = j
                break
        u = u + alpha * p
        if block >= 0:
            add_row(block)

    lam_lo = np.zeros(C.shape[0])
    lam_hi = np.zeros(C.shape[0])
    if work:
        k = len(work)
        g = H @ u + q
        lam = solve_triangular(R_[:k, :k], Q_[:, :k].T @ g)
        for lam_j, j in zip(lam, work):
            lam_j = lam_j * s  # undo the objective normalization
            i, side = ref[j]
            if side == 0:
                lam_lo[i] = max(lam_j, 0.0) if certified else lam_j
            else:
                lam_hi[i] = max(lam_j, 0.0) if certified else lam_j

    obj = float(0.5 * u @ (H_in @ u) + q_in @ u)
    kkt = kkt_residuals(H_in, q_in, C, c_lo, c_hi, u, lam_lo, lam_hi)
    return QpSolution(u=u, lam_lo=lam_lo, lam_hi=lam_hi, objective=obj,
                      kkt=kkt, iterations=it, certified=certified,
                      solve_time=time.perf_counter() - t0,
                      active_set=tuple(work))
