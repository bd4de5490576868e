"""Scalar math kernels compiled with numba.

Everything here is shared between the public modules (kinematics, gait) and
the 1 kHz simulator loop, so the same arithmetic runs in both places. All
functions take plain floats/arrays; no Python objects cross the boundary.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# Swing plan array layout (length 24, one per leg):
#  0      phi0 of the xy segment
#  1:5    x hermite: p0, v0, p1, v1        (v = dp/dphi over the full phase)
#  5:9    y hermite: p0, v0, p1, v1
#  9      z segment count (1.0 or 2.0)
#  10:16  z segment A: a0, a1, p0, v0, p1, v1
#  16:22  z segment B: a0, a1, p0, v0, p1, v1
#  22     liftoff z (kept across replans for the apex rule)
#  23     swing duration T_swing in seconds
PLAN_LEN = 24


@njit(cache=True)
def rot_z(psi):
    out = np.empty((3, 3))
    c, s = np.cos(psi), np.sin(psi)
    out[0, 0] = c; out[0, 1] = -s; out[0, 2] = 0.0
    out[1, 0] = s; out[1, 1] = c; out[1, 2] = 0.0
    out[2, 0] = 0.0; out[2, 1] = 0.0; out[2, 2] = 1.0
    return out


@njit(cache=True)
def rot_zyx(roll, pitch, yaw):
    """Body-to-world rotation for ZYX Euler angles: Rz(yaw) Ry(pitch) Rx(roll)."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    out = np.empty((3, 3))
    out[0, 0] = cy * cp
    out[0, 1] = cy * sp * sr - sy * cr
    out[0, 2] = cy * sp * cr + sy * sr
    out[1, 0] = sy * cp
    out[1, 1] = sy * sp * sr + cy * cr
    out[1, 2] = sy * sp * cr - cy * sr
    out[2, 0] = -sp
    out[2, 1] = cp * sr
    out[2, 2] = cp * cr
    return out


@njit(cache=True)
def euler_rates(roll, pitch, yaw, wx, wy, wz):
    """Exact ZYX Euler angle rates from a world-frame angular velocity.

    omega_world = Rz Ry ex*roll_dot + Rz ey*pitch_dot + ez*yaw_dot; solved in
    closed form. Singular at |pitch| = pi/2, which fall detection rules out.
    """
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    # columns of the rate map M: [Rz Ry ex, Rz ey, ez]
    # M = [[cy*cp, -sy, 0], [sy*cp, cy, 0], [-sp, 0, 1]]
    det = cp
    if abs(det) < 1e-9:
        det = 1e-9 if det >= 0 else -1e-9
    roll_dot = (cy * wx + sy * wy) / det
    pitch_dot = -sy * wx + cy * wy
    yaw_dot = wz + sp * (cy * wx + sy * wy) / det
    return roll_dot, pitch_dot, yaw_dot


# ----------------------------------------------------------------------------
# 3-DOF leg: abduction (roll) -> hip pitch -> knee pitch, links l_abd out of
# the abduction axis, l_thigh and l_shank hanging along -z at zero angles.
# Positive hip pitch swings the foot backward; the knee-backward branch keeps
# the knee angle in [-pi, 0].
# ----------------------------------------------------------------------------

@njit(cache=True)
def leg_fk(d, lt, ls, q0, q1, q2):
    """Foot position in the hip frame. d is the signed abduction offset."""
    s1, c1 = np.sin(q1), np.cos(q1)
    s12, c12 = np.sin(q1 + q2), np.cos(q1 + q2)
    gx = -lt * s1 - ls * s12
    gz = -lt * c1 - ls * c12
    c0, s0 = np.cos(q0), np.sin(q0)
    x = gx
    y = c0 * d - s0 * gz
    z = s0 * d + c0 * gz
    return x, y, z


@njit(cache=True)
def leg_jacobian(d, lt, ls, q0, q1, q2):
    s1, c1 = np.sin(q1), np.cos(q1)
    s12, c12 = np.sin(q1 + q2), np.cos(q1 + q2)
    gx = -lt * s1 - ls * s12
    gz = -lt * c1 - ls * c12
    c0, s0 = np.cos(q0), np.sin(q0)
    J = np.empty((3, 3))
    # d/dq0: rotate (gx, d, gz) by dRx/dq0
    J[0, 0] = 0.0
    J[1, 0] = -s0 * d - c0 * gz
    J[2, 0] = c0 * d - s0 * gz
    # d/dq1: Rx(q0) @ (gz, 0, -gx)
    J[0, 1] = gz
    J[1, 1] = -s0 * (-gx)
    J[2, 1] = c0 * (-gx)
    # d/dq2: Rx(q0) @ (-ls*c12, 0, ls*s12)
    J[0, 2] = -ls * c12
    J[1, 2] = -s0 * (ls * s12)
    J[2, 2] = c0 * (ls * s12)
    return J


@njit(cache=True)
def _wrap_pi(a):
    while a > np.pi:
        a -= 2.0 * np.pi
    while a <= -np.pi:
        a += 2.0 * np.pi
    return a


@njit(cache=True)
def _planar_2r(px, zp, lt, ls):
    """Hip/knee angles reaching (px, zp) in the post-abduction sagittal
    plane, knee-backward branch. Returns (q1, q2, reachable)."""
    ok = True
    r2 = px * px + zp * zp
    r = np.sqrt(r2)
    r_max = lt + ls
    r_min = abs(lt - ls)
    if r > r_max:
        ok = False
        scale = r_max / max(r, 1e-12)
        px *= scale
        zp *= scale
        r2 = r_max * r_max
    elif r < r_min + 1e-12:
        ok = False
        if r < 1e-12:
            zp = -(r_min + 1e-9)
        else:
            scale = (r_min + 1e-9) / r
            px *= scale
            zp *= scale
        r2 = (r_min + 1e-9) ** 2
    c2 = (r2 - lt * lt - ls * ls) / (2.0 * lt * ls)
    c2 = min(max(c2, -1.0), 1.0)
    q2 = -np.arccos(c2)
    u = ls * np.sin(q2)
    w = lt + ls * c2
    q1 = _wrap_pi(np.arctan2(-px, -zp) - np.arctan2(u, w))
    return q1, q2, ok


@njit(cache=True)
def leg_ik(d, lt, ls, px, py, pz, lo, hi):
    """Closed-form IK, knee-backward branch (knee angle <= 0).

    lo/hi are the 3-vector joint limits; of the two abduction branches, the
    one producing an in-limit solution wins (ties go to the smaller roll).
    Unreachable targets are projected onto the nearest reachable point and
    flagged. Returns (q0, q1, q2, ok).
    """
    ok = True
    rho2 = py * py + pz * pz
    d2 = d * d
    if rho2 < d2 + 1e-12:
        ok = False
        rho = np.sqrt(rho2)
        if rho < 1e-9:
            py_ = d
            pz_ = -1e-6
        else:
            scale = (abs(d) + 1e-6) / rho
            py_ = py * scale
            pz_ = pz * scale
        py, pz = py_, pz_
        rho2 = py * py + pz * pz
    a = np.arctan2(pz, py)
    half = np.arccos(min(max(d / np.sqrt(rho2), -1.0), 1.0))
    cand0 = _wrap_pi(a + half)
    cand1 = _wrap_pi(a - half)
    if abs(cand1) < abs(cand0):
        cand0, cand1 = cand1, cand0

    best = (0.0, 0.0, 0.0)
    best_ok = False
    have = False
    for ci in range(2):
        q0 = cand0 if ci == 0 else cand1
        zp = -np.sin(q0) * py + np.cos(q0) * pz
        q1, q2, planar_ok = _planar_2r(px, zp, lt, ls)
        # the hip range can exceed pi; move to the in-range alias if needed
        if q1 < lo[1] and q1 + 2.0 * np.pi <= hi[1]:
            q1 += 2.0 * np.pi
        elif q1 > hi[1] and q1 - 2.0 * np.pi >= lo[1]:
            q1 -= 2.0 * np.pi
        in_lim = (lo[0] - 1e-10 <= q0 <= hi[0] + 1e-10
                  and lo[1] - 1e-10 <= q1 <= hi[1] + 1e-10
                  and lo[2] - 1e-10 <= q2 <= hi[2] + 1e-10)
        if not have:
            best = (q0, q1, q2)
            best_ok = planar_ok
            have = True
            if in_lim:
                break
        elif in_lim:
            best = (q0, q1, q2)
            best_ok = planar_ok
            break
    q0, q1, q2 = best
    if not best_ok:
        ok = False
    return q0, q1, q2, ok


@njit(cache=True)
def solve3(A, b, damping):
    """Solve A x = b for 3x3 A with Tikhonov damping on near-singular A.

    Returns (x, flagged) where flagged means the damped pseudo-inverse path
    was taken.
    """
    M = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            M[i, j] = A[i, j]
    det = (M[0, 0] * (M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
           - M[0, 1] * (M[1, 0] * M[2, 2] - M[1, 2] * M[2, 0])
           + M[0, 2] * (M[1, 0] * M[2, 1] - M[1, 1] * M[2, 0]))
    flagged = abs(det) < 1e-6
    if flagged:
        # solve (A^T A + damping I) x = A^T b
        At = M.T.copy()
        N = At @ M
        for i in range(3):
            N[i, i] += damping
        rhs = At @ b
        x = np.linalg.solve(N, rhs)
        return x, True
    x = np.linalg.solve(M, b)
    return x, False


# ----------------------------------------------------------------------------
# Swing trajectory: cubic in xy, two-segment cubic in z with a clearance apex
# at phase 0.5. Segments are stored in Hermite form (position/derivative at
# both ends); replanning therefore preserves position and velocity at the
# replan instant by construction.
# ----------------------------------------------------------------------------

@njit(cache=True)
def _hermite(p0, v0, p1, v1, a0, a1, phi):
    h = a1 - a0
    if h < 1e-12:
        return p1, 0.0
    s = (phi - a0) / h
    if s < 0.0:
        s = 0.0
    elif s > 1.0:
        s = 1.0
    s2 = s * s
    s3 = s2 * s
    h00 = 2.0 * s3 - 3.0 * s2 + 1.0
    h10 = s3 - 2.0 * s2 + s
    h01 = -2.0 * s3 + 3.0 * s2
    h11 = s3 - s2
    p = h00 * p0 + h10 * h * v0 + h01 * p1 + h11 * h * v1
    d00 = 6.0 * s2 - 6.0 * s
    d10 = 3.0 * s2 - 4.0 * s + 1.0
    d01 = -6.0 * s2 + 6.0 * s
    d11 = 3.0 * s2 - 2.0 * s
    dp = (d00 * p0 + d01 * p1) / h + d10 * v0 + d11 * v1
    return p, dp


@njit(cache=True)
def plan_build(plan, sx, sy, sz, tx, ty, tz, height, t_swing):
    """Fresh swing plan from a liftoff point to a target."""
    apex = max(sz, tz) + height
    plan[0] = 0.0
    plan[1] = sx; plan[2] = 0.0; plan[3] = tx; plan[4] = 0.0
    plan[5] = sy; plan[6] = 0.0; plan[7] = ty; plan[8] = 0.0
    plan[9] = 2.0
    plan[10] = 0.0; plan[11] = 0.5; plan[12] = sz; plan[13] = 0.0
    plan[14] = apex; plan[15] = 0.0
    plan[16] = 0.5; plan[17] = 1.0; plan[18] = apex; plan[19] = 0.0
    plan[20] = tz; plan[21] = 0.0
    plan[22] = sz
    plan[23] = t_swing


@njit(cache=True)
def plan_eval(plan, phi):
    """Position and velocity at phase phi. Velocity is d(pos)/dphi / T_swing."""
    if phi < 0.0:
        phi = 0.0
    elif phi > 1.0:
        phi = 1.0
    px, dx = _hermite(plan[1], plan[2], plan[3], plan[4], plan[0], 1.0, phi)
    py, dy = _hermite(plan[5], plan[6], plan[7], plan[8], plan[0], 1.0, phi)
    if plan[9] >= 2.0 and phi <= plan[11]:
        pz, dz = _hermite(plan[12], plan[13], plan[14], plan[15], plan[10], plan[11], phi)
    elif plan[9] >= 2.0:
        pz, dz = _hermite(plan[18], plan[19], plan[20], plan[21], plan[16], plan[17], phi)
    else:
        pz, dz = _hermite(plan[12], plan[13], plan[14], plan[15], plan[10], plan[11], phi)
    t = plan[23]
    if t < 1e-9:
        t = 1e-9
    return px, py, pz, dx / t, dy / t, dz / t


@njit(cache=True)
def plan_replan(plan, phi, tx, ty, tz, height):
    """Retarget a plan mid-swing, keeping position/velocity continuous at phi."""
    if phi <= 0.0:
        plan_build(plan, plan[1], plan[5], plan[12], tx, ty, tz, height, plan[23])
        return
    if phi >= 1.0:
        phi = 1.0 - 1e-9
    px, py, pz, vx, vy, vz = plan_eval(plan, phi)
    t = plan[23]
    dx = vx * t
    dy = vy * t
    dz = vz * t
    plan[0] = phi
    plan[1] = px; plan[2] = dx; plan[3] = tx; plan[4] = 0.0
    plan[5] = py; plan[6] = dy; plan[7] = ty; plan[8] = 0.0
    if phi < 0.5:
        apex = max(plan[22], tz) + height
        plan[9] = 2.0
        plan[10] = phi; plan[11] = 0.5; plan[12] = pz; plan[13] = dz
        plan[14] = apex; plan[15] = 0.0
        plan[16] = 0.5; plan[17] = 1.0; plan[18] = apex; plan[19] = 0.0
        plan[20] = tz; plan[21] = 0.0
    else:
        plan[9] = 1.0
        plan[10] = phi; plan[11] = 1.0; plan[12] = pz; plan[13] = dz
        plan[14] = tz; plan[15] = 0.0


@njit(cache=True)
def foot_target(hx, hy, vx, vy, vcx, vcy, wz, t_stance, z0, k):
    """Touchdown point: hip shift by half a stance of travel, a velocity-error
    correction, and a capture-like cross term v x omega_cmd."""
    half = 0.5 * t_stance
    cap = 0.5 * np.sqrt(z0 / 9.81)
    tx = hx + half * vx + k * (vx - vcx) + cap * (vy * wz)
    ty = hy + half * vy + k * (vy - vcy) + cap * (-vx * wz)
    return tx, ty


# ----------------------------------------------------------------------------
# Terrain: kind 0 = flat z=0; kind 1 = stairs ascending +x (x0, rise, run);
# kind 2 = block field sampled on a grid with a flat apron around the origin.
# ----------------------------------------------------------------------------

@njit(cache=True)
def terrain_height(kind, p0, p1, p2, grid, gx0, gy0, cell, x, y):
    if kind == 1:
        x0, rise, run = p0, p1, p2
        if x < x0:
            return 0.0
        n = int(np.floor((x - x0) / run)) + 1
        return rise * n
    if kind == 2:
        i = int(np.floor((x - gx0) / cell))
        j = int(np.floor((y - gy0) / cell))
        if i < 0 or j < 0 or i >= grid.shape[0] or j >= grid.shape[1]:
            return 0.0
        return grid[i, j]
    return 0.0
