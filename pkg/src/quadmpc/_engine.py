"""Compiled 1 kHz inner loop: leg control, penalty contact, rigid-body step.

Two entry points share the same physics helpers so a raw-torque step and a
full control block produce bit-identical trajectories:

  physics_step  one 1 ms step with caller-supplied torques
  run_block     one control tick: n 1 ms steps with the leg controller
                (stance force mapping, swing tracking, touchdown handling)
                run inline and the tick-level commands held constant

Log row layout (88 columns), one row per 1 ms step:
    0       time (s)
    1:7     body pose  [roll, pitch, yaw, x, y, z]
    7:13    body twist [wx, wy, wz, vx, vy, vz] (world frame)
    13:25   q          12 joint angles, legs in FR FL RR RL order
    25:37   qd         12 joint velocities
    37:49   tau        12 applied motor torques
    49:61   f_cmd      12 commanded stance force components (world)
    61:65   s_phi      4 scheduled contact flags
    65:69   s_act      4 sensed contact flags (penetration > 0)
    69:75   comp       dalpha (3), da (3) applied this tick
    75:87   dq         12 swing joint offsets applied this tick
    87      fall flag (1.0 on the terminating row)

Per-leg mode, resolved each step from the schedule and the contact sensor:
stance with sensed contact applies the commanded ground force through the
transpose Jacobian; stance without sensed contact holds the touchdown
target (late contact); swing tracks the plan, and sensed contact late in
swing (phase > 0.75) promotes the leg to a position hold until the next
scheduled stance (early contact). A penetration jump above block_jump
between consecutive steps pins the foot at its last valid world position,
which is how step risers trap a swinging foot.
"""

import numpy as np
from numba import njit

from ._kernels import (
    euler_rates,
    leg_fk,
    leg_ik,
    leg_jacobian,
    plan_build,
    plan_eval,
    rot_zyx,
    solve3,
    terrain_height,
)

LOG_COLS = 88
GRAV = 9.81
N_INT = 5  # internal physics substeps per 1 ms step (roll-mode stability)
SWING_FRACTION = 0.9  # portion of the swing window used for travel


@njit(cache=True)
def _cross(a, b):
    out = np.empty(3)
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]
    return out


@njit(cache=True)
def _clip(x, lo, hi):
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


@njit(cache=True)
def _leg_state(body, q, qd, hip_offsets, side_signs, l_abd, l_thigh, l_shank):
    """Foot world positions, body-frame Jacobians, foot world velocities."""
    p = body[3:6]
    w = body[6:9]
    v = body[9:12]
    rot = rot_zyx(body[0], body[1], body[2])
    foot_w = np.empty((4, 3))
    jacs = np.empty((4, 3, 3))
    foot_v = np.empty((4, 3))
    for leg in range(4):
        d = side_signs[leg] * l_abd
        fx, fy, fz = leg_fk(d, l_thigh, l_shank,
                            q[3 * leg], q[3 * leg + 1], q[3 * leg + 2])
        local = hip_offsets[leg] + np.array([fx, fy, fz])
        foot_w[leg] = p + rot @ local
        jacs[leg] = leg_jacobian(d, l_thigh, l_shank,
                                 q[3 * leg], q[3 * leg + 1], q[3 * leg + 2])
        foot_v[leg] = v + _cross(w, rot @ local) \
            + rot @ (jacs[leg] @ qd[3 * leg:3 * leg + 3])
    return rot, foot_w, jacs, foot_v


@njit(cache=True)
def _contact_forces(foot_w, foot_v, k_n, d_n, mu_s, k_t, c_t,
                    tkind, tp0, tp1, tp2, tgrid, tgx0, tgy0, tcell,
                    anchor, anchor_on):
    """Spring-damper normal force plus anchored-spring Coulomb friction.

    Stiction is a tangential spring to an anchor point set at first touch;
    when the spring force would exceed the friction cone the anchor slides
    along the surface so the force stays on the cone. A stiffness-based
    stiction model stays stable at dt = 1 ms where a viscous regularization
    (slope mu*f_n/v_reg) would feed back through the body roll inertia with
    an amplification far beyond the explicit-Euler limit.
    """
    f_con = np.zeros((4, 3))
    s_act = np.zeros(4)
    for leg in range(4):
        h = terrain_height(tkind, tp0, tp1, tp2, tgrid, tgx0, tgy0, tcell,
                           foot_w[leg, 0], foot_w[leg, 1])
        delta = h - foot_w[leg, 2]
        if delta > 0.0:
            s_act[leg] = 1.0
            fn = k_n * delta - d_n * foot_v[leg, 2]
            if fn < 0.0:
                fn = 0.0
            if anchor_on[leg] == 0:
                anchor_on[leg] = 1
                anchor[leg, 0] = foot_w[leg, 0]
                anchor[leg, 1] = foot_w[leg, 1]
            fcap = mu_s * fn
            ftx = -k_t * (foot_w[leg, 0] - anchor[leg, 0])
            fty = -k_t * (foot_w[leg, 1] - anchor[leg, 1])
            smag = np.sqrt(ftx * ftx + fty * fty)
            if smag > fcap:
                # slide: drag the anchor until the spring alone sits on
                # the cone. The anchor update must look at the spring
                # only; trimming against the damped total would let the
                # anchor jump around and store energy it was never given.
                s = fcap / smag if smag > 1e-12 else 0.0
                ftx *= s
                fty *= s
                anchor[leg, 0] = foot_w[leg, 0] + ftx / k_t
                anchor[leg, 1] = foot_w[leg, 1] + fty / k_t
            ftx -= c_t * foot_v[leg, 0]
            fty -= c_t * foot_v[leg, 1]
            fmag = np.sqrt(ftx * ftx + fty * fty)
            if fmag > fcap:
                s = fcap / fmag if fmag > 1e-12 else 0.0
                ftx *= s
                fty *= s
            f_con[leg, 0] = ftx
            f_con[leg, 1] = fty
            f_con[leg, 2] = fn
        else:
            anchor_on[leg] = 0
    return f_con, s_act


@njit(cache=True)
def _integrate(body, q, qd, tau, rot, foot_w, jacs, f_con,
               hip_offsets, side_signs, l_abd, l_thigh, l_shank,
               q_lo, q_hi, qd_max, joint_inertia,
               mass_eff, com_body, inertia_eff, wrench6,
               tkind, tp0, tp1, tp2, tgrid, tgx0, tgy0, tcell,
               block_jump, delta_prev, dt):
    """Semi-implicit Euler update of joints and body, then riser blocking.

    tau must already respect the actuator limit. Mutates body, q, qd and
    delta_prev in place and returns the absolute actuator work done.
    """
    energy = 0.0

    # joints: virtual inertia driven by motor torque + contact reaction
    q_prev = q.copy()
    for leg in range(4):
        tau_c = jacs[leg].T @ (rot.T @ f_con[leg])
        for a in range(3):
            idx = 3 * leg + a
            energy += abs(tau[idx] * qd[idx]) * dt
            acc = (tau[idx] + tau_c[a]) / joint_inertia
            qd[idx] = _clip(qd[idx] + dt * acc, -qd_max, qd_max)
    for idx in range(12):
        # joint stop at the velocity level: the step lands exactly on the
        # limit instead of overshooting and projecting back, which would
        # teleport the foot and pump energy into the contact spring
        a = idx % 3
        lo_rate = (q_lo[a] - q[idx]) / dt
        hi_rate = (q_hi[a] - q[idx]) / dt
        if qd[idx] < lo_rate:
            qd[idx] = lo_rate
        elif qd[idx] > hi_rate:
            qd[idx] = hi_rate
        q[idx] += dt * qd[idx]

    # body: Newton-Euler about the (payload-merged) COM
    p = body[3:6]
    F = np.zeros(3)
    M = np.zeros(3)
    com_w = rot @ com_body
    p_com = p + com_w
    for leg in range(4):
        F += f_con[leg]
        M += _cross(foot_w[leg] - p_com, f_con[leg])
    F[2] -= mass_eff * GRAV
    F[0] += wrench6[0]
    F[1] += wrench6[1]
    F[2] += wrench6[2]
    M += _cross(-com_w, wrench6[0:3])
    M[0] += wrench6[3]
    M[1] += wrench6[4]
    M[2] += wrench6[5]

    iw = rot @ inertia_eff @ rot.T
    w = body[6:9]
    wdot, _sing = solve3(iw, M - _cross(w, iw @ w), 1e-9)
    a_origin = F / mass_eff - _cross(wdot, com_w) \
        - _cross(w, _cross(w, com_w))

    for a in range(3):
        body[6 + a] += dt * wdot[a]
        body[9 + a] += dt * a_origin[a]
    rr, rp, ry = euler_rates(body[0], body[1], body[2],
                             body[6], body[7], body[8])
    body[0] += dt * rr
    body[1] += dt * rp
    body[2] += dt * ry
    body[3] += dt * body[9]
    body[4] += dt * body[10]
    body[5] += dt * body[11]

    # kinematic blocking: pin feet whose penetration jumped into a riser
    rot_new = rot_zyx(body[0], body[1], body[2])
    p_new = body[3:6]
    for leg in range(4):
        d = side_signs[leg] * l_abd
        fx, fy, fz = leg_fk(d, l_thigh, l_shank,
                            q[3 * leg], q[3 * leg + 1], q[3 * leg + 2])
        local = hip_offsets[leg] + np.array([fx, fy, fz])
        fw = p_new + rot_new @ local
        h = terrain_height(tkind, tp0, tp1, tp2, tgrid, tgx0, tgy0, tcell,
                           fw[0], fw[1])
        delta_new = h - fw[2]
        base = delta_prev[leg] if delta_prev[leg] > 0.0 else 0.0
        if delta_new - base > block_jump:
            # pin at the last valid world position
            pin_local = rot_new.T @ (foot_w[leg] - p_new) - hip_offsets[leg]
            q0, q1, q2, _ok = leg_ik(d, l_thigh, l_shank,
                                     pin_local[0], pin_local[1],
                                     pin_local[2], q_lo, q_hi)
            q[3 * leg] = q0
            q[3 * leg + 1] = q1
            q[3 * leg + 2] = q2
            for a in range(3):
                qd[3 * leg + a] = (q[3 * leg + a] - q_prev[3 * leg + a]) / dt
            fx, fy, fz = leg_fk(d, l_thigh, l_shank, q0, q1, q2)
            local = hip_offsets[leg] + np.array([fx, fy, fz])
            fw = p_new + rot_new @ local
            h = terrain_height(tkind, tp0, tp1, tp2, tgrid,
                               tgx0, tgy0, tcell, fw[0], fw[1])
            delta_new = h - fw[2]
        delta_prev[leg] = delta_new

    return energy


@njit(cache=True)
def _advance_ms(body, q, qd, tau,
                hip_offsets, side_signs, l_abd, l_thigh, l_shank,
                q_lo, q_hi, qd_max, joint_inertia,
                k_n, d_n, mu_s, k_t, c_t, block_jump,
                mass_eff, com_body, inertia_eff,
                tkind, tp0, tp1, tp2, tgrid, tgx0, tgy0, tcell,
                wrench6, delta_prev, anchor, anchor_on, dt):
    """Integrate one control step of length dt as N_INT physics substeps.

    Torque is held constant over the step; contact forces are re-evaluated
    at every substep. The finer grid keeps the penalty damper stable in the
    roll direction, where the lever arm of the feet amplifies d_n well past
    what the body translation modes see.
    """
    energy = 0.0
    h = dt / N_INT
    for _ in range(N_INT):
        rot, foot_w, jacs, foot_v = _leg_state(body, q, qd, hip_offsets,
                                               side_signs, l_abd,
                                               l_thigh, l_shank)
        f_con, s_act = _contact_forces(foot_w, foot_v, k_n, d_n, mu_s,
                                       k_t, c_t, tkind, tp0, tp1, tp2,
                                       tgrid, tgx0, tgy0, tcell,
                                       anchor, anchor_on)
        energy += _integrate(body, q, qd, tau, rot, foot_w, jacs, f_con,
                             hip_offsets, side_signs, l_abd, l_thigh, l_shank,
                             q_lo, q_hi, qd_max, joint_inertia,
                             mass_eff, com_body, inertia_eff, wrench6,
                             tkind, tp0, tp1, tp2, tgrid, tgx0, tgy0, tcell,
                             block_jump, delta_prev, h)
    return energy


@njit(cache=True)
def physics_step(body, q, qd, tau_in,
                 hip_offsets, side_signs, l_abd, l_thigh, l_shank,
                 q_lo, q_hi, tau_max, qd_max, joint_inertia,
                 k_n, d_n, mu_s, k_t, c_t, block_jump,
                 mass_eff, com_body, inertia_eff,
                 tkind, tp0, tp1, tp2, tgrid, tgx0, tgy0, tcell,
                 wrench6, delta_prev, anchor, anchor_on, dt):
    """One 1 ms step under raw joint torques. Returns (s_act, f_con, energy).

    s_act and f_con report the contact state at the start of the step.
    """
    tau = np.empty(12)
    for idx in range(12):
        tau[idx] = _clip(tau_in[idx], -tau_max, tau_max)
    rot, foot_w, jacs, foot_v = _leg_state(body, q, qd, hip_offsets,
                                           side_signs, l_abd, l_thigh, l_shank)
    f_con, s_act = _contact_forces(foot_w, foot_v, k_n, d_n, mu_s, k_t, c_t,
                                   tkind, tp0, tp1, tp2, tgrid,
                                   tgx0, tgy0, tcell,
                                   anchor.copy(), anchor_on.copy())
    energy = _advance_ms(body, q, qd, tau,
                         hip_offsets, side_signs, l_abd, l_thigh, l_shank,
                         q_lo, q_hi, qd_max, joint_inertia,
                         k_n, d_n, mu_s, k_t, c_t, block_jump,
                         mass_eff, com_body, inertia_eff,
                         tkind, tp0, tp1, tp2, tgrid, tgx0, tgy0, tcell,
                         wrench6, delta_prev, anchor, anchor_on, dt)
    return s_act, f_con, energy


@njit(cache=True)
def run_block(n_sub, dt, t0,
              body, q, qd,
              plans, targets, swing_height, f_cmd, dq, comp,
              cycle, duty, offsets,
              hip_offsets, side_signs, l_abd, l_thigh, l_shank,
              q_lo, q_hi, kp, kd, tau_max, qd_max, joint_inertia,
              k_n, d_n, mu_s, k_t, c_t, block_jump,
              mass_eff, com_body, inertia_eff,
              tkind, tp0, tp1, tp2, tgrid, tgx0, tgy0, tcell,
              wrench_rows,
              prev_sched, hold_flag, hold_pt, delta_prev, anchor, anchor_on,
              log):
    """Advance n_sub 1 ms steps of leg control + physics.

    body: [roll,pitch,yaw, x,y,z, wx,wy,wz, vx,vy,vz], mutated in place
    along with q, qd, plans and the latch arrays. log must be (n_sub, 88).
    Returns (steps_done, fell, energy_abs).
    """
    energy = 0.0
    fell = False
    steps = 0
    t_swing = (1.0 - duty) * cycle
    qd_prev = qd.copy()
    acc_est = np.zeros(12)

    for i in range(n_sub):
        t = t0 + i * dt
        p = body[3:6]
        w = body[6:9]
        v = body[9:12]
        if i > 0:
            for idx in range(12):
                acc_est[idx] = (qd[idx] - qd_prev[idx]) / dt
            qd_prev[:] = qd
        rot, foot_w, jacs, foot_v = _leg_state(body, q, qd, hip_offsets,
                                               side_signs, l_abd,
                                               l_thigh, l_shank)
        f_con, s_act = _contact_forces(foot_w, foot_v, k_n, d_n, mu_s,
                                       k_t, c_t, tkind, tp0, tp1, tp2, tgrid,
                                       tgx0, tgy0, tcell,
                                       anchor.copy(), anchor_on.copy())

        # --- gait schedule and per-leg control -----------------------------
        tau = np.zeros(12)
        s_phi = np.zeros(4)
        for leg in range(4):
            s = (t / cycle + offsets[leg]) % 1.0
            sched_contact = s < duty
            if sched_contact:
                s_phi[leg] = 1.0
                phase = s / duty
            else:
                phase = (s - duty) / (1.0 - duty)

            # liftoff edge: rebuild the swing plan from the current foot
            if prev_sched[leg] == 1 and not sched_contact:
                plan_build(plans[leg],
                           foot_w[leg, 0], foot_w[leg, 1], foot_w[leg, 2],
                           targets[leg, 0], targets[leg, 1], targets[leg, 2],
                           swing_height, t_swing)
                hold_flag[leg] = 0
            prev_sched[leg] = 1 if sched_contact else 0

            d = side_signs[leg] * l_abd
            j3 = jacs[leg]

            if sched_contact and s_act[leg] > 0.0:
                # stance: commanded ground force through the transpose
                # Jacobian, plus the inertial torque the joints need to keep
                # sweeping with the body so the contact force is not skewed
                # by joint acceleration
                hold_flag[leg] = 0
                tl = j3.T @ (rot.T @ (-f_cmd[leg]))
                for a in range(3):
                    idx = 3 * leg + a
                    fa = _clip(joint_inertia * acc_est[idx], -3.0, 3.0)
                    tau[idx] = _clip(tl[a] + fa, -tau_max, tau_max)
                continue

            if not sched_contact and hold_flag[leg] == 0 \
                    and phase > 0.75 and s_act[leg] > 0.0:
                # early touchdown: hold where the foot landed
                hold_flag[leg] = 1
                hold_pt[leg, 0] = foot_w[leg, 0]
                hold_pt[leg, 1] = foot_w[leg, 1]
                hold_pt[leg, 2] = foot_w[leg, 2]

            ff = np.zeros(3)
            if sched_contact or hold_flag[leg] == 1:
                # position hold in the world: late contact keeps pressing at
                # the point its swing was landing on, not the target already
                # re-predicted for the next cycle
                if hold_flag[leg] == 1:
                    hx_, hy_, hz_ = hold_pt[leg, 0], hold_pt[leg, 1], \
                        hold_pt[leg, 2]
                else:
                    hx_, hy_, hz_, _hv0, _hv1, _hv2 = plan_eval(plans[leg],
                                                                1.0)
                    if s_act[leg] == 0.0:
                        # not loaded yet: probe below the surface so the
                        # foot develops force on schedule. The swing PD is
                        # soft in foot space (kp through the Jacobian), so
                        # this depth buys only a few tens of newtons.
                        hz_ -= 0.03
                local = rot.T @ (np.array([hx_, hy_, hz_]) - p) \
                    - hip_offsets[leg]
                q0, q1, q2, _ok = leg_ik(d, l_thigh, l_shank,
                                         local[0], local[1], local[2],
                                         q_lo, q_hi)
                # feedforward that keeps the foot stationary in the world
                v_hip = v + _cross(w, rot @ hip_offsets[leg])
                qd_des, _flag = solve3(j3, rot.T @ (-v_hip), 1e-3)
            else:
                # swing: track the plan, joint offsets added to the IK pose.
                # The plan is finished a little early so the foot is already
                # stationary on the surface when stance is scheduled.
                ph = phase / SWING_FRACTION
                if ph > 1.0:
                    ph = 1.0
                px, py, pz, vx, vy, vz = plan_eval(plans[leg], ph)
                if ph >= 1.0:
                    vx = 0.0
                    vy = 0.0
                    vz = 0.0
                else:
                    vx /= SWING_FRACTION
                    vy /= SWING_FRACTION
                    vz /= SWING_FRACTION
                local = rot.T @ (np.array([px, py, pz]) - p) - hip_offsets[leg]
                q0, q1, q2, _ok = leg_ik(d, l_thigh, l_shank,
                                         local[0], local[1], local[2],
                                         q_lo, q_hi)
                q0 += dq[3 * leg]
                q1 += dq[3 * leg + 1]
                q2 += dq[3 * leg + 2]
                v_hip = v + _cross(w, rot @ hip_offsets[leg])
                v_rel = rot.T @ (np.array([vx, vy, vz]) - v_hip)
                qd_des, _flag = solve3(j3, v_rel, 1e-3)
                # acceleration feedforward: exact inverse of the
                # double-integrator joint model, so the PD only cleans up
                pm = ph - dt / (t_swing * SWING_FRACTION)
                if pm < 0.0:
                    pm = 0.0
                _px, _py, _pz, vxm, vym, vzm = plan_eval(plans[leg], pm)
                if ph < 1.0:
                    vxm /= SWING_FRACTION
                    vym /= SWING_FRACTION
                    vzm /= SWING_FRACTION
                else:
                    vxm = 0.0
                    vym = 0.0
                    vzm = 0.0
                v_relm = rot.T @ (np.array([vxm, vym, vzm]) - v_hip)
                qd_desm, _flag2 = solve3(j3, v_relm, 1e-3)
                for a in range(3):
                    ff[a] = joint_inertia * (qd_des[a] - qd_desm[a]) / dt

            q0 = _clip(q0, q_lo[0], q_hi[0])
            q1 = _clip(q1, q_lo[1], q_hi[1])
            q2 = _clip(q2, q_lo[2], q_hi[2])
            t0_ = ff[0] + kp * (q0 - q[3 * leg]) \
                + kd * (qd_des[0] - qd[3 * leg])
            t1_ = ff[1] + kp * (q1 - q[3 * leg + 1]) \
                + kd * (qd_des[1] - qd[3 * leg + 1])
            t2_ = ff[2] + kp * (q2 - q[3 * leg + 2]) \
                + kd * (qd_des[2] - qd[3 * leg + 2])
            tau[3 * leg] = _clip(t0_, -tau_max, tau_max)
            tau[3 * leg + 1] = _clip(t1_, -tau_max, tau_max)
            tau[3 * leg + 2] = _clip(t2_, -tau_max, tau_max)

        # --- log row (state at step start, commands applied over the step) -
        row = log[i]
        row[0] = t
        for a in range(6):
            row[1 + a] = body[a]
            row[7 + a] = body[6 + a]
        for a in range(12):
            row[13 + a] = q[a]
            row[25 + a] = qd[a]
            row[37 + a] = tau[a]
        for leg in range(4):
            for a in range(3):
                row[49 + 3 * leg + a] = f_cmd[leg, a]
            row[61 + leg] = s_phi[leg]
            row[65 + leg] = s_act[leg]
        for a in range(6):
            row[69 + a] = comp[a]
        for a in range(12):
            row[75 + a] = dq[a]
        row[87] = 0.0

        energy += _advance_ms(body, q, qd, tau,
                              hip_offsets, side_signs, l_abd, l_thigh, l_shank,
                              q_lo, q_hi, qd_max, joint_inertia,
                              k_n, d_n, mu_s, k_t, c_t, block_jump,
                              mass_eff, com_body, inertia_eff,
                              tkind, tp0, tp1, tp2, tgrid, tgx0, tgy0, tcell,
                              wrench_rows[i], delta_prev, anchor, anchor_on,
                              dt)
        steps = i + 1

        # --- fall detection on the post-step state -------------------------
        ground_b = terrain_height(tkind, tp0, tp1, tp2, tgrid, tgx0, tgy0,
                                  tcell, body[3], body[4])
        if (abs(body[0]) > 1.0 or abs(body[1]) > 1.0
                or body[5] - ground_b < 0.12):
            row[87] = 1.0
            fell = True
            break

    return steps, fell, energy
