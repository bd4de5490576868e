"""Tick-level locomotion controller: gait, placement, MPC, residual hooks.

One controller drives all three operating modes through the same code path:

  baseline   force-optimizing MPC over the nominal rigid-body model
  augmented  baseline plus residuals from a learned policy: model
             compensation (dalpha, da) entering the MPC dynamics and joint
             offsets dq added to the swing tracking targets
  oracle     residuals computed analytically from a known disturbance
             (payload and scheduled wrenches), an upper-bound comparator

An all-zero policy makes the augmented path bit-identical to baseline: the
residuals are exact zeros and every MPC input is unchanged.
"""

from __future__ import annotations

import time

import numpy as np

from ._kernels import rot_zyx
from .gait import (
    GaitSchedule,
    advance_gait,
    contact_plan,
    foot_placement_heuristic,
    gait_preset,
)
from .kinematics import fk
from .model import Compensation
from .mpc import Command, FrictionParams, MpcResult, MpcWeights, mpc_tick
from .presets import RobotPreset
from .sim import DisturbanceSpec, Terrain, TickCommand, TickObservation

MODES = ("baseline", "augmented", "oracle")

OBS_FRAME = 68  # features per tick
OBS_HISTORY = 5  # stacked ticks seen by the policy
QD_SCALE = 10.0  # rad/s, joint velocity normalization
TARGET_SCALE = 0.3  # m, touchdown-target offset normalization


def _rot_z(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class LocomotionController:
    """Stateful 30 ms controller: call tick() once per control period."""

    def __init__(self, robot: RobotPreset, gait: GaitSchedule | str = "trot",
                 mode: str = "baseline", policy=None,
                 known_disturbance: DisturbanceSpec | None = None,
                 terrain: Terrain | None = None,
                 weights: MpcWeights | None = None,
                 friction: FrictionParams | None = None,
                 horizon: int = 10, dt_mpc: float = 0.03,
                 swing_height: float = 0.08, mpc_tol: float = 1e-6) -> None:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if mode == "augmented" and policy is None:
            raise ValueError("augmented mode needs a policy")
        if mode == "oracle" and known_disturbance is None:
            raise ValueError("oracle mode needs the known disturbance")
        self.robot = robot
        self.gait = gait_preset(gait) if isinstance(gait, str) else gait
        self.mode = mode
        self.policy = policy
        self.known_disturbance = known_disturbance
        self.terrain = terrain if terrain is not None else Terrain.flat()
        self.weights = weights if weights is not None else MpcWeights()
        if friction is None:
            g = robot.gains
            f_max = g.f_max if g.f_max > 0 else robot.body.mass * 9.81
            friction = FrictionParams(mu=g.mu, f_min=g.f_min, f_max=f_max)
        self.friction = friction
        self.horizon = int(horizon)
        self.dt_mpc = float(dt_mpc)
        self.swing_height = float(swing_height)
        self.mpc_tol = float(mpc_tol)
        self.reset()

    def reset(self) -> None:
        self._prev: MpcResult | None = None
        self._prev_forces = np.zeros((4, 3))
        self._history: list = []
        self._mpc_s: list = []
        self._policy_s: list = []
        self.last_result: MpcResult | None = None
        self.uncertified_ticks = 0

    # -- policy observation ---------------------------------------------------

    def _frame(self, obs: TickObservation, s_phi: np.ndarray,
               targets: np.ndarray, hips_w: np.ndarray) -> np.ndarray:
        """One 68-feature tick frame in the heading frame, fixed scales."""
        yaw = obs.state.yaw
        rz_t = _rot_z(yaw).T
        parts = [
            obs.joints_q,
            obs.joints_qd / QD_SCALE,
            rz_t @ obs.state.pdot,
            rz_t @ obs.state.omega,
            s_phi.astype(float),
            obs.s_actual.astype(float),
            obs.v_des,
            obs.omega_des,
            (rz_t @ (targets - hips_w).T).T.ravel() / TARGET_SCALE,
            # forces as accelerations: per-leg F/m, so the feature reads
            # the same across robots of different mass
            (rz_t @ self._prev_forces.T).T.ravel() / self.robot.body.mass,
        ]
        return np.concatenate(parts)

    def observation(self) -> np.ndarray:
        """Stacked history, oldest tick first, (OBS_HISTORY*OBS_FRAME,)."""
        if not self._history:
            return np.zeros(OBS_HISTORY * OBS_FRAME)
        frames = self._history
        if len(frames) < OBS_HISTORY:
            pad = [np.zeros(OBS_FRAME)] * (OBS_HISTORY - len(frames))
            frames = pad + frames
        return np.concatenate(frames[-OBS_HISTORY:])

    # -- residuals -------------------------------------------------------------

    def _oracle_residuals(self, t: float, yaw: float,
                          rot: np.ndarray) -> tuple:
        """Model compensation from a known payload and wrench schedule.

        The payload enters as its weight (a force at the payload offset);
        the result is the compensation that makes the nominal model match
        the disturbed plant at the operating point.
        """
        spec = self.known_disturbance
        wrench = spec.wrench_at(t)
        f_ext = wrench[0:3].copy()
        m_ext = wrench[3:6].copy()
        if spec.payload_mass > 0.0:
            g_force = np.array([0.0, 0.0, -spec.payload_mass * 9.81])
            f_ext += g_force
            m_ext += np.cross(rot @ spec.payload_offset, g_force)
        da = f_ext / self.robot.body.mass
        dalpha = np.linalg.solve(self.robot.body.inertia_world(yaw), m_ext)
        return dalpha, da

    # -- main tick ----------------------------------------------------------

    def tick(self, obs: TickObservation) -> TickCommand:
        t = obs.time
        state = obs.state
        phs = advance_gait(self.gait, t)
        rot = rot_zyx(state.theta[0], state.theta[1], state.theta[2])

        feet = np.empty((4, 3))
        hips_w = np.empty((4, 3))
        for leg in range(4):
            hips_w[leg] = state.p + rot @ self.robot.body.hip_offsets[leg]
            local = self.robot.body.hip_offsets[leg] + fk(
                self.robot.leg, self.robot.side_signs[leg],
                obs.joints_q[3 * leg:3 * leg + 3])
            feet[leg] = state.p + rot @ local

        v_cmd_w = _rot_z(state.yaw) @ obs.v_des
        targets = np.empty((4, 3))
        for leg in range(4):
            # advance the hip to where it will be at touchdown, otherwise the
            # foot lands one swing of travel behind the body at speed
            if self.gait.duty_factor >= 1.0:
                t_td = 0.0
            elif phs.contact[leg]:
                t_td = (1.0 - phs.phase[leg]) * self.gait.t_stance \
                    + self.gait.t_swing
            else:
                t_td = (1.0 - phs.phase[leg]) * self.gait.t_swing
            hip_td = hips_w[leg] + t_td * state.pdot
            tgt = foot_placement_heuristic(
                hip_td, state.pdot, v_cmd_w, obs.omega_des[2],
                self.gait.t_stance, self.robot.body.z0)
            targets[leg, 0] = tgt[0]
            targets[leg, 1] = tgt[1]
            targets[leg, 2] = self.terrain.height(tgt[0], tgt[1])

        dalpha = np.zeros(3)
        da = np.zeros(3)
        dq = np.zeros(12)
        if self.mode == "oracle":
            dalpha, da = self._oracle_residuals(t, state.yaw, rot)
        elif self.mode == "augmented":
            start = time.perf_counter()
            frame = self._frame(obs, phs.contact, targets, hips_w)
            self._history.append(frame)
            if len(self._history) > OBS_HISTORY:
                self._history.pop(0)
            action = np.asarray(self.policy.act(self.observation()),
                                dtype=float).reshape(18)
            dalpha = action[0:3]
            da = action[3:6]
            dq = action[6:18]
            self._policy_s.append(time.perf_counter() - start)

        gait_table = contact_plan(self.gait, t, self.dt_mpc, self.horizon)
        cmd = Command(v_des=obs.v_des, omega_des=obs.omega_des,
                      z0=self.robot.body.z0)
        comp = Compensation(dalpha=dalpha, da=da)
        start = time.perf_counter()
        result = mpc_tick(state, feet, gait_table, cmd, comp,
                          self.robot.body, self.weights, self.friction,
                          dt=self.dt_mpc, prev=self._prev, tol=self.mpc_tol)
        self._mpc_s.append(time.perf_counter() - start)
        if not result.certified:
            self.uncertified_ticks += 1
        self._prev = result
        self.last_result = result
        self._prev_forces = result.forces.copy()

        return TickCommand(forces=result.forces, targets=targets, dq=dq,
                           comp=np.concatenate([dalpha, da]))

    # -- instrumentation -----------------------------------------------------

    def timing_summary(self) -> dict:
        out = {}
        if self._mpc_s:
            out["mpc_ms_mean"] = 1e3 * float(np.mean(self._mpc_s))
            out["mpc_ms_max"] = 1e3 * float(np.max(self._mpc_s))
        if self._policy_s:
            out["policy_ms_mean"] = 1e3 * float(np.mean(self._policy_s))
        out["uncertified_ticks"] = self.uncertified_ticks
        return out

    def timing_samples(self) -> dict:
        """Raw per-tick wall-clock samples in milliseconds."""
        return {"mpc_ms": 1e3 * np.asarray(self._mpc_s, dtype=float),
                "policy_ms": 1e3 * np.asarray(self._policy_s, dtype=float)}
