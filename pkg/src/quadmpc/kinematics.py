"""3-DOF leg kinematics: abduction roll, hip pitch, knee pitch.

Conventions fixed here and used everywhere else:
  - hip frame: origin at the abduction joint, axes parallel to the body frame
  - q = [abduction, hip_pitch, knee]; at q = 0 the foot hangs at
    [0, side * l_abd, -(l_thigh + l_shank)]
  - the IK always picks the knee-backward branch (knee angle <= 0)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K


@dataclass
class LegConfig:
    l_abd: float
    l_thigh: float
    l_shank: float
    q_lo: np.ndarray = field(default_factory=lambda: np.array([-0.80, -1.05, -2.70]))
    q_hi: np.ndarray = field(default_factory=lambda: np.array([0.80, 4.19, 0.0]))
    tau_max: float = 33.5
    qd_max: float = 21.0

    def __post_init__(self) -> None:
        self.q_lo = np.asarray(self.q_lo, dtype=float).reshape(3)
        self.q_hi = np.asarray(self.q_hi, dtype=float).reshape(3)
        if np.any(self.q_hi <= self.q_lo):
            raise ValueError("joint limits must satisfy q_lo < q_hi")
        for name in ("l_abd", "l_thigh", "l_shank"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class JointState:
    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=float).reshape(3)
        self.qd = np.asarray(self.qd, dtype=float).reshape(3)


def fk(cfg: LegConfig, side: float, q: np.ndarray) -> np.ndarray:
    """Foot position in the hip frame. side is +1 (left) or -1 (right)."""
    x, y, z = K.leg_fk(side * cfg.l_abd, cfg.l_thigh, cfg.l_shank,
                       float(q[0]), float(q[1]), float(q[2]))
    return np.array([x, y, z])


def ik(cfg: LegConfig, side: float, p: np.ndarray) -> tuple[np.ndarray, bool]:
    """Joint angles for a hip-frame foot target.

    Unreachable targets are projected to the nearest reachable point and
    reported with reachable=False. The result is clamped to joint limits.
    """
    q0, q1, q2, ok = K.leg_ik(side * cfg.l_abd, cfg.l_thigh, cfg.l_shank,
                              float(p[0]), float(p[1]), float(p[2]),
                              cfg.q_lo, cfg.q_hi)
    q = np.array([q0, q1, q2])
    clamped = np.clip(q, cfg.q_lo, cfg.q_hi)
    if np.max(np.abs(clamped - q)) > 1e-12:
        ok = False
    return clamped, bool(ok)


def jacobian(cfg: LegConfig, side: float, q: np.ndarray) -> np.ndarray:
    """d(foot position)/dq in the hip frame, 3x3."""
    return K.leg_jacobian(side * cfg.l_abd, cfg.l_thigh, cfg.l_shank,
                          float(q[0]), float(q[1]), float(q[2]))


def stance_torques(cfg: LegConfig, side: float, q: np.ndarray,
                   f_world: np.ndarray, r_body: np.ndarray) -> np.ndarray:
    """Joint torques realising a desired ground reaction force on the body.

    tau = J^T R^T (-f): the leg pushes against the ground with -f so the
    ground pushes back with f_world.
    """
    J = jacobian(cfg, side, q)
    return J.T @ (r_body.T @ (-np.asarray(f_world, dtype=float)))


def swing_torques(q_des: np.ndarray, qd_des: np.ndarray, q: np.ndarray,
                  qd: np.ndarray, kp: float, kd: float,
                  tau_max: float) -> np.ndarray:
    """Joint PD with symmetric torque clamp."""
    tau = kp * (np.asarray(q_des) - np.asarray(q)) + kd * (np.asarray(qd_des) - np.asarray(qd))
    return np.clip(tau, -tau_max, tau_max)
