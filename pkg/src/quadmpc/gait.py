"""Gait scheduling, heuristic foot placement and swing interpolation.

The scheduler is a pure function of time: leg i is in contact iff the
fractional cycle phase (t/cycle + offset_i mod 1) lies below the duty
factor. Swing trajectories are cubic segments stored in a flat plan array
(see _kernels.PLAN_LEN) so the Python API and the compiled inner loop
evaluate bit-identical curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import PLAN_LEN, foot_target, plan_build, plan_eval, plan_replan
from .kinematics import LegConfig
from .mpc import GaitTable

PLACEMENT_GAIN = 0.03  # velocity-error gain k in the placement heuristic
REFLECTION_BOUND = 0.3  # rad, offset authority around the nominal swing


@dataclass
class GaitSchedule:
    cycle_time: float
    duty_factor: float
    phase_offsets: np.ndarray

    def __post_init__(self):
        self.phase_offsets = np.asarray(self.phase_offsets, dtype=float).reshape(4)
        if self.cycle_time <= 0.0:
            raise ValueError("cycle time must be positive")
        if not 0.0 < self.duty_factor <= 1.0:
            raise ValueError("duty factor must lie in (0, 1]")
        if np.any(self.phase_offsets < 0.0) or np.any(self.phase_offsets >= 1.0):
            raise ValueError("phase offsets must lie in [0, 1)")

    @property
    def t_stance(self) -> float:
        return self.duty_factor * self.cycle_time

    @property
    def t_swing(self) -> float:
        return (1.0 - self.duty_factor) * self.cycle_time


_GAITS = {
    "trot": GaitSchedule(0.3, 0.5, np.array([0.0, 0.5, 0.5, 0.0])),
    "flying_trot": GaitSchedule(0.3, 0.4, np.array([0.0, 0.5, 0.5, 0.0])),
    "stand": GaitSchedule(0.3, 1.0, np.zeros(4)),
}


def gait_preset(name: str) -> GaitSchedule:
    if name not in _GAITS:
        raise KeyError(f"unknown gait '{name}', have {sorted(_GAITS)}")
    g = _GAITS[name]
    return GaitSchedule(g.cycle_time, g.duty_factor, g.phase_offsets.copy())


@dataclass
class PhaseState:
    """Per-leg contact flag and normalized phase within stance or swing."""

    contact: np.ndarray
    phase: np.ndarray


def advance_gait(sched: GaitSchedule, t: float) -> PhaseState:
    if t < 0.0:
        raise ValueError("time must be nonnegative")
    contact = np.zeros(4, dtype=bool)
    phase = np.zeros(4)
    for leg in range(4):
        s = (t / sched.cycle_time + sched.phase_offsets[leg]) % 1.0
        if s < sched.duty_factor:
            contact[leg] = True
            phase[leg] = s / sched.duty_factor
        else:
            contact[leg] = False
            phase[leg] = (s - sched.duty_factor) / (1.0 - sched.duty_factor)
    return PhaseState(contact=contact, phase=phase)


def contact_plan(sched: GaitSchedule, t: float, dt: float, n: int) -> GaitTable:
    rows = np.zeros((n, 4), dtype=bool)
    for i in range(n):
        rows[i] = advance_gait(sched, t + i * dt).contact
    return GaitTable(rows)


def foot_placement_heuristic(hip_world, v, v_cmd, omega_cmd_z: float,
                             t_stance: float, z0: float) -> np.ndarray:
    """Touchdown target: half-stance travel from the hip, a velocity-error
    correction with gain k, and a capture-like cross term v x omega_cmd.
    The returned point lies in the terrain frame (z = 0)."""
    if z0 <= 0.0:
        raise ValueError("body height must be positive")
    hip_world = np.asarray(hip_world, dtype=float).reshape(3)
    v = np.asarray(v, dtype=float).reshape(3)
    v_cmd = np.asarray(v_cmd, dtype=float).reshape(3)
    tx, ty = foot_target(hip_world[0], hip_world[1], v[0], v[1],
                         v_cmd[0], v_cmd[1], float(omega_cmd_z),
                         t_stance, z0, PLACEMENT_GAIN)
    return np.array([tx, ty, 0.0])


def _hermite_to_bezier(p0, v0, p1, v1, span):
    """Cubic Hermite over a phase span as a Bezier control polygon."""
    return (p0, p0 + span * v0 / 3.0, p1 - span * v1 / 3.0, p1)


@dataclass
class SwingPlan:
    """Swing trajectory: cubic in xy, two vertical segments peaking at the
    apex clearance above the higher endpoint at phase 0.5."""

    start: np.ndarray
    target: np.ndarray
    height: float
    t_swing: float
    data: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.start = np.asarray(self.start, dtype=float).reshape(3)
        self.target = np.asarray(self.target, dtype=float).reshape(3)
        if self.t_swing <= 0.0:
            raise ValueError("swing duration must be positive")
        if self.data is None:
            self.data = np.zeros(PLAN_LEN)
            plan_build(self.data, self.start[0], self.start[1], self.start[2],
                       self.target[0], self.target[1], self.target[2],
                       self.height, self.t_swing)

    def position(self, phase: float):
        """Foot position (m) and velocity (m/s) at a phase in [0, 1]."""
        if not 0.0 <= phase <= 1.0:
            raise ValueError("phase must lie in [0, 1]")
        px, py, pz, vx, vy, vz = plan_eval(self.data, float(phase))
        return np.array([px, py, pz]), np.array([vx, vy, vz])

    def replan(self, phase: float, target) -> None:
        """Redirect the remaining swing to a new target; position and
        velocity at the replan instant are preserved by construction."""
        target = np.asarray(target, dtype=float).reshape(3)
        plan_replan(self.data, float(phase), target[0], target[1], target[2],
                    self.height)
        self.target = target

    @property
    def control_points(self) -> dict:
        """Bezier control polygons per axis (xy one segment, z two)."""
        d = self.data
        span_xy = 1.0 - d[0]
        out = {
            "x": _hermite_to_bezier(d[1], d[2], d[3], d[4], span_xy),
            "y": _hermite_to_bezier(d[5], d[6], d[7], d[8], span_xy),
        }
        segs = []
        for base in (10, 16)[:int(d[9])]:
            a0, a1, p0, v0, p1, v1 = d[base:base + 6]
            segs.append(_hermite_to_bezier(p0, v0, p1, v1, a1 - a0))
        out["z"] = tuple(segs)
        return out


def apply_reflection(q_ik, dq, cfg: LegConfig,
                     bound: float = REFLECTION_BOUND):
    """Offset the nominal swing joint angles by a bounded residual.

    Returns the clamped command and a flag set when the offset had to be
    cut at its authority bound or at a joint limit.
    """
    q_ik = np.asarray(q_ik, dtype=float).reshape(3)
    dq = np.asarray(dq, dtype=float).reshape(3)
    dq_c = np.clip(dq, -bound, bound)
    q_des = np.clip(q_ik + dq_c, cfg.q_lo, cfg.q_hi)
    flagged = bool(np.any(dq_c != dq) or np.any(q_des != q_ik + dq_c))
    return q_des, flagged
