"""Robot presets: A1, Go1, AlienGo.

Masses and link lengths follow the vendor datasheets; inertias and hip
placements are approximations adequate for a single-rigid-body controller.
Leg order everywhere is [FR, FL, RR, RL]; side signs give the abduction
offset direction (+y is the robot's left).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import LegConfig
from .model import RobotParams

LEG_NAMES = ("FR", "FL", "RR", "RL")
SIDE_SIGNS = np.array([-1.0, 1.0, -1.0, 1.0])


@dataclass
class ControlGains:
    """Low-level leg control and force limits used by controller and sim."""

    kp: float = 40.0
    kd: float = 2.0
    joint_inertia: float = 0.025  # virtual joint inertia for the massless legs
    f_min: float = 0.0
    f_max: float = 0.0  # filled per robot: one body weight per foot
    mu: float = 0.4


@dataclass
class RobotPreset:
    body: RobotParams
    leg: LegConfig
    gains: ControlGains
    side_signs: np.ndarray = field(default_factory=lambda: SIDE_SIGNS.copy())

    @property
    def name(self) -> str:
        return self.body.name


def _hips(lx: float, ly: float) -> np.ndarray:
    return np.array([
        [lx, -ly, 0.0],
        [lx, ly, 0.0],
        [-lx, -ly, 0.0],
        [-lx, ly, 0.0],
    ])


_BODIES = {
    "a1": dict(
        mass=12.05,
        inertia=np.diag([0.017, 0.057, 0.064]),
        hips=_hips(0.183, 0.047),
        z0=0.28,
        leg=dict(l_abd=0.0838, l_thigh=0.2, l_shank=0.2, tau_max=33.5, qd_max=21.0),
    ),
    "go1": dict(
        mass=12.0,
        inertia=np.diag([0.016, 0.054, 0.057]),
        hips=_hips(0.1881, 0.04675),
        z0=0.30,
        leg=dict(l_abd=0.08, l_thigh=0.213, l_shank=0.213, tau_max=23.7, qd_max=30.0),
    ),
    "aliengo": dict(
        mass=20.6,
        inertia=np.diag([0.05, 0.18, 0.20]),
        hips=_hips(0.2399, 0.051),
        z0=0.35,
        leg=dict(l_abd=0.0868, l_thigh=0.25, l_shank=0.25, tau_max=44.4, qd_max=20.0),
    ),
}


def robot_preset(name: str) -> RobotParams:
    d = _BODIES[name.lower()]
    return RobotParams(name=name.lower(), mass=d["mass"], inertia_body=d["inertia"],
                       hip_offsets=d["hips"], z0=d["z0"])


def leg_preset(name: str) -> LegConfig:
    d = _BODIES[name.lower()]["leg"]
    return LegConfig(**d)


def full_preset(name: str) -> RobotPreset:
    body = robot_preset(name)
    gains = ControlGains()
    # per-foot cap: two body weights, the headroom a half-duty gait needs
    # for recovery pulses while staying realizable through the leg levers
    gains.f_max = 2.0 * body.mass * 9.81
    return RobotPreset(body=body, leg=leg_preset(name), gains=gains)


def preset_names() -> tuple:
    return tuple(_BODIES)
