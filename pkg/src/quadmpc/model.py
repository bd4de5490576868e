"""Acceleration-compensated single rigid body model.

State is x = [theta, p, omega, pdot, 1] in R^13: ZYX Euler angles, COM
position, world angular velocity, COM velocity, plus a constant-1 slot that
carries gravity and the compensation accelerations as an affine term.

Continuous dynamics are linear in x once yaw and foot positions are frozen:

    theta_dot = Rz(psi)^T omega
    p_dot     = pdot
    omega_dot = sum_i Ihat^-1 [r_i]x f_i + dalpha
    pdot_dot  = sum_i f_i / m + g + da

with Ihat = Rz(psi) I_body Rz(psi)^T and r_i the foot-to-COM offset. The
system matrix is nilpotent (A_c^3 = 0), so the zero-order-hold discretization
has an exact closed form; no matrix exponential is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAVITY = np.array([0.0, 0.0, -9.81])

NX = 13  # augmented state dimension


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _rot_z(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([
        [c, -s, 0.0],
        [s, c, 0.0],
        [0.0, 0.0, 1.0],
    ])


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries: {arr!r}")


@dataclass
class BodyState:
    """Rigid-body state: Euler angles (roll, pitch, yaw), position, world
    angular velocity, linear velocity."""

    theta: np.ndarray
    p: np.ndarray
    omega: np.ndarray
    pdot: np.ndarray

    def __post_init__(self) -> None:
        for name in ("theta", "p", "omega", "pdot"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(3)
            _check_finite(name, v)
            setattr(self, name, v)

    @property
    def yaw(self) -> float:
        return float(self.theta[2])


@dataclass
class Compensation:
    """Residual accelerations injected into the model: dalpha (angular,
    rad/s^2) and da (linear, m/s^2). Zero means the nominal model."""

    dalpha: np.ndarray = field(default_factory=lambda: np.zeros(3))
    da: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.dalpha = np.asarray(self.dalpha, dtype=float).reshape(3)
        self.da = np.asarray(self.da, dtype=float).reshape(3)
        _check_finite("dalpha", self.dalpha)
        _check_finite("da", self.da)

    @classmethod
    def zero(cls) -> "Compensation":
        return cls()


@dataclass
class RobotParams:
    """Mass/inertia and mounting geometry of one robot preset.

    hip_offsets holds the four hip (abduction joint) positions in the body
    frame, leg order [FR, FL, RR, RL].
    """

    name: str
    mass: float
    inertia_body: np.ndarray  # 3x3, body frame, about the COM
    hip_offsets: np.ndarray  # 4x3
    z0: float  # nominal standing height

    def __post_init__(self) -> None:
        self.inertia_body = np.asarray(self.inertia_body, dtype=float).reshape(3, 3)
        self.hip_offsets = np.asarray(self.hip_offsets, dtype=float).reshape(4, 3)
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        _check_finite("inertia_body", self.inertia_body)
        if not np.allclose(self.inertia_body, self.inertia_body.T):
            raise ValueError("inertia_body must be symmetric")

    def inertia_world(self, yaw: float) -> np.ndarray:
        """Inertia rotated by yaw only: Rz I Rz^T (world-frame approximation
        at small roll/pitch)."""
        rz = _rot_z(yaw)
        return rz @ self.inertia_body @ rz.T


@dataclass
class ContinuousDynamics:
    A_c: np.ndarray  # 13x13
    B_c: np.ndarray  # 13x(3*n_stance)
    stance_legs: tuple  # indices into the 4-leg ordering


@dataclass
class DiscreteDynamics:
    A_d: np.ndarray
    B_d: np.ndarray
    dt: float
    stance_legs: tuple


def augment_state(state: BodyState) -> np.ndarray:
    """Pack a BodyState into the 13-vector [theta, p, omega, pdot, 1]."""
    x = np.concatenate([state.theta, state.p, state.omega, state.pdot, [1.0]])
    return x


def build_continuous_dynamics(
    state: BodyState,
    feet: np.ndarray,
    stance: np.ndarray,
    params: RobotParams,
    comp: Compensation | None = None,
) -> ContinuousDynamics:
    """Assemble (A_c, B_c) around the current yaw and foot placement.

    feet: 4x3 world foot positions; stance: length-4 boolean mask. Only
    stance feet get force columns; swing feet are simply absent from B_c.
    """
    comp = comp or Compensation.zero()
    feet = np.asarray(feet, dtype=float).reshape(4, 3)
    stance = np.asarray(stance, dtype=bool).reshape(4)
    _check_finite("feet", feet)

    rz = _rot_z(state.yaw)
    inv_inertia = np.linalg.inv(params.inertia_world(state.yaw))

    A = np.zeros((NX, NX))
    # theta_dot = Rz^T omega: the yaw-linearized inverse of the Euler rate
    # map (the world angular velocity expressed in the yaw frame).
    A[0:3, 6:9] = rz.T
    A[3:6, 9:12] = np.eye(3)
    A[6:9, 12] = comp.dalpha
    A[9:12, 12] = GRAVITY + comp.da

    legs = tuple(int(i) for i in np.flatnonzero(stance))
    B = np.zeros((NX, 3 * len(legs)))
    for k, i in enumerate(legs):
        r = feet[i] - state.p
        B[6:9, 3 * k:3 * k + 3] = inv_inertia @ _skew(r)
        B[9:12, 3 * k:3 * k + 3] = np.eye(3) / params.mass
    return ContinuousDynamics(A_c=A, B_c=B, stance_legs=legs)


def discretize(cont: ContinuousDynamics, dt: float) -> DiscreteDynamics:
    """Exact zero-order-hold discretization.

    A_c is nilpotent of index 3, so the exponential series truncates:
        A_d = I + A dt + A^2 dt^2/2
        B_d = (I dt + A dt^2/2 + A^2 dt^3/6) B_c
    """
    if dt <= 0 or not np.isfinite(dt):
        raise ValueError(f"dt must be a positive finite number, got {dt}")
    A = cont.A_c
    A2 = A @ A
    A_d = np.eye(NX) + A * dt + A2 * (dt * dt / 2.0)
    B_d = (np.eye(NX) * dt + A * (dt * dt / 2.0) + A2 * (dt ** 3 / 6.0)) @ cont.B_c
    return DiscreteDynamics(A_d=A_d, B_d=B_d, dt=dt, stance_legs=cont.stance_legs)


def predict(dyn: DiscreteDynamics, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One discrete step x' = A_d x + B_d u. u stacks stance-foot forces."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape[0] != NX:
        raise ValueError(f"state must have dimension {NX}, got {x.shape[0]}")
    if u.shape[0] != dyn.B_d.shape[1]:
        raise ValueError(
            f"force vector has dimension {u.shape[0]}, expected {dyn.B_d.shape[1]}"
        )
    _check_finite("x", x)
    _check_finite("u", u)
    return dyn.A_d @ x + dyn.B_d @ u
