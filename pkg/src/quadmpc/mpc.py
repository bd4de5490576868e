"""Horizon force optimization over the compensated rigid-body model.

Each control tick condenses the discrete dynamics over an N-step horizon
into a dense QP in the stacked stance-foot ground reaction forces,

    min_U  (X - X_ref)^T Qbar (X - X_ref) + r U^T U
    s.t.   friction pyramid per stance foot per step,

with X = A_qp x0 + B_qp U eliminated. Swing feet contribute no decision
variables, so an all-flight horizon yields an empty QP.

The force regularization r must sit far below the state weights: at the
static optimum the forces deviate from perfect support by a factor of
roughly r m^2 / K where K aggregates the height and vertical-velocity
weights over the horizon. The default r = 1e-9 keeps the standing support
sum within about 1e-5 N of m g while leaving the condensed Hessian well
enough conditioned for the active-set certificates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    NX,
    BodyState,
    Compensation,
    DiscreteDynamics,
    RobotParams,
    augment_state,
    build_continuous_dynamics,
    discretize,
)
from .qp import QpSolution, kkt_residuals, solve_qp

N_LEGS = 4

DEFAULT_Q_DIAG = np.array(
    [25.0, 25.0, 10.0, 2.0, 2.0, 50.0, 0.5, 0.5, 0.3, 1.5, 1.5, 1.0, 0.0])
DEFAULT_R_FORCE = 1e-9


@dataclass
class GaitTable:
    """Planned contact booleans, one row per horizon step."""

    contact: np.ndarray

    def __post_init__(self):
        self.contact = np.asarray(self.contact, dtype=bool)
        if self.contact.ndim != 2 or self.contact.shape[1] != N_LEGS:
            raise ValueError("contact table must be N x 4")
        if self.contact.shape[0] < 1:
            raise ValueError("horizon must contain at least one step")

    @property
    def horizon(self) -> int:
        return self.contact.shape[0]


@dataclass
class MpcWeights:
    q_diag: np.ndarray = field(default_factory=lambda: DEFAULT_Q_DIAG.copy())
    r_force: float = DEFAULT_R_FORCE

    def __post_init__(self):
        self.q_diag = np.asarray(self.q_diag, dtype=float).reshape(NX)
        if not np.all(np.isfinite(self.q_diag)) or np.any(self.q_diag < 0.0):
            raise ValueError("state weights must be finite and nonnegative")
        if self.q_diag[-1] != 0.0:
            raise ValueError("the constant-state weight must be zero")
        if not np.isfinite(self.r_force) or self.r_force <= 0.0:
            raise ValueError("force regularization must be positive")


@dataclass
class FrictionParams:
    mu: float = 0.4
    f_min: float = 0.0
    f_max: float = 120.0

    def __post_init__(self):
        if self.mu <= 0.0:
            raise ValueError("friction coefficient must be positive")
        if not 0.0 <= self.f_min < self.f_max:
            raise ValueError("need 0 <= f_min < f_max")


@dataclass
class Command:
    """Commanded body motion: heading-frame velocity, turn rate, height."""

    v_des: np.ndarray
    omega_des: np.ndarray
    z0: float

    def __post_init__(self):
        self.v_des = np.asarray(self.v_des, dtype=float).reshape(3)
        self.omega_des = np.asarray(self.omega_des, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.v_des))
                and np.all(np.isfinite(self.omega_des))
                and np.isfinite(self.z0) and self.z0 > 0.0):
            raise ValueError("command must be finite with positive height")


@dataclass
class QpProblem:
    H: np.ndarray
    q: np.ndarray
    C: np.ndarray
    c_lo: np.ndarray
    c_hi: np.ndarray
    index_map: tuple
    A_qp: np.ndarray
    B_qp: np.ndarray
    x_ref_flat: np.ndarray
    x0: np.ndarray

    @property
    def n_u(self) -> int:
        return self.H.shape[0]


@dataclass
class MpcResult:
    forces: np.ndarray       # 4x3 world-frame forces for the current step
    accel_obs: np.ndarray    # 4x3 forces normalized by body mass
    u: np.ndarray
    index_map: tuple
    solution: QpSolution
    certified: bool
    kkt: dict


def _rot_z(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def build_reference(state: BodyState, cmd: Command, dt: float, n: int) -> np.ndarray:
    """Integrate the commanded twist into an (n, 13) state reference.

    Yaw integrates the commanded turn rate; horizontal position integrates
    the commanded velocity rotated by the integrated reference yaw; height
    is pinned at the commanded body height with level roll and pitch.
    """
    if n < 1:
        raise ValueError("horizon must be at least one step")
    wz = cmd.omega_des[2]
    x_ref = np.zeros((n, NX))
    psi = state.yaw
    p = state.p.copy()
    for i in range(n):
        p = p + dt * (_rot_z(psi + wz * dt * i) @ cmd.v_des)
        yaw_i = state.yaw + wz * dt * (i + 1)
        x_ref[i, 0:2] = 0.0
        x_ref[i, 2] = yaw_i
        x_ref[i, 3:5] = p[0:2]
        x_ref[i, 5] = cmd.z0
        x_ref[i, 6:9] = cmd.omega_des
        x_ref[i, 9:12] = _rot_z(yaw_i) @ cmd.v_des
        x_ref[i, 12] = 1.0
    return x_ref


def _pyramid_block(mu: float) -> np.ndarray:
    """Constraint rows for one foot's [fx fy fz]: two pyramid pairs + fz box."""
    return np.array([
        [1.0, 0.0, -mu],
        [1.0, 0.0, mu],
        [0.0, 1.0, -mu],
        [0.0, 1.0, mu],
        [0.0, 0.0, 1.0],
    ])


def build_qp(dyn_steps: list[DiscreteDynamics], x0: np.ndarray,
             x_ref: np.ndarray, gait: GaitTable, weights: MpcWeights,
             friction: FrictionParams) -> QpProblem:
    """Condense the horizon into a dense QP over stacked stance forces."""
    n = gait.horizon
    if len(dyn_steps) != n or x_ref.shape != (n, NX):
        raise ValueError("horizon length mismatch between dynamics, gait and reference")
    x0 = np.asarray(x0, dtype=float).reshape(NX)
    for k, dyn in enumerate(dyn_steps):
        legs_k = tuple(int(i) for i in np.flatnonzero(gait.contact[k]))
        if dyn.stance_legs != legs_k:
            raise ValueError(f"step {k}: dynamics stance set disagrees with gait row")

    index_map = tuple((k, leg) for k in range(n) for leg in range(N_LEGS)
                      if gait.contact[k, leg])
    n_u = 3 * len(index_map)

    # stacked prediction X = A_qp x0 + B_qp U
    A_qp = np.zeros((NX * n, NX))
    prod = np.eye(NX)
    prods = []  # prods[k] = A_{k-1} ... A_0
    for k in range(n):
        prod = dyn_steps[k].A_d @ prod
        prods.append(prod.copy())
        A_qp[NX * k:NX * (k + 1)] = prod

    B_qp = np.zeros((NX * n, n_u))
    col = 0
    col_of_group = {}
    for k, leg in index_map:
        col_of_group[(k, leg)] = col
        j = dyn_steps[k].stance_legs.index(leg)
        cols = dyn_steps[k].B_d[:, 3 * j:3 * j + 3]
        # effect of step-k forces on states k..n-1
        B_qp[NX * k:NX * (k + 1), col:col + 3] = cols
        acc = cols
        for t in range(k + 1, n):
            acc = dyn_steps[t].A_d @ acc
            B_qp[NX * t:NX * (t + 1), col:col + 3] = acc
        col += 3

    q_bar = np.tile(weights.q_diag, n)
    x_ref_flat = x_ref.reshape(-1)
    BtQ = B_qp.T * q_bar
    H = 2.0 * (BtQ @ B_qp + weights.r_force * np.eye(n_u))
    H = 0.5 * (H + H.T)
    q_lin = 2.0 * (BtQ @ (A_qp @ x0 - x_ref_flat))

    if n_u:
        try:
            np.linalg.cholesky(H)
        except np.linalg.LinAlgError as exc:
            raise ValueError("condensed Hessian is not positive definite") from exc

    blk = _pyramid_block(friction.mu)
    C = np.zeros((5 * len(index_map), n_u))
    c_lo = np.zeros(5 * len(index_map))
    c_hi = np.zeros(5 * len(index_map))
    for g in range(len(index_map)):
        C[5 * g:5 * g + 5, 3 * g:3 * g + 3] = blk
        c_lo[5 * g:5 * g + 5] = [-np.inf, 0.0, -np.inf, 0.0, friction.f_min]
        c_hi[5 * g:5 * g + 5] = [0.0, np.inf, 0.0, np.inf, friction.f_max]

    return QpProblem(H=H, q=q_lin, C=C, c_lo=c_lo, c_hi=c_hi,
                     index_map=index_map, A_qp=A_qp, B_qp=B_qp,
                     x_ref_flat=x_ref_flat, x0=x0)


def project_feasible(u: np.ndarray, friction: FrictionParams) -> np.ndarray:
    """Clamp per-foot force triples into the pyramid (exact per coordinate)."""
    u = np.asarray(u, dtype=float).reshape(-1, 3).copy()
    u[:, 2] = np.clip(u[:, 2], friction.f_min, friction.f_max)
    lim = friction.mu * u[:, 2]
    u[:, 0] = np.clip(u[:, 0], -lim, lim)
    u[:, 1] = np.clip(u[:, 1], -lim, lim)
    return u.reshape(-1)


def warm_start(problem: QpProblem, prev_u: np.ndarray, prev_map: tuple,
               friction: FrictionParams) -> np.ndarray:
    """Shift the previous stacked solution one step forward in the horizon.

    New step k reuses forces planned for old step k+1 (the horizon slides by
    one tick); groups with no predecessor start at the pyramid interior.
    """
    prev = {key: np.asarray(prev_u).reshape(-1, 3)[g]
            for g, key in enumerate(prev_map)}
    mid = np.array([0.0, 0.0, 0.5 * (friction.f_min + friction.f_max)])
    max_step = max((k for k, _ in prev_map), default=-1)
    u0 = np.zeros((len(problem.index_map), 3))
    for g, (k, leg) in enumerate(problem.index_map):
        src = (min(k + 1, max_step), leg)
        u0[g] = prev.get(src, prev.get((k, leg), mid))
    return project_feasible(u0.reshape(-1), friction)


def default_u0(problem: QpProblem, friction: FrictionParams) -> np.ndarray:
    mid = 0.5 * (friction.f_min + friction.f_max)
    u0 = np.zeros((len(problem.index_map), 3))
    u0[:, 2] = mid
    return u0.reshape(-1)


def mpc_tick(state: BodyState, feet: np.ndarray, gait: GaitTable,
             cmd: Command, comp: Compensation, params: RobotParams,
             weights: MpcWeights, friction: FrictionParams,
             dt: float = 0.03, prev: MpcResult | None = None,
             tol: float = 1e-6) -> MpcResult:
    """One 30 ms control tick: reference, condensed QP, certified solve.

    Returns first-step forces (zeros for swing feet) and the same forces
    normalized by body mass for the policy observation. `prev` enables the
    shifted warm start; passing None solves cold.
    """
    feet = np.asarray(feet, dtype=float).reshape(N_LEGS, 3)
    n = gait.horizon
    x_ref = build_reference(state, cmd, dt, n)
    x0 = augment_state(state)

    dyn_steps = []
    for k in range(n):
        cont = build_continuous_dynamics(state, feet, gait.contact[k], params, comp)
        dyn_steps.append(discretize(cont, dt))

    problem = build_qp(dyn_steps, x0, x_ref, gait, weights, friction)

    if problem.n_u == 0:
        sol = solve_qp(np.zeros((0, 0)), np.zeros(0), np.zeros((0, 0)),
                       np.zeros(0), np.zeros(0))
        return MpcResult(forces=np.zeros((N_LEGS, 3)),
                         accel_obs=np.zeros((N_LEGS, 3)),
                         u=np.zeros(0), index_map=(), solution=sol,
                         certified=True, kkt=sol.kkt)

    if prev is not None and prev.u.size:
        u0 = warm_start(problem, prev.u, prev.index_map, friction)
    else:
        u0 = default_u0(problem, friction)

    sol = solve_qp(problem.H, problem.q, problem.C, problem.c_lo,
                   problem.c_hi, u0=u0)
    kkt = sol.kkt
    certified = sol.certified and all(v <= tol for v in kkt.values())

    forces = np.zeros((N_LEGS, 3))
    for g, (k, leg) in enumerate(problem.index_map):
        if k == 0:
            forces[leg] = sol.u[3 * g:3 * g + 3]
    return MpcResult(forces=forces, accel_obs=forces / params.mass,
                     u=sol.u, index_map=problem.index_map, solution=sol,
                     certified=certified, kkt=kkt)
