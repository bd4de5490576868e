"""Rigid-body locomotion simulator with terrain, contact, and disturbances.

The body is a single rigid body; legs are massless kinematic chains whose
joints carry a small virtual inertia so they can be torque-driven. Ground
contact is a penalty model (spring-damper normal force, regularized Coulomb
friction) evaluated at the foot points. Payloads are merged into an
effective mass/inertia/COM; external wrenches follow an on/off schedule.

Two ways to drive it:

  SimWorld.step(tau)      one 1 ms step under raw joint torques
  run_episode(...)        the full nested loop: controller tick every 30 ms,
                          leg control + physics at 1 kHz, early termination
                          on a fall, one EpisodeLog row per 1 ms step
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import _engine
from ._kernels import leg_fk, plan_build, plan_replan, terrain_height
from .gait import GaitSchedule, advance_gait
from .kinematics import JointState, ik
from .model import BodyState
from .presets import LEG_NAMES, RobotPreset

SIM_DT = 0.001
TICK_STEPS = 30  # 1 kHz physics steps per 30 ms control tick
FALL_ANGLE = 1.0  # rad, roll/pitch magnitude that terminates an episode
FALL_HEIGHT = 0.12  # m, body height above terrain that counts as down
NOISE_SIGMA_V = 0.05  # m/s, optional observation noise on linear velocity
NOISE_SIGMA_W = 0.05  # rad/s, optional observation noise on angular velocity

_TERRAIN_KINDS = {"flat": 0, "stairs": 1, "blocks": 2}


def _log_columns() -> tuple:
    cols = ["time", "roll", "pitch", "yaw", "x", "y", "z",
            "wx", "wy", "wz", "vx", "vy", "vz"]
    for prefix in ("q", "qd", "tau"):
        for leg in LEG_NAMES:
            for j in range(3):
                cols.append(f"{prefix}_{leg.lower()}{j}")
    for leg in LEG_NAMES:
        for ax in "xyz":
            cols.append(f"fcmd_{leg.lower()}{ax}")
    for prefix in ("sphi", "sact"):
        for leg in LEG_NAMES:
            cols.append(f"{prefix}_{leg.lower()}")
    for ax in "xyz":
        cols.append(f"dalpha_{ax}")
    for ax in "xyz":
        cols.append(f"da_{ax}")
    for leg in LEG_NAMES:
        for j in range(3):
            cols.append(f"dq_{leg.lower()}{j}")
    cols.append("fall")
    return tuple(cols)


LOG_COLUMNS = _log_columns()
assert len(LOG_COLUMNS) == _engine.LOG_COLS


@dataclass
class Terrain:
    """Ground height field. kind is one of flat, stairs, blocks.

    Stairs ascend in +x starting at stair_x0 (first tread top at one rise).
    Blocks are a grid of raised cells with a flat apron outside the grid.
    """

    kind: str = "flat"
    stair_x0: float = 0.30
    stair_rise: float = 0.13
    stair_run: float = 0.28
    block_grid: np.ndarray = field(default_factory=lambda: np.zeros((1, 1)))
    block_x0: float = 0.5
    block_y0: float = -2.0
    cell: float = 0.25

    def __post_init__(self) -> None:
        if self.kind not in _TERRAIN_KINDS:
            raise ValueError(f"unknown terrain kind {self.kind!r}")
        self.block_grid = np.asarray(self.block_grid, dtype=float)
        if self.block_grid.ndim != 2:
            raise ValueError("block_grid must be 2-D")

    @classmethod
    def flat(cls) -> "Terrain":
        return cls()

    @classmethod
    def stairs(cls, rise: float = 0.13, run: float = 0.28,
               x0: float = 0.30) -> "Terrain":
        return cls(kind="stairs", stair_rise=rise, stair_run=run, stair_x0=x0)

    @classmethod
    def blocks(cls, seed: int, lo: float = 0.08, hi: float = 0.12,
               cell: float = 0.25, nx: int = 24, ny: int = 16,
               x0: float = 0.5, y0: float = -2.0) -> "Terrain":
        rng = np.random.default_rng(seed)
        grid = rng.uniform(lo, hi, size=(nx, ny))
        return cls(kind="blocks", block_grid=grid, block_x0=x0, block_y0=y0,
                   cell=cell)

    @property
    def kernel_args(self) -> tuple:
        return (_TERRAIN_KINDS[self.kind], float(self.stair_x0),
                float(self.stair_rise), float(self.stair_run),
                self.block_grid, float(self.block_x0), float(self.block_y0),
                float(self.cell))

    def height(self, x: float, y: float) -> float:
        return float(terrain_height(*self.kernel_args, float(x), float(y)))


@dataclass
class ContactModel:
    """Penalty contact: f_n = max(0, k_n*delta + d_n*delta_dot), tangential
    Coulomb friction clamped at mu_s*f_n. Stiction is regularized by an
    anchored tangential spring (stiffness k_t, damping c_t) whose anchor
    slides along the cone when the clamp engages. block_jump is the
    per-step penetration jump that triggers kinematic blocking on risers."""

    k_n: float = 3.0e4
    d_n: float = 1.0e3
    mu_s: float = 0.6
    k_t: float = 1.0e4
    c_t: float = 50.0
    block_jump: float = 0.02

    def __post_init__(self) -> None:
        if self.k_n <= 0 or self.d_n <= 0:
            raise ValueError("contact stiffness and damping must be positive")
        if self.mu_s < 0:
            raise ValueError("mu_s must be non-negative")
        if self.k_t <= 0 or self.c_t < 0:
            raise ValueError("tangential stiction parameters out of range")


@dataclass
class WrenchEvent:
    """External force (N) and moment (N*m) on the body, active on
    [t_on, t_off). Force acts at the body origin, world frame."""

    t_on: float
    t_off: float
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    moment: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.force = np.asarray(self.force, dtype=float).reshape(3)
        self.moment = np.asarray(self.moment, dtype=float).reshape(3)
        if self.t_off < self.t_on:
            raise ValueError("wrench schedule must have t_off >= t_on")


@dataclass
class DisturbanceSpec:
    """Rigid payload (mass at a body-frame offset from the COM) plus a list
    of scheduled external wrenches."""

    payload_mass: float = 0.0
    payload_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    wrenches: tuple = ()

    def __post_init__(self) -> None:
        self.payload_offset = np.asarray(self.payload_offset,
                                         dtype=float).reshape(3)
        if self.payload_mass < 0:
            raise ValueError("payload_mass must be non-negative")
        self.wrenches = tuple(self.wrenches)

    def wrench_at(self, t: float) -> np.ndarray:
        out = np.zeros(6)
        for ev in self.wrenches:
            if ev.t_on <= t < ev.t_off:
                out[0:3] += ev.force
                out[3:6] += ev.moment
        return out

    def wrench_rows(self, t0: float, n: int, dt: float) -> np.ndarray:
        rows = np.zeros((n, 6))
        if self.wrenches:
            for i in range(n):
                rows[i] = self.wrench_at(t0 + i * dt)
        return rows


@dataclass
class SimState:
    """Snapshot of the world: body state, four joint states, sensed foot
    contacts, simulation time, and the seed the world was built with."""

    body: BodyState
    joints: tuple
    foot_contacts: np.ndarray
    time: float
    rng_seed: int


def merged_body_params(mass: float, inertia_body: np.ndarray,
                       payload_mass: float,
                       payload_offset: np.ndarray) -> tuple:
    """Effective mass, COM offset (body frame), and inertia about the
    combined COM for a rigid payload carried at a body-frame offset."""
    m_eff = mass + payload_mass
    c = (payload_mass / m_eff) * payload_offset
    eye = np.eye(3)
    i_eff = inertia_body + mass * ((c @ c) * eye - np.outer(c, c))
    rp = payload_offset - c
    i_eff = i_eff + payload_mass * ((rp @ rp) * eye - np.outer(rp, rp))
    return m_eff, c, i_eff


class SimWorld:
    """Owns the physical state and steps it at 1 kHz.

    Control-side latches (swing plans, touchdown holds) live with the
    episode runner; the world keeps only what physics needs: body, joints,
    and the per-leg penetration memory used for riser blocking.
    """

    def __init__(self, robot: RobotPreset, terrain: Terrain | None = None,
                 contact: ContactModel | None = None,
                 disturbance: DisturbanceSpec | None = None,
                 seed: int = 0) -> None:
        self.robot = robot
        self.terrain = terrain if terrain is not None else Terrain.flat()
        self.contact = contact if contact is not None else ContactModel()
        self.disturbance = (disturbance if disturbance is not None
                            else DisturbanceSpec())
        self.seed = int(seed)
        self.mass_eff, self.com_body, self.inertia_eff = merged_body_params(
            robot.body.mass, robot.body.inertia_body,
            self.disturbance.payload_mass, self.disturbance.payload_offset)
        self.body = np.zeros(12)
        self.q = np.zeros(12)
        self.qd = np.zeros(12)
        self.delta_prev = np.zeros(4)
        self.anchor = np.zeros((4, 2))
        self.anchor_on = np.zeros(4, dtype=np.int64)
        self.time = 0.0
        self.jacobian_flags = np.zeros(4, dtype=bool)
        self.reset()

    # -- state management ---------------------------------------------------

    def reset(self, x: float = 0.0, y: float = 0.0, yaw: float = 0.0) -> None:
        """Standing start: body at nominal height over the terrain, feet
        under the hips with the static penetration already applied so the
        contact sensor reads true from the first step."""
        h0 = self.terrain.height(x, y)
        delta_static = self.mass_eff * _engine.GRAV / (4.0 * self.contact.k_n)
        self.body[:] = 0.0
        self.body[2] = yaw
        self.body[3] = x
        self.body[4] = y
        self.body[5] = h0 + self.robot.body.z0
        cy, sy = np.cos(yaw), np.sin(yaw)
        rot = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        for leg in range(4):
            hip_w = self.body[3:6] + rot @ self.robot.body.hip_offsets[leg]
            ab = rot @ np.array([
                0.0, self.robot.side_signs[leg] * self.robot.leg.l_abd, 0.0])
            foot = np.array([
                hip_w[0] + ab[0],
                hip_w[1] + ab[1],
                self.terrain.height(hip_w[0] + ab[0], hip_w[1] + ab[1])
                - delta_static,
            ])
            local = rot.T @ (foot - self.body[3:6]) \
                - self.robot.body.hip_offsets[leg]
            q_leg, ok = ik(self.robot.leg, self.robot.side_signs[leg], local)
            if not ok:
                raise ValueError("initial stance is outside the leg workspace")
            self.q[3 * leg:3 * leg + 3] = q_leg
        self.qd[:] = 0.0
        self.delta_prev[:] = 0.0
        self.anchor[:] = 0.0
        self.anchor_on[:] = 0
        self.time = 0.0

    def foot_positions(self) -> np.ndarray:
        rot, foot_w, _jacs, _foot_v = _engine._leg_state(
            self.body, self.q, self.qd, *self._geom_args())
        return foot_w

    def sensed_contacts(self) -> np.ndarray:
        foot_w = self.foot_positions()
        out = np.zeros(4, dtype=bool)
        for leg in range(4):
            h = self.terrain.height(foot_w[leg, 0], foot_w[leg, 1])
            out[leg] = h - foot_w[leg, 2] > 0.0
        return out

    def state(self) -> SimState:
        joints = tuple(JointState(self.q[3 * leg:3 * leg + 3].copy(),
                                  self.qd[3 * leg:3 * leg + 3].copy())
                       for leg in range(4))
        body = BodyState(theta=self.body[0:3].copy(), p=self.body[3:6].copy(),
                         omega=self.body[6:9].copy(),
                         pdot=self.body[9:12].copy())
        return SimState(body=body, joints=joints,
                        foot_contacts=self.sensed_contacts(),
                        time=self.time, rng_seed=self.seed)

    # -- engine argument plumbing --------------------------------------------

    def _geom_args(self) -> tuple:
        return (self.robot.body.hip_offsets, self.robot.side_signs,
                self.robot.leg.l_abd, self.robot.leg.l_thigh,
                self.robot.leg.l_shank)

    def _limit_args(self) -> tuple:
        return (self.robot.leg.q_lo, self.robot.leg.q_hi,
                float(self.robot.leg.tau_max), float(self.robot.leg.qd_max),
                float(self.robot.gains.joint_inertia))

    def _contact_args(self) -> tuple:
        c = self.contact
        return (float(c.k_n), float(c.d_n), float(c.mu_s), float(c.k_t),
                float(c.c_t), float(c.block_jump))

    def _mass_args(self) -> tuple:
        return (float(self.mass_eff), self.com_body, self.inertia_eff)

    # -- stepping -------------------------------------------------------------

    def step(self, tau: np.ndarray,
             wrench: np.ndarray | None = None) -> SimState:
        """One 1 ms step under raw joint torques (clamped to the actuator
        limit). The scheduled disturbance wrench applies unless overridden."""
        tau = np.asarray(tau, dtype=float).reshape(12)
        if not np.all(np.isfinite(tau)):
            raise ValueError("tau contains non-finite entries")
        if wrench is None:
            wrench6 = self.disturbance.wrench_at(self.time)
        else:
            wrench6 = np.asarray(wrench, dtype=float).reshape(6)

        # flag stance legs whose Jacobian is near singular (the force map
        # through the leg degenerates; solves fall back to a damped inverse)
        rot, foot_w, jacs, _foot_v = _engine._leg_state(
            self.body, self.q, self.qd, *self._geom_args())
        contacts = self.sensed_contacts()
        for leg in range(4):
            self.jacobian_flags[leg] = bool(
                contacts[leg] and abs(np.linalg.det(jacs[leg])) < 1e-6)

        _engine.physics_step(self.body, self.q, self.qd, tau,
                             *self._geom_args(), *self._limit_args(),
                             *self._contact_args(), *self._mass_args(),
                             *self.terrain.kernel_args,
                             wrench6, self.delta_prev, self.anchor,
                             self.anchor_on, SIM_DT)
        self.time += SIM_DT
        return self.state()


@dataclass
class TickObservation:
    """What the controller sees once per 30 ms tick: ground-truth body state
    (optionally noise-injected velocities), joint states, sensed contacts,
    time, and the commanded body velocities."""

    state: BodyState
    joints_q: np.ndarray
    joints_qd: np.ndarray
    s_actual: np.ndarray
    time: float
    v_des: np.ndarray
    omega_des: np.ndarray


@dataclass
class TickCommand:
    """What the controller returns per tick: world-frame stance force
    commands, touchdown targets, swing joint offsets, and the model
    compensation actually applied (logged alongside the physics)."""

    forces: np.ndarray  # (4, 3)
    targets: np.ndarray  # (4, 3)
    dq: np.ndarray = field(default_factory=lambda: np.zeros(12))
    comp: np.ndarray = field(default_factory=lambda: np.zeros(6))


class EpisodeLog:
    """One row per 1 ms step, fixed 88-column schema (see LOG_COLUMNS).

    save/load round-trips bit-exactly: floats are written with %.17g.
    """

    def __init__(self, rows: np.ndarray, fault: str | None = None,
                 meta: dict | None = None) -> None:
        rows = np.asarray(rows, dtype=float)
        if rows.size == 0:
            rows = np.zeros((0, len(LOG_COLUMNS)))
        if rows.ndim != 2 or rows.shape[1] != len(LOG_COLUMNS):
            raise ValueError(f"log rows must be (n, {len(LOG_COLUMNS)})")
        self.rows = rows
        self.fault = fault
        self.meta = dict(meta) if meta else {}

    @property
    def columns(self) -> tuple:
        return LOG_COLUMNS

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, LOG_COLUMNS.index(name)]

    def block(self, prefix: str) -> np.ndarray:
        """All columns whose name starts with prefix, in schema order."""
        idx = [i for i, c in enumerate(LOG_COLUMNS) if c.startswith(prefix)]
        if not idx:
            raise KeyError(f"no columns match prefix {prefix!r}")
        return self.rows[:, idx]

    @property
    def n_steps(self) -> int:
        return self.rows.shape[0]

    @property
    def duration(self) -> float:
        return self.rows.shape[0] * SIM_DT

    @property
    def fell(self) -> bool:
        return bool(self.rows.size) and bool(np.any(self.rows[:, -1] > 0.5))

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            f.write("# quadmpc episode log v1\n")
            if self.fault is not None:
                f.write(f"# fault={self.fault.replace(chr(10), ' ')}\n")
            for key in sorted(self.meta):
                f.write(f"# {key}={self.meta[key]}\n")
            f.write(",".join(LOG_COLUMNS) + "\n")
            np.savetxt(f, self.rows, fmt="%.17g", delimiter=",")

    @classmethod
    def load(cls, path: str) -> "EpisodeLog":
        fault = None
        meta: dict = {}
        data_lines = []
        header = None
        with open(path) as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#"):
                    body = line[1:].strip()
                    if "=" in body:
                        key, val = body.split("=", 1)
                        if key == "fault":
                            fault = val
                        else:
                            meta[key] = val
                    continue
                if header is None:
                    header = tuple(line.split(","))
                    continue
                data_lines.append(line)
        if header != LOG_COLUMNS:
            raise ValueError("episode log column header does not match")
        if data_lines:
            rows = np.loadtxt(io.StringIO("\n".join(data_lines)),
                              delimiter=",", ndmin=2)
        else:
            rows = np.zeros((0, len(LOG_COLUMNS)))
        return cls(rows, fault=fault, meta=meta)


class EpisodeDriver:
    """Tick-by-tick driver of the nested control loop.

    Owns the world plus the per-leg swing latches (plans, touchdown holds)
    and splits one 30 ms control period into observe() and step_tick(cmd),
    so callers that need to interpose on the controller, such as the
    training loop, can. run_episode is the plain closed-loop wrapper.
    """

    def __init__(self, controller, scenario, seed: int = 0) -> None:
        self.controller = controller
        self.scenario = scenario
        self.terrain = getattr(scenario, "terrain", None) or Terrain.flat()
        self.disturbance = (getattr(scenario, "disturbance", None)
                            or DisturbanceSpec())
        contact = getattr(scenario, "contact", None) or ContactModel()
        self.swing_height = float(getattr(scenario, "swing_height", 0.08))
        self.use_noise = bool(getattr(scenario, "observation_noise", False))
        self.sim = SimWorld(controller.robot, terrain=self.terrain,
                            contact=contact, disturbance=self.disturbance,
                            seed=seed)
        self.sched: GaitSchedule = controller.gait
        self.rng = np.random.default_rng(seed)
        self.targets = self.sim.foot_positions().copy()
        # degenerate in-place plans so the hold logic has a valid endpoint
        # before the first liftoff builds a real one
        self.plans = np.zeros((4, 24))
        for leg in range(4):
            fx, fy, fz = self.targets[leg]
            plan_build(self.plans[leg], fx, fy, fz, fx, fy, fz, 0.0,
                       max(self.sched.t_swing, 1e-3))
        self.prev_sched = np.ones(4, dtype=np.int64)
        self.hold_flag = np.zeros(4, dtype=np.int64)
        self.hold_pt = np.zeros((4, 3))
        self._block_log = np.zeros((TICK_STEPS, len(LOG_COLUMNS)))
        self.tick_index = 0
        self.energy_total = 0.0

    @property
    def time(self) -> float:
        return self.tick_index * TICK_STEPS * SIM_DT

    def observe(self) -> TickObservation:
        """Controller-facing observation at the current tick boundary."""
        t0 = self.time
        state = self.sim.state()
        body_obs = state.body
        if self.use_noise:
            body_obs = BodyState(
                theta=body_obs.theta, p=body_obs.p,
                omega=body_obs.omega + self.rng.normal(0.0, NOISE_SIGMA_W, 3),
                pdot=body_obs.pdot + self.rng.normal(0.0, NOISE_SIGMA_V, 3))
        v_des, omega_des = self.scenario.command(t0)
        return TickObservation(state=body_obs, joints_q=self.sim.q.copy(),
                               joints_qd=self.sim.qd.copy(),
                               s_actual=state.foot_contacts, time=t0,
                               v_des=np.asarray(v_des, dtype=float),
                               omega_des=np.asarray(omega_des, dtype=float))

    def step_tick(self, cmd: TickCommand) -> tuple:
        """Run one 30 ms block under the tick command. Returns the log rows
        actually produced and whether the robot fell inside the block."""
        t0 = self.time
        sim = self.sim
        self.targets[:] = np.asarray(cmd.targets, dtype=float).reshape(4, 3)
        phs = advance_gait(self.sched, t0)
        for leg in range(4):
            if (not phs.contact[leg] and self.hold_flag[leg] == 0
                    and self.plans[leg, 23] > 0.0):
                # the engine finishes the travel early within the swing
                # window, so replan in the same compressed phase
                ph = min(phs.phase[leg] / _engine.SWING_FRACTION, 1.0)
                plan_replan(self.plans[leg], ph, self.targets[leg, 0],
                            self.targets[leg, 1], self.targets[leg, 2],
                            self.swing_height)

        wrench_rows = self.disturbance.wrench_rows(t0, TICK_STEPS, SIM_DT)
        steps, fell, energy = _engine.run_block(
            TICK_STEPS, SIM_DT, t0,
            sim.body, sim.q, sim.qd,
            self.plans, self.targets, self.swing_height,
            np.asarray(cmd.forces, dtype=float).reshape(4, 3),
            np.asarray(cmd.dq, dtype=float).reshape(12),
            np.asarray(cmd.comp, dtype=float).reshape(6),
            float(self.sched.cycle_time), float(self.sched.duty_factor),
            self.sched.phase_offsets,
            *sim._geom_args(),
            sim.robot.leg.q_lo, sim.robot.leg.q_hi,
            float(sim.robot.gains.kp), float(sim.robot.gains.kd),
            float(sim.robot.leg.tau_max), float(sim.robot.leg.qd_max),
            float(sim.robot.gains.joint_inertia),
            *sim._contact_args(), *sim._mass_args(),
            *self.terrain.kernel_args,
            wrench_rows, self.prev_sched, self.hold_flag, self.hold_pt,
            sim.delta_prev, sim.anchor, sim.anchor_on, self._block_log)
        sim.time = t0 + steps * SIM_DT
        self.tick_index += 1
        self.energy_total += energy
        return self._block_log[:steps].copy(), bool(fell)


def run_episode(controller, scenario, duration: float | None = None,
                seed: int = 0) -> EpisodeLog:
    """Run the nested control loop: controller tick every 30 ms, leg control
    and physics at 1 kHz. Terminates early on a fall or on a controller
    exception (recorded as a fault). Deterministic per (scenario, seed).

    The controller must expose .robot (a RobotPreset), .gait (a
    GaitSchedule), and .tick(TickObservation) -> TickCommand.
    """
    duration = float(duration if duration is not None else scenario.duration)
    driver = EpisodeDriver(controller, scenario, seed=seed)
    n_ticks = max(1, int(round(duration / (TICK_STEPS * SIM_DT))))

    chunks = []
    fault = None
    for _ in range(n_ticks):
        obs = driver.observe()
        try:
            cmd = controller.tick(obs)
        except Exception as exc:  # fault record, then stop the episode
            fault = f"{type(exc).__name__}: {exc}"
            break
        rows, fell = driver.step_tick(cmd)
        chunks.append(rows)
        if fell:
            break

    rows = np.concatenate(chunks, axis=0) if chunks else \
        np.zeros((0, len(LOG_COLUMNS)))
    meta = {"seed": seed, "robot": controller.robot.name,
            "energy_j": repr(driver.energy_total)}
    name = getattr(scenario, "name", None)
    if name:
        meta["scenario"] = name
    mode = getattr(controller, "mode", None)
    if mode:
        meta["mode"] = mode
    timing = getattr(controller, "timing_summary", None)
    if callable(timing):
        meta.update(timing())
    return EpisodeLog(rows, fault=fault, meta=meta)
