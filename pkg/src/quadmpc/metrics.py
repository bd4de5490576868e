"""Episode metrics derived purely from the EpisodeLog.

The report carries the quantities the experiments compare: peak yaw rate,
speed tracking, survival, foot-trap events, and controller timing. Foot
traps are detected from the log alone: a leg whose scheduled swing window
moves the foot almost nowhere while the commanded velocity asked for real
travel is counted as trapped.
"""

from dataclasses import dataclass, fields

import numpy as np

from .kinematics import fk
from .presets import full_preset
from ._kernels import rot_zyx
from .sim import SIM_DT, EpisodeLog

TRAP_MIN_COMMAND = 0.03  # m of commanded travel before a window can count
TRAP_TRAVEL_RATIO = 0.3  # actual/commanded travel below this is a trap


@dataclass
class MetricsReport:
    peak_yaw_rate: float
    mean_speed_err: float
    max_speed_err: float
    peak_speed: float
    survival_time: float
    fell: bool
    foot_traps: int
    mpc_ms_mean: float = float("nan")
    policy_ms_mean: float = float("nan")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = int(v)
            lines.append(f"{f.name}={v:.10g}" if isinstance(v, float)
                         else f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path: str) -> "MetricsReport":
        kv = {}
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                key, val = line.split("=", 1)
                kv[key] = val
        return cls(peak_yaw_rate=float(kv["peak_yaw_rate"]),
                   mean_speed_err=float(kv["mean_speed_err"]),
                   max_speed_err=float(kv["max_speed_err"]),
                   peak_speed=float(kv["peak_speed"]),
                   survival_time=float(kv["survival_time"]),
                   fell=bool(int(kv["fell"])),
                   foot_traps=int(kv["foot_traps"]),
                   mpc_ms_mean=float(kv["mpc_ms_mean"]),
                   policy_ms_mean=float(kv["policy_ms_mean"]))


def _foot_xy(log: EpisodeLog, robot_name: str) -> np.ndarray:
    """World xy of each foot per row, (n, 4, 2), from logged pose and q."""
    robot = full_preset(robot_name)
    rows = log.rows
    n = rows.shape[0]
    out = np.zeros((n, 4, 2))
    theta = rows[:, 1:4]
    p = rows[:, 4:7]
    q = rows[:, 13:25]
    for i in range(n):
        rot = rot_zyx(theta[i, 0], theta[i, 1], theta[i, 2])
        for leg in range(4):
            local = robot.body.hip_offsets[leg] + fk(
                robot.leg, robot.side_signs[leg], q[i, 3 * leg:3 * leg + 3])
            out[i, leg] = (p[i] + rot @ local)[0:2]
    return out


def count_foot_traps(log: EpisodeLog, scenario) -> int:
    """Swing windows whose realized foot travel is a small fraction of the
    commanded travel. Uses the scheduled-contact columns, so a foot pinned
    against a riser during its swing is what gets counted."""
    if log.n_steps == 0:
        return 0
    foot_xy = _foot_xy(log, scenario.robot)
    s_phi = log.rows[:, 61:65]
    t = log.rows[:, 0]
    traps = 0
    for leg in range(4):
        swing = s_phi[:, leg] < 0.5
        i = 0
        n = len(swing)
        while i < n:
            if not swing[i]:
                i += 1
                continue
            j = i
            while j < n and swing[j]:
                j += 1
            # commanded travel over the window
            cmd = 0.0
            for k in range(i, j):
                v_des, _ = scenario.command(t[k])
                cmd += float(np.hypot(v_des[0], v_des[1])) * SIM_DT
            moved = float(np.linalg.norm(foot_xy[j - 1, leg]
                                         - foot_xy[i, leg]))
            if cmd > TRAP_MIN_COMMAND and moved < TRAP_TRAVEL_RATIO * cmd:
                traps += 1
            i = j
    return traps


def compute_metrics(log: EpisodeLog, scenario) -> MetricsReport:
    rows = log.rows
    if rows.shape[0] == 0:
        return MetricsReport(0.0, 0.0, 0.0, 0.0, 0.0, False, 0)
    t = rows[:, 0]
    yaw = rows[:, 3]
    v_world = rows[:, 10:12]
    # commanded velocities live in the heading frame; rotate the measured
    # velocity back so the error is frame-consistent
    err = np.zeros(rows.shape[0])
    for i in range(rows.shape[0]):
        v_des, _ = scenario.command(t[i])
        c, s = np.cos(yaw[i]), np.sin(yaw[i])
        vh = np.array([c * v_world[i, 0] + s * v_world[i, 1],
                       -s * v_world[i, 0] + c * v_world[i, 1]])
        err[i] = np.hypot(vh[0] - v_des[0], vh[1] - v_des[1])
    speed = np.hypot(v_world[:, 0], v_world[:, 1])

    def _meta_float(key):
        try:
            return float(log.meta[key])
        except (KeyError, ValueError, TypeError):
            return float("nan")

    return MetricsReport(
        peak_yaw_rate=float(np.abs(rows[:, 9]).max()),
        mean_speed_err=float(err.mean()),
        max_speed_err=float(err.max()),
        peak_speed=float(speed.max()),
        survival_time=float(log.n_steps * SIM_DT),
        fell=log.fell,
        foot_traps=count_foot_traps(log, scenario),
        mpc_ms_mean=_meta_float("mpc_ms_mean"),
        policy_ms_mean=_meta_float("policy_ms_mean"),
    )


def compare(a: MetricsReport, b: MetricsReport) -> dict:
    """Per-field deltas (b minus a). NaN-vs-number pairs are rejected so a
    report missing a timing channel cannot silently compare as zero."""
    out = {}
    for f in fields(MetricsReport):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if isinstance(va, bool):
            out[f.name] = int(vb) - int(va)
            continue
        if isinstance(va, float) and (np.isnan(va) != np.isnan(vb)):
            raise ValueError(f"metric {f.name} present in one report only")
        if isinstance(va, float) and np.isnan(va):
            out[f.name] = 0.0
        else:
            out[f.name] = vb - va
    return out
