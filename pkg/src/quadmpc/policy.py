"""Residual policy: bounded compensation and swing offsets from a small MLP.

The network maps a stacked history of control-tick features to an 18-wide
action: 3 angular-acceleration residuals, 3 linear-acceleration residuals,
and 12 swing joint offsets. Outputs are tanh-squashed and scaled by
per-scenario bounds, so any parameter setting yields admissible actions.
Inference runs in plain numpy; the training loop mirrors the same math in
torch and syncs parameters through the checkpoint array list.

Observations are robot-agnostic by construction: joint states, heading-frame
velocities, contact flags, commands, hip-relative touchdown targets, and
force commands normalized by body weight. No mass, inertia, or link length
appears directly.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

OBS_FRAME = 68  # features per control tick
OBS_HISTORY = 5  # stacked ticks
OBS_DIM = OBS_FRAME * OBS_HISTORY
ACT_DIM = 18
HIDDEN = (256, 32, 256)
LOG_STD_INIT = -1.0
CHECKPOINT_VERSION = 1
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ActionBounds:
    """Componentwise action scaling: residual accelerations and the swing
    joint offset cap."""

    dalpha_max: np.ndarray = field(
        default_factory=lambda: np.array([4.0, 10.0, 2.0]))
    da_max: np.ndarray = field(
        default_factory=lambda: np.array([4.0, 2.0, 8.0]))
    dq_max: float = 0.3

    def __post_init__(self) -> None:
        self.dalpha_max = np.asarray(self.dalpha_max, dtype=float).reshape(3)
        self.da_max = np.asarray(self.da_max, dtype=float).reshape(3)
        self.dq_max = float(self.dq_max)
        if np.any(self.dalpha_max <= 0) or np.any(self.da_max <= 0) \
                or self.dq_max <= 0:
            raise ValueError("action bounds must be positive")

    def scale(self) -> np.ndarray:
        return np.concatenate([self.dalpha_max, self.da_max,
                               np.full(12, self.dq_max)])


_BOUNDS_PRESETS = {
    "high_speed": (np.array([2.0, 10.0, 2.0]), np.array([4.0, 2.0, 3.0]), 0.3),
    "uncertainty": (np.array([4.0, 10.0, 2.0]),
                    np.array([4.0, 2.0, 8.0]), 0.3),
    "discrete_terrain": (np.array([4.0, 10.0, 2.0]),
                         np.array([2.0, 2.0, 2.0]), 0.3),
}


def bounds_preset(name: str) -> ActionBounds:
    if name not in _BOUNDS_PRESETS:
        raise ValueError(f"unknown bounds preset {name!r}")
    da, dl, dq = _BOUNDS_PRESETS[name]
    return ActionBounds(dalpha_max=da.copy(), da_max=dl.copy(), dq_max=dq)


# -- reward -------------------------------------------------------------------

@dataclass
class RewardWeights:
    """Per-tick reward terms: survival bonus, velocity tracking penalty,
    actuation energy penalty, and height keeping."""

    w1: float = 1.0
    w2: float = -1.5
    w3: float = -0.01
    w4: float = 5.0
    z_des: float = 0.28

    def __post_init__(self) -> None:
        if not (self.w2 < 0.0 < self.w1 and self.w3 < 0.0 < self.w4):
            raise ValueError("tracking and energy weights must be negative, "
                             "survival and height weights positive")


def compute_reward(v_com, omega, z_com, tau, qd, v_des, omega_des,
                   weights: RewardWeights, dt: float) -> float:
    """Instantaneous reward: survival + tracking + energy + height terms."""
    v_err = float(np.linalg.norm(np.asarray(v_des) - np.asarray(v_com)))
    w_err = float(np.linalg.norm(np.asarray(omega_des) - np.asarray(omega)))
    energy = float(np.sum(np.abs(np.asarray(tau) * np.asarray(qd)))) * dt
    height = 0.02 - abs(float(z_com) - weights.z_des)
    return (weights.w1 + weights.w2 * (v_err + w_err)
            + weights.w3 * energy + weights.w4 * height)


def block_reward(rows: np.ndarray, v_des, omega_des,
                 weights: RewardWeights, dt: float = 0.001) -> float:
    """Reward for one control tick recomputed from its log rows.

    Velocities and height are block means; the energy term integrates
    |tau * qd| over the rows at the physics step dt. The trainer logs
    exactly this value, so rewards can always be audited from the episode
    log alone.
    """
    rows = np.asarray(rows, dtype=float)
    v_com = rows[:, 10:13].mean(axis=0)
    omega = rows[:, 7:10].mean(axis=0)
    z_com = rows[:, 6].mean()
    v_err = float(np.linalg.norm(np.asarray(v_des) - v_com))
    w_err = float(np.linalg.norm(np.asarray(omega_des) - omega))
    energy = float(np.sum(np.abs(rows[:, 37:49] * rows[:, 25:37]))) * dt
    height = 0.02 - abs(float(z_com) - weights.z_des)
    return (weights.w1 + weights.w2 * (v_err + w_err)
            + weights.w3 * energy + weights.w4 * height)


# -- network ------------------------------------------------------------------

def _orthogonal(rng: np.random.Generator, n_out: int, n_in: int,
                gain: float) -> np.ndarray:
    a = rng.normal(size=(max(n_out, n_in), min(n_out, n_in)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_out < n_in:
        q = q.T
    return gain * q[:n_out, :n_in]


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _tanh_log_jacobian(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (np.log(2.0) - u - _softplus(-2.0 * u))


class PolicyNet:
    """Gaussian policy with tanh-squashed mean and a separate value head.

    Parameters live as a flat list of float64 arrays (policy layers, log
    standard deviation, value layers) so the torch trainer and the
    checkpoint format can address them uniformly.
    """

    def __init__(self, bounds: ActionBounds | str = "uncertainty",
                 obs_dim: int = OBS_DIM, hidden: tuple = HIDDEN,
                 seed: int = 0, init_scale: float = 0.01) -> None:
        if isinstance(bounds, str):
            self.bounds_name = bounds
            bounds = bounds_preset(bounds)
        else:
            self.bounds_name = "custom"
        self.bounds = bounds
        self.obs_dim = int(obs_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self._scale = bounds.scale()
        rng = np.random.default_rng(seed)
        self.pi_w, self.pi_b = self._init_mlp(rng, ACT_DIM, init_scale)
        self.log_std = np.full(ACT_DIM, LOG_STD_INIT)
        self.vf_w, self.vf_b = self._init_mlp(rng, 1, 1.0)

    def _init_mlp(self, rng, n_out: int, final_gain: float) -> tuple:
        sizes = (self.obs_dim,) + self.hidden + (n_out,)
        ws, bs = [], []
        for i in range(len(sizes) - 1):
            last = i == len(sizes) - 2
            gain = final_gain if last else 5.0 / 3.0
            ws.append(_orthogonal(rng, sizes[i + 1], sizes[i], gain))
            bs.append(np.zeros(sizes[i + 1]))
        return ws, bs

    @classmethod
    def zeroed(cls, bounds: ActionBounds | str = "uncertainty",
               seed: int = 0) -> "PolicyNet":
        """A net whose action is exactly zero everywhere (the augmented
        controller then reproduces the baseline bit for bit)."""
        net = cls(bounds, seed=seed)
        net.pi_w[-1][:] = 0.0
        net.pi_b[-1][:] = 0.0
        return net

    # -- forward passes -------------------------------------------------------

    def _mlp(self, ws, bs, x: np.ndarray) -> np.ndarray:
        h = x
        for w, b in zip(ws[:-1], bs[:-1]):
            h = np.tanh(h @ w.T + b)
        return h @ ws[-1].T + bs[-1]

    def mean_raw(self, obs: np.ndarray) -> np.ndarray:
        """Pre-squash action mean."""
        return self._mlp(self.pi_w, self.pi_b, np.asarray(obs, dtype=float))

    def value(self, obs: np.ndarray) -> np.ndarray:
        out = self._mlp(self.vf_w, self.vf_b, np.asarray(obs, dtype=float))
        return out[..., 0]

    def act(self, obs: np.ndarray) -> np.ndarray:
        """Deterministic scaled action, the controller-facing entry."""
        return np.tanh(self.mean_raw(obs)) * self._scale

    def sample(self, obs: np.ndarray, rng: np.random.Generator) -> dict:
        """Stochastic action for rollouts: returns the scaled action, the
        pre-squash draw, its log-probability, and the value estimate."""
        mean = self.mean_raw(obs)
        std = np.exp(self.log_std)
        u = mean + std * rng.standard_normal(mean.shape)
        return {"action": np.tanh(u) * self._scale, "raw": u,
                "log_prob": self.log_prob(mean, u),
                "value": float(self.value(obs))}

    def log_prob(self, mean: np.ndarray, raw: np.ndarray) -> float | np.ndarray:
        """Log-density of the scaled action reached through raw (pre-squash);
        diagonal Gaussian plus the tanh and scaling change of variables."""
        z = (raw - mean) / np.exp(self.log_std)
        base = -0.5 * (z * z + _LOG_2PI) - self.log_std
        corr = _tanh_log_jacobian(raw) + np.log(self._scale)
        return np.sum(base - corr, axis=-1)

    # -- parameter plumbing ---------------------------------------------------

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.pi_w, self.pi_b):
            out.extend([w, b])
        out.append(self.log_std)
        for w, b in zip(self.vf_w, self.vf_b):
            out.extend([w, b])
        return out

    def set_parameters(self, arrays: list) -> None:
        own = self.parameters()
        if len(own) != len(arrays):
            raise ValueError("parameter list length mismatch")
        for dst, src in zip(own, arrays):
            src = np.asarray(src, dtype=float)
            if dst.shape != src.shape:
                raise ValueError("parameter shape mismatch")
            dst[:] = src

    # -- checkpoint i/o -------------------------------------------------------

    def save(self, path: str) -> None:
        """One JSON header line, then the parameter arrays as row-major
        float64 bytes in parameters() order."""
        header = {
            "version": CHECKPOINT_VERSION,
            "obs_dim": self.obs_dim,
            "act_dim": ACT_DIM,
            "hidden": list(self.hidden),
            "activation": "tanh",
            "bounds_preset": self.bounds_name,
            "dalpha_max": self.bounds.dalpha_max.tolist(),
            "da_max": self.bounds.da_max.tolist(),
            "dq_max": self.bounds.dq_max,
            "robot_agnostic": True,
            "shapes": [list(a.shape) for a in self.parameters()],
        }
        tmp = path + ".tmp"
        with open(tmp, "wb") as f:
            f.write((json.dumps(header) + "\n").encode())
            for a in self.parameters():
                f.write(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "PolicyNet":
        with open(path, "rb") as f:
            header = json.loads(f.readline().decode())
            blob = f.read()
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version")
        if header.get("activation") != "tanh":
            raise ValueError("unsupported activation tag")
        bounds = ActionBounds(dalpha_max=np.array(header["dalpha_max"]),
                              da_max=np.array(header["da_max"]),
                              dq_max=header["dq_max"])
        net = cls(bounds, obs_dim=header["obs_dim"],
                  hidden=tuple(header["hidden"]))
        net.bounds_name = header["bounds_preset"]
        arrays = []
        off = 0
        for shape in header["shapes"]:
            n = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype=np.float64, count=n,
                                offset=off).reshape(shape).copy()
            arrays.append(arr)
            off += 8 * n
        if off != len(blob):
            raise ValueError("checkpoint payload length mismatch")
        net.set_parameters(arrays)
        return net
