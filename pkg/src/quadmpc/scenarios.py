"""Scenario configs: command profiles, terrain, disturbances, and presets.

A scenario is everything an episode needs apart from the controller: the
robot preset name, gait, terrain, a piecewise-linear command profile,
payload and wrench disturbances, the policy bounds preset, duration, and
seed. Configs round-trip through YAML losslessly and hash canonically so
baseline-vs-augmented comparisons can assert that nothing but the policy
source differs.
"""

import hashlib
import json
from dataclasses import dataclass, asdict

import numpy as np
import yaml

from .sim import ContactModel, DisturbanceSpec, Terrain, WrenchEvent


@dataclass
class CommandKnot:
    """One point of the piecewise-linear command profile."""

    t: float
    vx: float = 0.0
    vy: float = 0.0
    omega_z: float = 0.0


@dataclass
class ScenarioConfig:
    name: str = "custom"
    robot: str = "a1"
    gait: str = "trot"
    terrain_kind: str = "flat"
    terrain_seed: int = 0
    stair_rise: float = 0.13
    stair_run: float = 0.28
    stair_x0: float = 0.30
    duration: float = 10.0
    swing_height: float = 0.08
    observation_noise: bool = False
    bounds_preset: str = "uncertainty"
    payload_mass: float = 0.0
    payload_offset: tuple = (0.0, 0.0, 0.0)
    wrenches: tuple = ()  # (t_on, t_off, fx, fy, fz, mx, my, mz) rows
    knots: tuple = (CommandKnot(0.0),)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        knots = []
        for k in self.knots:
            if isinstance(k, CommandKnot):
                knots.append(k)
            elif isinstance(k, dict):
                knots.append(CommandKnot(**k))
            else:
                knots.append(CommandKnot(*k))
        if not knots:
            raise ValueError("at least one command knot is required")
        if any(b.t < a.t for a, b in zip(knots, knots[1:])):
            raise ValueError("command knots must be time-sorted")
        self.knots = tuple(knots)
        self.payload_offset = tuple(float(v) for v in self.payload_offset)
        self.wrenches = tuple(tuple(float(v) for v in w)
                              for w in self.wrenches)
        if any(len(w) != 8 for w in self.wrenches):
            raise ValueError("wrench rows are (t_on, t_off, force, moment)")

    # -- derived pieces -------------------------------------------------------

    @property
    def terrain(self) -> Terrain:
        if self.terrain_kind == "flat":
            return Terrain.flat()
        if self.terrain_kind == "stairs":
            return Terrain.stairs(rise=self.stair_rise, run=self.stair_run,
                                  x0=self.stair_x0)
        if self.terrain_kind == "blocks":
            return Terrain.blocks(seed=self.terrain_seed)
        raise ValueError(f"unknown terrain kind {self.terrain_kind!r}")

    @property
    def disturbance(self) -> DisturbanceSpec:
        events = tuple(WrenchEvent(w[0], w[1], np.array(w[2:5]),
                                   np.array(w[5:8])) for w in self.wrenches)
        return DisturbanceSpec(payload_mass=self.payload_mass,
                               payload_offset=np.array(self.payload_offset),
                               wrenches=events)

    @property
    def contact(self) -> ContactModel:
        return ContactModel()

    def command(self, t: float) -> tuple:
        """Piecewise-linear interpolation of the knots; holds the last
        value after the final knot."""
        ks = self.knots
        if t <= ks[0].t:
            k = ks[0]
            return (np.array([k.vx, k.vy, 0.0]),
                    np.array([0.0, 0.0, k.omega_z]))
        for a, b in zip(ks, ks[1:]):
            if t <= b.t:
                s = 0.0 if b.t == a.t else (t - a.t) / (b.t - a.t)
                vx = a.vx + s * (b.vx - a.vx)
                vy = a.vy + s * (b.vy - a.vy)
                om = a.omega_z + s * (b.omega_z - a.omega_z)
                return np.array([vx, vy, 0.0]), np.array([0.0, 0.0, om])
        k = ks[-1]
        return np.array([k.vx, k.vy, 0.0]), np.array([0.0, 0.0, k.omega_z])

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["knots"] = [asdict(k) for k in self.knots]
        d["wrenches"] = [list(w) for w in self.wrenches]
        d["payload_offset"] = list(self.payload_offset)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(**d)

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            yaml.safe_dump(self.to_dict(), f, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "ScenarioConfig":
        with open(path) as f:
            return cls.from_dict(yaml.safe_load(f))

    def config_hash(self) -> str:
        """Canonical hash of everything that defines the episode."""
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- presets -------------------------------------------------------------------

def turn_in_place(peak: float = 7.0, robot: str = "a1",
                  seed: int = 0) -> ScenarioConfig:
    """Yaw-rate ramp to +-peak while trotting in place."""
    return ScenarioConfig(
        name=f"turn_in_place_{'neg' if peak < 0 else 'pos'}",
        robot=robot, gait="trot", duration=6.0, seed=seed,
        bounds_preset="high_speed",
        knots=(CommandKnot(0.0), CommandKnot(0.5),
               CommandKnot(4.0, omega_z=peak),
               CommandKnot(6.0, omega_z=peak)))


def run_ramp(peak: float = 3.5, robot: str = "a1",
             seed: int = 0) -> ScenarioConfig:
    """Straight-line speed ramp."""
    return ScenarioConfig(
        name="run_ramp", robot=robot, gait="trot", duration=10.0, seed=seed,
        bounds_preset="high_speed",
        knots=(CommandKnot(0.0), CommandKnot(0.5),
               CommandKnot(6.0, vx=peak), CommandKnot(10.0, vx=peak)))


def run_then_steer(speed: float = 2.5, yaw_rate: float = 0.5,
                   robot: str = "a1", seed: int = 0) -> ScenarioConfig:
    """Ramp to speed, then add a steady steering rate."""
    return ScenarioConfig(
        name="run_then_steer", robot=robot, gait="trot", duration=8.0,
        seed=seed, bounds_preset="high_speed",
        knots=(CommandKnot(0.0), CommandKnot(0.5),
               CommandKnot(3.0, vx=speed), CommandKnot(4.0, vx=speed),
               CommandKnot(4.5, vx=speed, omega_z=yaw_rate),
               CommandKnot(8.0, vx=speed, omega_z=yaw_rate)))


def payload_trot(mass: float = 3.0, robot: str = "a1",
                 seed: int = 0) -> ScenarioConfig:
    """Slow trot carrying a rigid payload ahead of the COM."""
    return ScenarioConfig(
        name=f"payload_trot_{mass:g}kg", robot=robot, gait="trot",
        duration=6.0, seed=seed, bounds_preset="uncertainty",
        payload_mass=mass, payload_offset=(0.10, 0.0, 0.05),
        knots=(CommandKnot(0.0), CommandKnot(1.0, vx=0.3),
               CommandKnot(6.0, vx=0.3)))


def stairs(robot: str = "a1", seed: int = 0) -> ScenarioConfig:
    """Walk into a single 0.13 m riser."""
    return ScenarioConfig(
        name="stairs", robot=robot, gait="trot", terrain_kind="stairs",
        duration=8.0, seed=seed, bounds_preset="discrete_terrain",
        knots=(CommandKnot(0.0), CommandKnot(1.0, vx=0.35),
               CommandKnot(8.0, vx=0.35)))


def blocks(robot: str = "a1", seed: int = 0,
           terrain_seed: int = 0) -> ScenarioConfig:
    """Trot across a field of random 0.08 to 0.12 m blocks."""
    return ScenarioConfig(
        name="blocks", robot=robot, gait="trot", terrain_kind="blocks",
        terrain_seed=terrain_seed, duration=8.0, seed=seed,
        bounds_preset="discrete_terrain",
        knots=(CommandKnot(0.0), CommandKnot(1.0, vx=0.3),
               CommandKnot(8.0, vx=0.3)))


SCENARIO_PRESETS = {
    "turn_in_place": turn_in_place,
    "run_ramp": run_ramp,
    "run_then_steer": run_then_steer,
    "payload_trot": payload_trot,
    "stairs": stairs,
    "blocks": blocks,
}


def scenario_preset(name: str, **kwargs) -> ScenarioConfig:
    if name not in SCENARIO_PRESETS:
        raise ValueError(f"unknown scenario preset {name!r}")
    return SCENARIO_PRESETS[name](**kwargs)


# -- training episode sampling ---------------------------------------------------

UNCERTAINTY_VX = (-1.0, 1.0)
UNCERTAINTY_VY = (-0.5, 0.5)
UNCERTAINTY_WZ = (-2.0, 2.0)
UNCERTAINTY_PAYLOAD = (0.0, 3.0)


def sample_training_episode(scenario: str, rng: np.random.Generator,
                            robot: str = "a1",
                            duration: float = 6.0) -> ScenarioConfig:
    """Randomized episode for the training loop: commands ramp from zero
    to a sampled setpoint; payloads and pushes are sampled per scenario."""
    if scenario == "uncertainty":
        vx = rng.uniform(*UNCERTAINTY_VX)
        vy = rng.uniform(*UNCERTAINTY_VY)
        wz = rng.uniform(*UNCERTAINTY_WZ)
        mass = rng.uniform(*UNCERTAINTY_PAYLOAD)
        off = (rng.uniform(-0.05, 0.10), rng.uniform(-0.03, 0.03), 0.05)
        wrenches = ()
        if rng.uniform() < 0.5:
            t_on = rng.uniform(1.0, duration - 1.0)
            fx, fy = rng.uniform(-20.0, 20.0, 2)
            wrenches = ((t_on, t_on + 0.5, fx, fy, 0.0, 0.0, 0.0, 0.0),)
        return ScenarioConfig(
            name="uncertainty_train", robot=robot, gait="trot",
            duration=duration, bounds_preset="uncertainty",
            payload_mass=mass, payload_offset=off, wrenches=wrenches,
            knots=(CommandKnot(0.0), CommandKnot(0.5),
                   CommandKnot(1.5, vx=vx, vy=vy, omega_z=wz),
                   CommandKnot(duration, vx=vx, vy=vy, omega_z=wz)),
            seed=int(rng.integers(2 ** 31)))
    if scenario == "high_speed":
        vx = rng.uniform(0.0, 3.5)
        wz = rng.uniform(-2.0, 2.0) * (rng.uniform() < 0.3)
        return ScenarioConfig(
            name="high_speed_train", robot=robot, gait="trot",
            duration=duration, bounds_preset="high_speed",
            knots=(CommandKnot(0.0), CommandKnot(0.5),
                   CommandKnot(3.0, vx=vx, omega_z=wz),
                   CommandKnot(duration, vx=vx, omega_z=wz)),
            seed=int(rng.integers(2 ** 31)))
    if scenario == "discrete_terrain":
        vx = rng.uniform(0.1, 0.5)
        return ScenarioConfig(
            name="discrete_terrain_train", robot=robot, gait="trot",
            terrain_kind="blocks", terrain_seed=int(rng.integers(2 ** 31)),
            duration=duration, bounds_preset="discrete_terrain",
            knots=(CommandKnot(0.0), CommandKnot(1.0, vx=vx),
                   CommandKnot(duration, vx=vx)),
            seed=int(rng.integers(2 ** 31)))
    raise ValueError(f"unknown training scenario {scenario!r}")
