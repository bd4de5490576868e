"""PPO trainer for the residual policy.

Rollouts run the real controller in augmented mode: a probe object sits in
the policy slot, samples stochastic actions from the numpy net, and records
the exact observations the controller produced. Updates mirror the numpy
network in torch (float64), apply the clipped surrogate with GAE
advantages, then sync parameters back. Everything is seeded: same seed,
same rollouts, same update.

Environments are independent simulator instances stepped round-robin in
process; episodes sample commands, payloads, and pushes per scenario.
"""

import csv
import os
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .controller import LocomotionController
from .policy import (ACT_DIM, OBS_DIM, PolicyNet, RewardWeights,
                     block_reward)
from .presets import full_preset
from .scenarios import sample_training_episode
from .sim import EpisodeDriver

torch.set_default_dtype(torch.float64)

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    lr: float = 3e-4
    epochs: int = 4
    minibatch: int = 512
    rollout_steps: int = 4096
    n_envs: int = 8
    vf_coef: float = 0.5
    ent_coef: float = 0.005
    grad_clip: float = 0.5
    episode_ticks: int = 200  # 6 s episodes at the 30 ms tick
    early_stop_gain: float = 0.20
    eval_every: int = 5
    eval_episodes: int = 10
    reward: RewardWeights = field(default_factory=RewardWeights)


# -- torch mirror ---------------------------------------------------------------

class TorchPolicy(torch.nn.Module):
    """Float64 mirror of PolicyNet used only for gradient updates."""

    def __init__(self, net: PolicyNet) -> None:
        super().__init__()
        sizes = (net.obs_dim,) + net.hidden + (ACT_DIM,)
        self.pi = torch.nn.ModuleList(
            torch.nn.Linear(sizes[i], sizes[i + 1])
            for i in range(len(sizes) - 1))
        vsizes = (net.obs_dim,) + net.hidden + (1,)
        self.vf = torch.nn.ModuleList(
            torch.nn.Linear(vsizes[i], vsizes[i + 1])
            for i in range(len(vsizes) - 1))
        self.log_std = torch.nn.Parameter(torch.zeros(ACT_DIM))
        self.scale = torch.from_numpy(net.bounds.scale().copy())
        self.load_from(net)

    # parameter transport ------------------------------------------------------

    def load_from(self, net: PolicyNet) -> None:
        with torch.no_grad():
            for lin, w, b in zip(self.pi, net.pi_w, net.pi_b):
                lin.weight.copy_(torch.from_numpy(w))
                lin.bias.copy_(torch.from_numpy(b))
            self.log_std.copy_(torch.from_numpy(net.log_std))
            for lin, w, b in zip(self.vf, net.vf_w, net.vf_b):
                lin.weight.copy_(torch.from_numpy(w))
                lin.bias.copy_(torch.from_numpy(b))

    def store_to(self, net: PolicyNet) -> None:
        with torch.no_grad():
            for lin, w, b in zip(self.pi, net.pi_w, net.pi_b):
                w[:] = lin.weight.numpy()
                b[:] = lin.bias.numpy()
            net.log_std[:] = self.log_std.numpy()
            for lin, w, b in zip(self.vf, net.vf_w, net.vf_b):
                w[:] = lin.weight.numpy()
                b[:] = lin.bias.numpy()

    # forward ------------------------------------------------------------------

    def _trunk(self, layers, x):
        h = x
        for lin in list(layers)[:-1]:
            h = torch.tanh(lin(h))
        return layers[-1](h)

    def mean_raw(self, obs: torch.Tensor) -> torch.Tensor:
        return self._trunk(self.pi, obs)

    def value(self, obs: torch.Tensor) -> torch.Tensor:
        return self._trunk(self.vf, obs)[..., 0]

    def evaluate(self, obs: torch.Tensor, raw: torch.Tensor) -> tuple:
        """log-prob of the recorded pre-squash draws, value, entropy."""
        mean = self.mean_raw(obs)
        z = (raw - mean) / torch.exp(self.log_std)
        base = -0.5 * (z * z + _LOG_2PI) - self.log_std
        corr = 2.0 * (np.log(2.0) - raw
                      - torch.nn.functional.softplus(-2.0 * raw)) \
            + torch.log(self.scale)
        log_prob = torch.sum(base - corr, dim=-1)
        entropy = torch.sum(self.log_std
                            + 0.5 * (1.0 + _LOG_2PI), dim=-1).expand(
            obs.shape[0] if obs.dim() > 1 else 1)
        return log_prob, self.value(obs), entropy


# -- rollout machinery ------------------------------------------------------------

class _Probe:
    """Sits in the controller's policy slot during training: samples the
    stochastic action and remembers what the controller showed it."""

    def __init__(self, net: PolicyNet, rng: np.random.Generator) -> None:
        self.net = net
        self.rng = rng
        self.stochastic = True
        self.last: dict | None = None

    def act(self, obs):
        obs = np.asarray(obs, dtype=float)
        if self.stochastic:
            out = self.net.sample(obs, self.rng)
        else:
            out = {"action": self.net.act(obs), "raw": None,
                   "log_prob": 0.0, "value": 0.0}
        out["obs"] = obs
        self.last = out
        return out["action"]


class TrainEnv:
    """One training environment: resampled episode per reset, stepping one
    controller tick at a time through the shared EpisodeDriver."""

    def __init__(self, scenario: str, robot_name: str, probe: _Probe,
                 weights: RewardWeights, episode_ticks: int,
                 seed: int) -> None:
        self.scenario = scenario
        self.robot = full_preset(robot_name)
        self.robot_name = robot_name
        self.probe = probe
        self.weights = weights
        self.episode_ticks = int(episode_ticks)
        self.rng = np.random.default_rng(seed)
        self.episode_reward = 0.0
        self.episode_len = 0
        self.finished: list = []
        self.reset()

    def reset(self) -> None:
        self.cfg = sample_training_episode(self.scenario, self.rng,
                                           robot=self.robot_name)
        self.ctrl = LocomotionController(
            self.robot, gait=self.cfg.gait, mode="augmented",
            policy=self.probe, terrain=self.cfg.terrain)
        self.driver = EpisodeDriver(self.ctrl, self.cfg, seed=self.cfg.seed)
        self.episode_reward = 0.0
        self.episode_len = 0

    def step(self) -> dict:
        """One policy step: tick the controller (the probe samples the
        action inside), advance 30 ms, and score the block."""
        obs_tick = self.driver.observe()
        self.probe.last = None
        cmd = self.ctrl.tick(obs_tick)
        rec = self.probe.last
        rows, fell = self.driver.step_tick(cmd)
        reward = block_reward(rows, obs_tick.v_des, obs_tick.omega_des,
                              self.weights)
        self.episode_reward += reward
        self.episode_len += 1
        done = fell or self.driver.tick_index >= self.episode_ticks
        if done:
            self.finished.append((self.episode_reward, self.episode_len))
            self.reset()
        return {"obs": rec["obs"], "raw": rec["raw"],
                "log_prob": rec["log_prob"], "value": rec["value"],
                "reward": reward, "done": done}

class RolloutBuffer:
    """Fixed-size on-policy storage plus GAE."""

    def __init__(self, n_steps: int, obs_dim: int = OBS_DIM) -> None:
        self.n = n_steps
        self.obs = np.zeros((n_steps, obs_dim))
        self.raw = np.zeros((n_steps, ACT_DIM))
        self.log_prob = np.zeros(n_steps)
        self.value = np.zeros(n_steps)
        self.reward = np.zeros(n_steps)
        self.done = np.zeros(n_steps)
        self.ptr = 0

    def add(self, tr: dict) -> None:
        i = self.ptr
        self.obs[i] = tr["obs"]
        self.raw[i] = tr["raw"]
        self.log_prob[i] = tr["log_prob"]
        self.value[i] = tr["value"]
        self.reward[i] = tr["reward"]
        self.done[i] = float(tr["done"])
        self.ptr += 1

    def compute_gae(self, segment_bounds: list, bootstrap: list,
                    gamma: float, lam: float) -> tuple:
        """Advantages and returns; segments are (start, end) per env with
        a bootstrap value used when the segment ends mid-episode."""
        adv = np.zeros(self.n)
        for (start, end), vboot in zip(segment_bounds, bootstrap):
            last = 0.0
            for i in range(end - 1, start - 1, -1):
                if self.done[i] > 0.5:
                    next_v = 0.0
                    last = 0.0
                elif i == end - 1:
                    next_v = vboot
                else:
                    next_v = self.value[i + 1]
                delta = self.reward[i] + gamma * next_v - self.value[i]
                last = delta + gamma * lam * (0.0 if self.done[i] > 0.5
                                              else last)
                adv[i] = last
        returns = adv + self.value
        return adv, returns


# -- updates ----------------------------------------------------------------------

def ppo_update(tp: TorchPolicy, optimizer: torch.optim.Optimizer,
               buffer: RolloutBuffer, adv: np.ndarray, returns: np.ndarray,
               cfg: PpoConfig, gen: torch.Generator) -> dict:
    """Clipped-surrogate update over the whole buffer. Deterministic for a
    given generator state."""
    obs = torch.from_numpy(buffer.obs)
    raw = torch.from_numpy(buffer.raw)
    old_logp = torch.from_numpy(buffer.log_prob)
    adv_t = torch.from_numpy(adv)
    adv_t = (adv_t - adv_t.mean()) / (adv_t.std() + 1e-8)
    ret_t = torch.from_numpy(returns)

    n = buffer.n
    stats = {"pi_loss": 0.0, "vf_loss": 0.0, "entropy": 0.0,
             "approx_kl": 0.0, "clip_frac": 0.0}
    batches = 0
    for _ in range(cfg.epochs):
        perm = torch.randperm(n, generator=gen)
        for s in range(0, n, cfg.minibatch):
            idx = perm[s:s + cfg.minibatch]
            logp, value, entropy = tp.evaluate(obs[idx], raw[idx])
            ratio = torch.exp(logp - old_logp[idx])
            a = adv_t[idx]
            surr = torch.minimum(
                ratio * a,
                torch.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * a)
            pi_loss = -surr.mean()
            vf_loss = torch.mean((value - ret_t[idx]) ** 2)
            ent = entropy.mean()
            loss = pi_loss + cfg.vf_coef * vf_loss - cfg.ent_coef * ent
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(tp.parameters(), cfg.grad_clip)
            optimizer.step()
            with torch.no_grad():
                stats["pi_loss"] += float(pi_loss)
                stats["vf_loss"] += float(vf_loss)
                stats["entropy"] += float(ent)
                stats["approx_kl"] += float((old_logp[idx] - logp).mean())
                stats["clip_frac"] += float(
                    ((ratio - 1.0).abs() > cfg.clip).double().mean())
            batches += 1
    for k in stats:
        stats[k] /= max(batches, 1)
    if not all(np.isfinite(v) for v in stats.values()):
        raise FloatingPointError("non-finite loss statistics")
    return stats


def episode_rewards_from_log(log, scenario, weights: RewardWeights,
                             block: int = 30) -> np.ndarray:
    """Per-tick rewards recomputed offline from a saved episode log; the
    commands come from the scenario profile at each block start."""
    rows = log.rows
    out = []
    for start in range(0, rows.shape[0], block):
        chunk = rows[start:start + block]
        v_des, omega_des = scenario.command(float(chunk[0, 0]))
        out.append(block_reward(chunk, v_des, omega_des, weights))
    return np.array(out)


# -- evaluation --------------------------------------------------------------------

def evaluate_policy(net: PolicyNet | None, scenario: str, robot_name: str,
                    weights: RewardWeights, episodes: int, seed: int,
                    episode_ticks: int = 200) -> dict:
    """Deterministic evaluation on a fixed set of sampled episodes. With
    net=None the zero-action baseline runs instead (plain baseline mode)."""
    robot = full_preset(robot_name)
    rng = np.random.default_rng(seed)
    rewards, lengths, falls = [], [], 0
    for _ in range(episodes):
        cfg = sample_training_episode(scenario, rng, robot=robot_name)
        if net is None:
            ctrl = LocomotionController(robot, gait=cfg.gait,
                                        mode="baseline",
                                        terrain=cfg.terrain)
        else:
            probe = _Probe(net, np.random.default_rng(0))
            probe.stochastic = False
            ctrl = LocomotionController(robot, gait=cfg.gait,
                                        mode="augmented", policy=probe,
                                        terrain=cfg.terrain)
        driver = EpisodeDriver(ctrl, cfg, seed=cfg.seed)
        total = 0.0
        ticks = 0
        fell = False
        for _ in range(episode_ticks):
            obs_tick = driver.observe()
            cmd = ctrl.tick(obs_tick)
            rows, fell = driver.step_tick(cmd)
            total += block_reward(rows, obs_tick.v_des, obs_tick.omega_des,
                                  weights)
            ticks += 1
            if fell:
                break
        rewards.append(total)
        lengths.append(ticks)
        falls += int(fell)
    return {"mean_reward": float(np.mean(rewards)),
            "mean_length": float(np.mean(lengths)),
            "falls": falls, "rewards": rewards}


# -- training loop ------------------------------------------------------------------

def train(scenario: str = "uncertainty", robot: str = "a1",
          budget: int = 2_000_000, out_dir: str | None = None,
          seed: int = 0, cfg: PpoConfig | None = None,
          net: PolicyNet | None = None, verbose: bool = False) -> tuple:
    """Train the residual policy; returns (net, curve rows).

    Stops early once the deterministic evaluation improves on the
    zero-action baseline by cfg.early_stop_gain, or when the environment
    step budget is exhausted. A zero budget returns the initialized net
    untouched. Non-finite losses halt with a diagnostic checkpoint.
    """
    cfg = cfg or PpoConfig()
    weights = cfg.reward
    if weights.z_des == RewardWeights().z_des:
        weights = RewardWeights(w1=weights.w1, w2=weights.w2, w3=weights.w3,
                                w4=weights.w4,
                                z_des=full_preset(robot).body.z0)
    if net is None:
        name = scenario if scenario in ("high_speed", "uncertainty",
                                        "discrete_terrain") else "uncertainty"
        net = PolicyNet(name, seed=seed)
    curve: list = []
    if budget <= 0:
        return net, curve

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    base = evaluate_policy(None, scenario, robot, weights,
                           cfg.eval_episodes, seed=seed + 7777,
                           episode_ticks=cfg.episode_ticks)
    base_reward = base["mean_reward"]
    denom = max(abs(base_reward), 1.0)
    target = base_reward + cfg.early_stop_gain * denom
    if verbose:
        print(f"baseline eval reward {base_reward:.2f} "
              f"falls {base['falls']}, target {target:.2f}")

    probe = _Probe(net, np.random.default_rng(seed + 101))
    envs = [TrainEnv(scenario, robot, probe, weights, cfg.episode_ticks,
                     seed=seed * 1000 + 17 * i) for i in range(cfg.n_envs)]
    tp = TorchPolicy(net)
    optimizer = torch.optim.Adam(tp.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(seed + 909)

    steps_done = 0
    update = 0
    per_env = cfg.rollout_steps // cfg.n_envs
    while steps_done + per_env * cfg.n_envs <= budget:
        buffer = RolloutBuffer(per_env * cfg.n_envs)
        bounds = []
        boots = []
        t_start = time.perf_counter()
        for env in envs:
            start = buffer.ptr
            for _ in range(per_env):
                buffer.add(env.step())
            bounds.append((start, buffer.ptr))
            # bootstrap with the value of the controller's current stacked
            # observation unless the segment ended exactly on a reset
            if buffer.done[buffer.ptr - 1] > 0.5:
                boots.append(0.0)
            else:
                boots.append(float(net.value(env.ctrl.observation())))
        steps_done += buffer.n
        adv, returns = buffer.compute_gae(bounds, boots, cfg.gamma, cfg.lam)

        try:
            stats = ppo_update(tp, optimizer, buffer, adv, returns, cfg, gen)
        except FloatingPointError:
            if out_dir:
                net.save(os.path.join(out_dir, "diagnostic.ckpt"))
            raise RuntimeError("training halted on non-finite loss; "
                               "diagnostic checkpoint written")
        tp.store_to(net)
        if not all(np.all(np.isfinite(p)) for p in net.parameters()):
            if out_dir:
                net.save(os.path.join(out_dir, "diagnostic.ckpt"))
            raise RuntimeError("training halted on non-finite parameters; "
                               "diagnostic checkpoint written")
        update += 1

        fin = [f for env in envs for f in env.finished]
        for env in envs:
            env.finished = []
        mean_ep_r = float(np.mean([r for r, _l in fin])) if fin else float("nan")
        mean_ep_l = float(np.mean([l for _r, l in fin])) if fin else float("nan")
        row = {"update": update, "env_steps": steps_done,
               "mean_ep_reward": mean_ep_r, "mean_ep_length": mean_ep_l,
               "eval_reward": float("nan"), "eval_falls": float("nan"),
               **stats, "seconds": time.perf_counter() - t_start}

        if update % cfg.eval_every == 0:
            ev = evaluate_policy(net, scenario, robot, weights,
                                 cfg.eval_episodes, seed=seed + 7777,
                                 episode_ticks=cfg.episode_ticks)
            row["eval_reward"] = ev["mean_reward"]
            row["eval_falls"] = ev["falls"]
            if verbose:
                print(f"update {update}: steps {steps_done} "
                      f"eval {ev['mean_reward']:.2f} falls {ev['falls']} "
                      f"target {target:.2f} base_falls {base['falls']}")
            if out_dir:
                net.save(os.path.join(out_dir, "policy_latest.ckpt"))
            # stop only when the reward target holds without extra falls
            if ev["mean_reward"] >= target and ev["falls"] <= base["falls"]:
                curve.append(row)
                break
        elif verbose:
            print(f"update {update}: steps {steps_done} "
                  f"rollout_ep_reward {mean_ep_r:.2f}")
        curve.append(row)

    if out_dir:
        net.save(os.path.join(out_dir, "policy_final.ckpt"))
        write_curve(os.path.join(out_dir, "learning_curve.csv"), curve)
    return net, curve


def write_curve(path: str, curve: list) -> None:
    if not curve:
        return
    keys = list(curve[0].keys())
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=keys)
        w.writeheader()
        for row in curve:
            w.writerow(row)
