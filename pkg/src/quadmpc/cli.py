"""Command-line harness: run episodes, train the residual policy, compare
logs, benchmark controller timing, and sweep seeds.

Every verb reads a scenario YAML (except train, which samples episodes
from a named distribution) and writes its artifacts under --out: episode
logs as CSV, metrics and diffs as flat key=value text, learning curves as
CSV. Baseline and augmented runs of the same config share every parameter
except the policy source, which the embedded config hash makes checkable
after the fact.
"""

import argparse
import dataclasses
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .controller import LocomotionController
from .metrics import compare as compare_reports
from .metrics import compute_metrics
from .policy import PolicyNet
from .ppo import PpoConfig, train as ppo_train
from .presets import full_preset, preset_names
from .scenarios import SCENARIO_PRESETS, ScenarioConfig, scenario_preset
from .sim import EpisodeLog, run_episode

MODES = ("baseline", "augmented", "oracle")


def _load_config(args) -> ScenarioConfig:
    if args.config in SCENARIO_PRESETS:
        cfg = scenario_preset(args.config)
    else:
        cfg = ScenarioConfig.load(args.config)
    if getattr(args, "robot", None):
        cfg = dataclasses.replace(cfg, robot=args.robot)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _build_controller(cfg: ScenarioConfig, mode: str,
                      checkpoint: str | None) -> LocomotionController:
    robot = full_preset(cfg.robot)
    common = dict(gait=cfg.gait, terrain=cfg.terrain,
                  swing_height=cfg.swing_height)
    if mode == "augmented":
        if not checkpoint:
            raise SystemExit("augmented mode requires --checkpoint")
        if not os.path.exists(checkpoint):
            raise SystemExit(f"checkpoint not found: {checkpoint}")
        policy = PolicyNet.load(checkpoint)
        return LocomotionController(robot, mode="augmented", policy=policy,
                                    **common)
    if mode == "oracle":
        return LocomotionController(robot, mode="oracle",
                                    known_disturbance=cfg.disturbance,
                                    **common)
    return LocomotionController(robot, mode="baseline", **common)


def _out_prefix(args, cfg: ScenarioConfig, mode: str) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, f"{cfg.name}_{mode}_s{cfg.seed}")


# -- verbs -------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = _load_config(args)
    ctrl = _build_controller(cfg, args.mode, args.checkpoint)
    log = run_episode(ctrl, cfg, seed=cfg.seed)
    log.meta["config_hash"] = cfg.config_hash()
    report = compute_metrics(log, cfg)
    prefix = _out_prefix(args, cfg, args.mode)
    log.save(prefix + ".log.csv")
    report.save(prefix + ".metrics.txt")
    print(f"episode: {cfg.name} robot={cfg.robot} mode={args.mode} "
          f"seed={cfg.seed}")
    print(report.to_text(), end="")
    print(f"wrote {prefix}.log.csv and {prefix}.metrics.txt")
    if log.fault is not None:
        print(f"controller fault: {log.fault}", file=sys.stderr)
        return 2
    return 0


def cmd_compare(args) -> int:
    log_a = EpisodeLog.load(args.log_a)
    log_b = EpisodeLog.load(args.log_b)
    ha = log_a.meta.get("config_hash")
    hb = log_b.meta.get("config_hash")
    if ha and hb and ha != hb:
        raise SystemExit("logs come from different scenario configs "
                         f"({ha} vs {hb}); comparison would not be "
                         "mode-isolated")
    cfg = _load_config(args)
    rep_a = compute_metrics(log_a, cfg)
    rep_b = compute_metrics(log_b, cfg)
    deltas = compare_reports(rep_a, rep_b)
    lines = [f"{k}={v:.10g}" if isinstance(v, float) else f"{k}={v}"
             for k, v in deltas.items()]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "compare.txt")
        with open(path, "w") as f:
            f.write(text)
        print(f"wrote {path}")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    ctrl = _build_controller(cfg, args.mode, args.checkpoint)
    from .sim import EpisodeDriver
    driver = EpisodeDriver(ctrl, cfg, seed=cfg.seed)
    for _ in range(args.ticks):
        obs = driver.observe()
        cmd = ctrl.tick(obs)
        rows, fell = driver.step_tick(cmd)
        if fell:
            break
    samples = ctrl.timing_samples()
    lines = [f"n_ticks={len(samples['mpc_ms'])}"]
    for key in ("mpc_ms", "policy_ms"):
        arr = samples[key]
        if arr.size:
            lines += [f"{key}_mean={np.mean(arr):.6g}",
                      f"{key}_p50={np.percentile(arr, 50):.6g}",
                      f"{key}_p99={np.percentile(arr, 99):.6g}",
                      f"{key}_max={np.max(arr):.6g}"]
        else:
            lines += [f"{key}_mean=nan", f"{key}_p50=nan",
                      f"{key}_p99=nan", f"{key}_max=nan"]
    lines.append(f"uncertified_ticks={ctrl.uncertified_ticks}")
    text = "\n".join(lines) + "\n"
    print(text, end="")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"{cfg.name}_{args.mode}_bench.txt")
        with open(path, "w") as f:
            f.write(text)
        print(f"wrote {path}")
    return 0


def _sweep_one(payload: tuple) -> tuple:
    cfg_dict, mode, checkpoint, seed, out = payload
    cfg = dataclasses.replace(ScenarioConfig.from_dict(cfg_dict), seed=seed)
    ctrl = _build_controller(cfg, mode, checkpoint)
    log = run_episode(ctrl, cfg, seed=seed)
    log.meta["config_hash"] = cfg.config_hash()
    report = compute_metrics(log, cfg)
    if out:
        prefix = os.path.join(out, f"{cfg.name}_{mode}_s{seed}")
        log.save(prefix + ".log.csv")
        report.save(prefix + ".metrics.txt")
    return (seed, report.mean_speed_err, report.survival_time,
            int(report.fell), report.foot_traps)


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    seeds = [int(s) for s in args.seeds.split(",")]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    payloads = [(cfg.to_dict(), args.mode, args.checkpoint, s, args.out)
                for s in seeds]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_one, payloads))
    else:
        results = [_sweep_one(p) for p in payloads]
    header = "seed,mean_speed_err,survival_time,fell,foot_traps"
    lines = [header]
    for row in results:
        lines.append(",".join(f"{v:.10g}" if isinstance(v, float)
                              else str(v) for v in row))
    falls = sum(r[3] for r in results)
    text = "\n".join(lines) + "\n"
    print(text, end="")
    print(f"falls: {falls}/{len(results)}")
    if args.out:
        path = os.path.join(args.out, f"{cfg.name}_{args.mode}_sweep.csv")
        with open(path, "w") as f:
            f.write(text)
        print(f"wrote {path}")
    return 0


def cmd_train(args) -> int:
    cfg = PpoConfig()
    if args.rollout:
        cfg.rollout_steps = args.rollout
    if args.envs:
        cfg.n_envs = args.envs
    if args.episode_ticks:
        cfg.episode_ticks = args.episode_ticks
    cfg.minibatch = min(cfg.minibatch, cfg.rollout_steps)
    if args.budget < 0:
        raise SystemExit("budget must be non-negative")
    net, curve = ppo_train(args.scenario, args.robot, budget=args.budget,
                           out_dir=args.out, seed=args.seed, cfg=cfg,
                           verbose=True)
    if curve:
        last = curve[-1]
        print(f"finished after {last['update']} updates, "
              f"{last['env_steps']} env steps")
    if args.out:
        print(f"artifacts in {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="quadmpc",
        description="Quadruped MPC locomotion harness: episodes, training, "
                    "comparisons, and timing benchmarks.")
    sub = parser.add_subparsers(dest="verb", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True,
                           help="scenario YAML path or preset name "
                                f"({', '.join(SCENARIO_PRESETS)})")
        p.add_argument("--mode", choices=MODES, default="baseline")
        p.add_argument("--checkpoint", default=None,
                       help="policy checkpoint (augmented mode)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--robot", choices=preset_names(), default=None,
                       help="override the scenario robot")
        p.add_argument("--out", default=None, help="output directory")

    p_run = sub.add_parser("run", help="run one episode, write log+metrics")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="metric deltas between two logs")
    p_cmp.add_argument("log_a")
    p_cmp.add_argument("log_b")
    add_common(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_bench = sub.add_parser("bench", help="controller timing distribution")
    add_common(p_bench)
    p_bench.add_argument("--ticks", type=int, default=300)
    p_bench.set_defaults(func=cmd_bench)

    p_sweep = sub.add_parser("sweep", help="independent episodes over seeds")
    add_common(p_sweep)
    p_sweep.add_argument("--seeds", default="0,1,2,3,4",
                         help="comma-separated seed list")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    p_train = sub.add_parser("train", help="PPO training on a scenario "
                                           "distribution")
    p_train.add_argument("--scenario", default="uncertainty",
                         choices=("uncertainty", "high_speed",
                                  "discrete_terrain"))
    p_train.add_argument("--robot", choices=preset_names(), default="a1")
    p_train.add_argument("--budget", type=int, default=2_000_000,
                         help="environment step cap")
    p_train.add_argument("--seed", type=int, default=0)
    p_train.add_argument("--out", default="train_out")
    p_train.add_argument("--rollout", type=int, default=0,
                         help="override steps per update (small-scale runs)")
    p_train.add_argument("--envs", type=int, default=0,
                         help="override environment count")
    p_train.add_argument("--episode-ticks", type=int, default=0,
                         help="override episode length in ticks")
    p_train.set_defaults(func=cmd_train)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
