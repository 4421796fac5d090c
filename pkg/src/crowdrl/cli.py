"""Command-line entry points.

Settings are layered: built-in defaults, then ``--config FILE`` (INI), then
``--set section.key=value`` and the dedicated flags of each command.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from .autograd import CheckpointError
from .config import ConfigError, RolloutConfig, RunConfig, apply_overrides, load_config, save_config
from .evaluation import (POLICIES, NetworkPolicy, OrcaRobotPolicy, TestSuite, attention_export_rows,
                         metrics_table, run_episode, run_evaluation, trajectory_rows,
                         write_attention, write_metrics_json, write_trajectory)
from .sim.env import CrowdEnv
from .sim.state import to_robot_centric
from .training import load_checkpoint, run_training, save_checkpoint, write_log

log = logging.getLogger("crowdrl")


class CliError(Exception):
    pass


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _parse_sets(items: Sequence[str]) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for item in items:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out.setdefault(section, {})[name] = value.strip()
    return out


def resolve_config(args: argparse.Namespace, flag_map: dict[str, tuple[str, str]]) -> RunConfig:
    cfg = load_config(args.config, _parse_sets(args.set or []))
    flags: dict[str, dict[str, Any]] = {}
    for attr, (section, key) in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            flags.setdefault(section, {})[key] = value
    return apply_overrides(cfg, flags) if flags else cfg


def _out_dir(cfg: RunConfig) -> Path:
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out: Path, command: str, cfg: RunConfig, **extra: Any) -> None:
    save_config(cfg, out / "config.ini")
    doc = {"command": command, "seed": cfg.train.seed if command == "train" else cfg.eval.seed}
    doc.update(extra)
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _crowd_model(cfg: RunConfig):
    if cfg.rollout.model == "constant_velocity":
        return None
    if cfg.rollout.model == "learned":
        from .predictor import LearnedCrowdModel, load_predictor
        if not cfg.rollout.predictor_path:
            raise CliError("rollout.model = learned needs rollout.predictor_path (or --predictor)")
        return LearnedCrowdModel(load_predictor(cfg.rollout.predictor_path))
    raise CliError(f"unknown rollout.model {cfg.rollout.model!r} (expected constant_velocity or learned)")


def build_policy(cfg: RunConfig, checkpoint: str | None):
    policy = cfg.eval.policy
    if policy not in POLICIES:
        raise CliError(f"unknown policy {policy!r}; choose from {', '.join(POLICIES)}")
    if policy == "orca":
        if checkpoint:
            raise CliError("--policy orca does not use a checkpoint; drop --checkpoint")
        return OrcaRobotPolicy(cfg.sim, cfg.reward), cfg
    if not checkpoint:
        raise CliError(f"--policy {policy} needs --checkpoint")
    net, _ = load_checkpoint(checkpoint)
    if policy == "dqn":
        # the dueling-DQN row is the same network without look-ahead
        cfg = apply_overrides(cfg, {"rollout": {"depth": 0}})
    return NetworkPolicy(net, cfg.rollout, _crowd_model(cfg), cfg.train.gamma, cfg.sim, cfg.reward), cfg


# --- commands ---

TRAIN_FLAGS = {"episodes": ("train", "episodes"), "seed": ("train", "seed"),
               "scenario": ("train", "scenario"), "grad_steps": ("train", "grad_steps"),
               "output_dir": ("run", "output_dir")}

EVAL_FLAGS = {"policy": ("eval", "policy"), "scenario": ("eval", "scenario"),
              "cases": ("eval", "cases"), "seed": ("eval", "seed"), "workers": ("eval", "workers"),
              "depth": ("rollout", "depth"), "width": ("rollout", "width"),
              "model": ("rollout", "model"), "predictor": ("rollout", "predictor_path"),
              "output_dir": ("run", "output_dir")}


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, TRAIN_FLAGS)
    out = _out_dir(cfg)
    save_config(cfg, out / "config.ini")

    def progress(row):
        if row["episode"] % 100 == 0:
            log.info("episode %d  reward %.3f  eps %.3f  loss %.4f", row["episode"],
                     row["avg_reward_100"], row["epsilon"], row["loss"])

    result = run_training(cfg, on_episode=progress)
    ckpt = out / "checkpoint.npz"
    save_checkpoint(ckpt, result.net, cfg, result.episodes)
    write_log(out / "train_log.csv", result.log)
    (out / "validation.json").write_text(json.dumps(result.validations, indent=2) + "\n")
    _write_manifest(out, "train", cfg, checkpoint="checkpoint.npz",
                    checkpoint_sha256=file_sha256(ckpt), target_syncs=result.target_syncs)
    last = result.validations[-1]["success"] if result.validations else float("nan")
    print(f"trained {result.episodes} episodes; last validation success {last:.3f}; wrote {out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, EVAL_FLAGS)
    policy, cfg = build_policy(cfg, args.checkpoint)
    out = _out_dir(cfg)
    suite = TestSuite(cfg.eval.scenario, cfg.eval.cases, cfg.eval.seed, cfg.eval.policy)
    metrics, records = run_evaluation(policy, suite, cfg.sim, cfg.reward, cfg.train.gamma,
                                      cfg.eval.workers, record=args.export)
    extra = {"depth": cfg.rollout.depth if cfg.eval.policy != "orca" else None,
             "width": cfg.rollout.width if cfg.eval.policy != "orca" else None}
    write_metrics_json(out / f"metrics_{suite.policy}.json", suite, metrics, extra)
    (out / f"timing_{suite.policy}.json").write_text(
        json.dumps({"run_time_ms": metrics.run_time}, indent=2) + "\n")
    manifest: dict[str, Any] = {"policy": suite.policy}
    if args.checkpoint:
        manifest["checkpoint"] = str(args.checkpoint)
        manifest["checkpoint_sha256"] = file_sha256(args.checkpoint)
    _write_manifest(out, "evaluate", cfg, **manifest)
    if args.export:
        traj_dir = out / "trajectories"
        traj_dir.mkdir(exist_ok=True)
        for rec in records:
            write_trajectory(traj_dir / f"case_{rec.seed}.csv", trajectory_rows(rec, cfg.sim.dt))
        if isinstance(policy, NetworkPolicy):
            attn_dir = out / "attention"
            attn_dir.mkdir(exist_ok=True)
            for rec in records:
                write_attention(attn_dir / f"case_{rec.seed}.csv",
                                attention_export_rows(to_robot_centric(rec.states[0]), policy.planner.net))
    print(metrics_table({suite.policy: metrics}))
    return 0


def cmd_export_traj(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, EVAL_FLAGS)
    policy, cfg = build_policy(cfg, args.checkpoint)
    env = CrowdEnv(cfg.eval.scenario, cfg.sim, cfg.reward)
    rec = run_episode(env, policy, cfg.eval.seed, cfg.train.gamma ** (cfg.sim.dt * cfg.sim.robot_v_pref),
                      record=True, case_seed=cfg.eval.seed)
    write_trajectory(args.out, trajectory_rows(rec, cfg.sim.dt))
    print(f"episode {rec.status.value} after {rec.steps} steps; wrote {args.out}")
    return 0


def cmd_inspect_attention(args: argparse.Namespace) -> int:
    cfg = resolve_config(args, EVAL_FLAGS)
    net, _ = load_checkpoint(args.checkpoint)
    env = CrowdEnv(cfg.eval.scenario, cfg.sim, cfg.reward)
    env.reset(cfg.eval.seed)
    policy = NetworkPolicy(net, RolloutConfig(depth=0, width=1), None, cfg.train.gamma, cfg.sim, cfg.reward)
    for _ in range(args.step):
        if env.status.value != "running":
            raise CliError(f"episode ended before step {args.step}")
        env.step(policy.act(env.observe()))
    rows = attention_export_rows(env.observe(), net)
    write_attention(args.out, rows)
    robot_rows = [r for r in rows if r[0] == 0 and r[3] == net.dims.layers]
    for _, to, w, _ in robot_rows:
        print(f"robot -> agent {to}: {w:.4f}")
    return 0


def cmd_predict_train(args: argparse.Namespace) -> int:
    from .predictor import collect_dataset, save_predictor, train_one_step_predictor
    cfg = resolve_config(args, {"scenario": ("eval", "scenario"), "seed": ("eval", "seed")})
    samples = collect_dataset(args.episodes, cfg.eval.scenario, cfg.eval.seed, cfg.sim)
    model, report = train_one_step_predictor(samples, epochs=args.epochs, seed=cfg.eval.seed, dt=cfg.sim.dt)
    save_predictor(args.out, model, report)
    print(f"held-out displacement error: untrained {report.ade_before:.4f} m, "
          f"trained {report.ade_after:.4f} m, constant velocity {report.ade_constant_velocity:.4f} m")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdrl", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI file layered over the defaults")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("--seed", type=int)
        p.add_argument("--scenario", choices=("simple", "complex"))

    p = sub.add_parser("train", help="deep Q-learning run")
    common(p)
    p.add_argument("--episodes", type=int)
    p.add_argument("--grad-steps", dest="grad_steps", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.set_defaults(func=cmd_train)

    def policy_args(p):
        p.add_argument("--policy", choices=POLICIES)
        p.add_argument("--checkpoint")
        p.add_argument("--depth", type=int)
        p.add_argument("--width", type=int)
        p.add_argument("--model", choices=("constant_velocity", "learned"))
        p.add_argument("--predictor", help="learned predictor checkpoint")

    p = sub.add_parser("evaluate", help="seeded test suite")
    common(p)
    policy_args(p)
    p.add_argument("--cases", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--export", action="store_true", help="also write trajectories and attention")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-traj", help="one episode's trajectory as CSV")
    common(p)
    policy_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_traj)

    p = sub.add_parser("inspect-attention", help="attention weights of a state as CSV")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--step", type=int, default=0, help="greedy steps to take before inspecting")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect_attention)

    p = sub.add_parser("predict-train", help="fit the learned crowd predictor")
    common(p)
    p.add_argument("--episodes", type=int, default=50, help="ORCA-robot episodes to harvest")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict_train)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, CliError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
