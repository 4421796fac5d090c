"""Seeded batch evaluation of navigation policies, plus CSV exports."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .config import RewardConfig, RolloutConfig, SimConfig
from .net import SocialGraphQNet, attention_rows
from .planner import ConstantVelocityModel, CrowdModel, EnvironmentModel, RolloutPlanner
from .sim.actions import Action, build_action_space, nearest_action
from .sim.env import CrowdEnv
from .sim.orca import agent_velocity
from .sim.reward import Status
from .sim.scenario import SeedLike
from .sim.state import JointState

POLICIES = ("orca", "dqn", "sgdqn")


class Policy(Protocol):
    def act(self, obs: JointState) -> Action:
        ...


class OrcaRobotPolicy:
    """ORCA for the robot against pedestrians inflated by the discomfort distance."""

    def __init__(self, sim: SimConfig = SimConfig(), reward: RewardConfig = RewardConfig()):
        self.sim = sim
        self.inflate = reward.discomfort_dist
        self.actions = build_action_space(sim.robot_v_pref)

    def velocity(self, obs: JointState) -> tuple[float, float]:
        r = obs.robot_vec
        rows = obs.peds.tolist()
        for row in rows:
            row[4] += self.inflate
        return agent_velocity(r[0:2], r[2:4], r[4], r[5:7], r[7], rows, self.sim.dt,
                              self.sim.orca_horizon)

    def act(self, obs: JointState) -> Action:
        return nearest_action(self.actions, self.velocity(obs))


class NetworkPolicy:
    """Greedy network policy (depth 0) or rollout-refined policy (depth >= 1)."""

    def __init__(self, net: SocialGraphQNet, rollout: RolloutConfig = RolloutConfig(),
                 crowd: CrowdModel | None = None, gamma: float = 0.9,
                 sim: SimConfig = SimConfig(), reward: RewardConfig = RewardConfig()):
        model = EnvironmentModel(crowd or ConstantVelocityModel(), sim, reward)
        self.planner = RolloutPlanner(net, model, rollout, gamma, sim)

    def act(self, obs: JointState) -> Action:
        return self.planner.plan(obs)


@dataclass
class EpisodeRecord:
    seed: int
    status: Status
    steps: int
    nav_time: float
    discounted_return: float
    total_reward: float
    discomfort_steps: int
    decision_seconds: float
    states: list[JointState] = field(default_factory=list)
    ped_goals: list[np.ndarray] = field(default_factory=list)


def run_episode(env: CrowdEnv, policy: Policy, seed: SeedLike, gamma_step: float,
                record: bool = False, case_seed: int = -1,
                observer: Callable[[JointState, int, float, JointState, Status], None] | None = None
                ) -> EpisodeRecord:
    """Run one episode; ``observer(obs, action_index, reward, next_obs, status)`` sees each step."""
    env.reset(seed)
    states = [env.state.copy()] if record else []
    goals = [env.ped_goals.copy()] if record else []
    ret = total = 0.0
    discount = 1.0
    disc_steps = 0
    decide = 0.0
    obs = env.observe()
    while True:
        t0 = time.perf_counter()
        action = policy.act(obs)
        decide += time.perf_counter() - t0
        out = env.step(action)
        ret += discount * out.reward
        total += out.reward
        discount *= gamma_step
        disc_steps += out.discomfort
        next_obs = env.observe()
        if observer is not None:
            observer(obs, action.index, out.reward, next_obs, out.status)
        if record:
            states.append(env.state.copy())
            goals.append(env.ped_goals.copy())
        obs = next_obs
        if out.status is not Status.RUNNING:
            break
    return EpisodeRecord(case_seed, env.status, env.steps, env.time, ret, total, disc_steps,
                         decide, states, goals)


@dataclass
class TestSuite:
    scenario: str = "simple"
    cases: int = 500
    base_seed: int = 0
    policy: str = "sgdqn"

    __test__ = False  # not a pytest class

    def seeds(self) -> range:
        return range(self.base_seed, self.base_seed + self.cases)


@dataclass
class Metrics:
    success: float
    collision: float
    timeout: float
    nav_time: float
    disc_rate: float
    avg_return: float
    run_time: float
    cases: int

    def as_dict(self) -> dict:
        return asdict(self)


def aggregate(records: Sequence[EpisodeRecord]) -> Metrics:
    """Metrics over episodes; the result does not depend on record order."""
    n = len(records)
    if n == 0:
        raise ValueError("no episodes to aggregate")
    recs = sorted(records, key=lambda r: r.seed)
    counts = {s: sum(r.status is s for r in recs) for s in Status}
    succ = [r.nav_time for r in recs if r.status is Status.REACHED_GOAL]
    steps = sum(r.steps for r in recs)
    return Metrics(
        success=counts[Status.REACHED_GOAL] / n,
        collision=counts[Status.COLLISION] / n,
        timeout=counts[Status.TIMEOUT] / n,
        nav_time=float(np.mean(succ)) if succ else math.nan,
        disc_rate=sum(r.discomfort_steps for r in recs) / steps,
        avg_return=float(np.mean([r.discounted_return for r in recs])),
        run_time=1000.0 * sum(r.decision_seconds for r in recs) / steps,
        cases=n,
    )


def _run_cases(args) -> list[EpisodeRecord]:
    policy, seeds, scenario, sim, reward, gamma_step, record = args
    env = CrowdEnv(scenario, sim, reward)
    return [run_episode(env, policy, s, gamma_step, record, case_seed=s) for s in seeds]


def run_evaluation(policy: Policy, suite: TestSuite, sim: SimConfig = SimConfig(),
                   reward: RewardConfig = RewardConfig(), gamma: float = 0.9,
                   workers: int = 1, record: bool = False) -> tuple[Metrics, list[EpisodeRecord]]:
    """Evaluate ``policy`` on every case of ``suite``; case ``i`` uses seed ``base + i``."""
    gamma_step = gamma ** (sim.dt * sim.robot_v_pref)
    seeds = list(suite.seeds())
    if workers <= 1:
        records = _run_cases((policy, seeds, suite.scenario, sim, reward, gamma_step, record))
    else:
        chunks = [seeds[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            parts = pool.map(_run_cases, [(policy, c, suite.scenario, sim, reward, gamma_step, record)
                                          for c in chunks])
            records = [r for part in parts for r in part]
        records.sort(key=lambda r: r.seed)
    return aggregate(records), records


# --- reporting ---

METRIC_COLUMNS = ("success", "collision", "timeout", "nav_time", "disc_rate", "avg_return", "run_time")


def metrics_table(rows: dict[str, Metrics]) -> str:
    header = f"{'policy':<10}" + "".join(f"{c:>12}" for c in METRIC_COLUMNS)
    lines = [header, "-" * len(header)]
    for name, m in rows.items():
        vals = [getattr(m, c) for c in METRIC_COLUMNS]
        lines.append(f"{name:<10}" + "".join(f"{v:>12.4f}" for v in vals))
    return "\n".join(lines)


def metrics_key(suite: TestSuite) -> str:
    return f"{suite.policy}/{suite.scenario}/seed={suite.base_seed}/n={suite.cases}"


def write_metrics_json(path: str | Path, suite: TestSuite, metrics: Metrics, extra: dict | None = None) -> None:
    doc = {"key": metrics_key(suite), "policy": suite.policy, "scenario": suite.scenario,
           "seed": suite.base_seed, "n_cases": suite.cases,
           # wall-clock varies between runs; callers record run_time separately
           "metrics": {k: v for k, v in metrics.as_dict().items() if k != "run_time"}}
    if extra:
        doc.update(extra)
    try:
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write metrics to {path}: {exc}") from exc


# --- exports ---

TRAJECTORY_FIELDS = ("t", "agent_id", "x", "y", "vx", "vy", "radius", "goal_x", "goal_y")
ATTENTION_FIELDS = ("from_agent", "to_agent", "weight", "layer")


def trajectory_rows(record: EpisodeRecord, dt: float) -> list[tuple]:
    """One row per agent per recorded state; agent 0 is the robot."""
    if not record.states:
        raise ValueError("episode was run without record=True")
    rows = []
    for step, (state, goals) in enumerate(zip(record.states, record.ped_goals)):
        t = step * dt
        r = state.robot_vec
        rows.append((t, 0, r[0], r[1], r[2], r[3], r[4], r[5], r[6]))
        for i, p in enumerate(state.peds):
            rows.append((t, i + 1, p[0], p[1], p[2], p[3], p[4], goals[i][0], goals[i][1]))
    return [tuple(float(v) if k != 1 else int(v) for k, v in enumerate(row)) for row in rows]


def attention_export_rows(state: JointState, net: SocialGraphQNet) -> list[tuple[int, int, float, int]]:
    return attention_rows(net.forward(state).attention, 0)


def _write_csv(path: str | Path, header: Iterable[str], rows: Iterable[tuple]) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            # repr gives the shortest string that parses back to the same float
            w.writerows([repr(v) if isinstance(v, float) else v for v in row] for row in rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _read_csv(path: str | Path, header: Sequence[str], types: Sequence[type]) -> list[tuple]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            got = next(reader, None)
            if got is None or tuple(got) != tuple(header):
                raise ValueError(f"{path}: expected header {','.join(header)}")
            return [tuple(t(v) for t, v in zip(types, row)) for row in reader]
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc


_TRAJ_TYPES = (float, int, float, float, float, float, float, float, float)
_ATTN_TYPES = (int, int, float, int)


def write_trajectory(path: str | Path, rows: Iterable[tuple]) -> None:
    _write_csv(path, TRAJECTORY_FIELDS, rows)


def read_trajectory(path: str | Path) -> list[tuple]:
    return _read_csv(path, TRAJECTORY_FIELDS, _TRAJ_TYPES)


def write_attention(path: str | Path, rows: Iterable[tuple]) -> None:
    _write_csv(path, ATTENTION_FIELDS, rows)


def read_attention(path: str | Path) -> list[tuple]:
    return _read_csv(path, ATTENTION_FIELDS, _ATTN_TYPES)
