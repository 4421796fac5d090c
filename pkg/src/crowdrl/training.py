"""Deep Q-learning with experience replay and a periodically synced target network."""
from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .autograd import Adam, F, Tape, Tensor, load_params, save_params
from .autograd.serialize import FORMAT_VERSION, CheckpointError
from .config import RolloutConfig, RunConfig, TrainConfig, config_dict
from .evaluation import NetworkPolicy, TestSuite, aggregate, run_episode
from .net import NetworkDims, SocialGraphQNet, batch_arrays, group_by_crowd_size
from .sim.actions import N_ACTIONS, build_action_space
from .sim.env import CrowdEnv
from .sim.reward import Status
from .sim.state import JointState

log = logging.getLogger(__name__)

# independent seed streams, so training and validation scenarios never coincide
TRAIN_STREAM = 1
VALIDATION_STREAM = 2
EXPLORE_STREAM = 3
SAMPLE_STREAM = 4
INIT_STREAM = 5

LOG_FIELDS = ("episode", "avg_reward_100", "avg_return_100", "nav_time_100",
              "disc_rate_100", "epsilon", "loss")


def epsilon_at(episode: int, cfg: TrainConfig = TrainConfig()) -> float:
    if episode < 0:
        raise ValueError("episode must be >= 0")
    if episode >= cfg.eps_decay_episodes:
        return cfg.eps_end
    frac = episode / cfg.eps_decay_episodes
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


def discount_factor_per_step(gamma: float, dt: float, v_pref: float) -> float:
    return gamma ** (dt * v_pref)


@dataclass(frozen=True)
class Transition:
    state: JointState
    action: int
    reward: float
    next_state: JointState
    terminal: bool

    def __post_init__(self):
        if not 0 <= self.action < N_ACTIONS:
            raise ValueError(f"action index {self.action} outside [0, {N_ACTIONS - 1}]")


class ReplayMemory:
    """Fixed-capacity FIFO ring buffer."""

    def __init__(self, capacity: int = 100_000):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)
        self.inserted = 0

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Transition:
        return self._items[i]

    def push(self, t: Transition) -> None:
        self._items.append(t)
        self.inserted += 1

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        """Uniform draw without replacement (the whole memory if it holds fewer than ``n``)."""
        size = len(self._items)
        if size == 0:
            raise ValueError("cannot sample from an empty replay memory")
        idx = rng.choice(size, size=min(n, size), replace=False)
        return [self._items[i] for i in idx]


def td_targets(batch: Sequence[Transition], target: SocialGraphQNet, gamma_step: float,
               selector: SocialGraphQNet | None = None) -> np.ndarray:
    """``r`` for terminal transitions, else ``r + gamma' * max_a' Q'(s', a')``.

    With a ``selector`` network the bootstrap action is its argmax and only
    the evaluation comes from ``target`` (double Q-learning).
    """
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    live = [i for i, t in enumerate(batch) if not t.terminal]
    out = rewards.copy()
    if live:
        next_states = [batch[i].next_state for i in live]
        q_next = target.q_batch(next_states)
        if selector is None:
            out[live] += gamma_step * q_next.max(axis=1)
        else:
            best = selector.q_batch(next_states).argmax(axis=1)
            out[live] += gamma_step * q_next[np.arange(len(live)), best]
    return out


def td_target(t: Transition, target: SocialGraphQNet, gamma_step: float) -> float:
    return float(td_targets([t], target, gamma_step)[0])


def td_loss(batch: Sequence[Transition], online: SocialGraphQNet, targets: np.ndarray) -> Tensor:
    """Sum of squared TD errors; crowd-size groups are forwarded separately."""
    total = None
    for _, idx in sorted(group_by_crowd_size([t.state for t in batch]).items()):
        robot, peds = batch_arrays([batch[i].state for i in idx])
        q = online.forward_arrays(robot, peds).q
        chosen = F.pick(q, np.array([batch[i].action for i in idx]))
        err = F.sub(chosen, Tensor(targets[idx]))
        part = F.sum(F.square(err))
        total = part if total is None else F.add(total, part)
    return total


def train_step(batch: Sequence[Transition], online: SocialGraphQNet, target: SocialGraphQNet,
               optimizer: Adam, gamma_step: float, double_q: bool = False) -> float:
    """One Adam update of ``online`` on ``batch``; returns the pre-update loss."""
    if not batch:
        raise ValueError("train_step needs a non-empty batch")
    targets = td_targets(batch, target, gamma_step, online if double_q else None)
    optimizer.zero_grad()
    with Tape() as tape:
        loss = td_loss(batch, online, targets)
    tape.backward(loss)
    optimizer.step()
    return loss.item()


class _EpsilonGreedy:
    def __init__(self, net: SocialGraphQNet, rng: np.random.Generator, actions):
        self.net = net
        self.rng = rng
        self.actions = actions
        self.epsilon = 1.0

    def act(self, obs: JointState):
        # draw the coin every step so the random stream does not depend on the network
        explore = self.rng.random() < self.epsilon
        a = int(self.rng.integers(N_ACTIONS))
        if not explore:
            a = int(np.argmax(self.net.q(obs)))
        return self.actions[a]


@dataclass
class TrainingResult:
    net: SocialGraphQNet
    log: list[dict[str, float]]
    validations: list[dict[str, Any]] = field(default_factory=list)
    target_syncs: list[int] = field(default_factory=list)
    episodes: int = 0


def validate(net: SocialGraphQNet, cfg: RunConfig, episodes: int | None = None) -> dict[str, Any]:
    """Greedy policy on held-out seeded episodes."""
    n = cfg.train.validation_episodes if episodes is None else episodes
    env = CrowdEnv(cfg.train.scenario, cfg.sim, cfg.reward)
    policy = NetworkPolicy(net, RolloutConfig(depth=0, width=1), gamma=cfg.train.gamma,
                           sim=cfg.sim, reward=cfg.reward)
    gamma_step = discount_factor_per_step(cfg.train.gamma, cfg.sim.dt, cfg.sim.robot_v_pref)
    records = [run_episode(env, policy, (VALIDATION_STREAM, cfg.train.seed, i), gamma_step, case_seed=i)
               for i in range(n)]
    m = aggregate(records)
    return {"success": m.success, "collision": m.collision, "timeout": m.timeout,
            "avg_return": m.avg_return}


def run_training(cfg: RunConfig, net: SocialGraphQNet | None = None,
                 on_episode: Callable[[dict[str, float]], None] | None = None,
                 validate_every: int | None = None) -> TrainingResult:
    """Train from scratch (or from ``net``) for ``cfg.train.episodes`` episodes.

    Every random draw comes from a generator keyed on ``cfg.train.seed``, so a
    config reproduces its log exactly. ``validate_every`` defaults to
    ``train.validation_interval`` (itself defaulting to the target sync
    period); 0 disables validation. Validation draws from its own seed
    stream, so its schedule never changes the training run.
    """
    tc, sim = cfg.train, cfg.sim
    seed = tc.seed
    online = net or SocialGraphQNet(NetworkDims(), np.random.default_rng([INIT_STREAM, seed]))
    target = online.copy()
    optimizer = Adam(online.params, lr=tc.lr)
    memory = ReplayMemory(tc.capacity)
    explore_rng = np.random.default_rng([EXPLORE_STREAM, seed])
    sample_rng = np.random.default_rng([SAMPLE_STREAM, seed])
    env = CrowdEnv(tc.scenario, sim, cfg.reward)
    actions = build_action_space(sim.robot_v_pref)
    gamma_step = discount_factor_per_step(tc.gamma, sim.dt, sim.robot_v_pref)
    policy = _EpsilonGreedy(online, explore_rng, actions)
    if validate_every is None:
        validate_every = tc.validation_interval or tc.target_update
    every = validate_every

    result = TrainingResult(online, [])
    window: deque = deque(maxlen=100)
    losses: list[float] = []

    def update():
        batch = memory.sample(tc.batch_size, sample_rng)
        losses.append(train_step(batch, online, target, optimizer, gamma_step, tc.double_q))

    def observe(obs, a, r, next_obs, status):
        # a timeout is a truncation, not a terminal state, so it still bootstraps
        terminal = status in (Status.REACHED_GOAL, Status.COLLISION)
        memory.push(Transition(obs, a, r, next_obs, terminal))
        if tc.update_every_step:
            for _ in range(tc.grad_steps):
                update()

    for episode in range(tc.episodes):
        policy.epsilon = epsilon_at(episode, tc)
        losses.clear()
        rec = run_episode(env, policy, (TRAIN_STREAM, seed, episode), gamma_step,
                          case_seed=episode, observer=observe)
        if not tc.update_every_step:
            for _ in range(tc.grad_steps):
                update()
        window.append(rec)
        succ = [r.nav_time for r in window if r.status is Status.REACHED_GOAL]
        row = {
            "episode": episode + 1,
            "avg_reward_100": float(np.mean([r.total_reward for r in window])),
            "avg_return_100": float(np.mean([r.discounted_return for r in window])),
            "nav_time_100": float(np.mean(succ)) if succ else math.nan,
            "disc_rate_100": float(np.mean([r.discomfort_steps / r.steps for r in window])),
            "epsilon": policy.epsilon,
            "loss": float(np.mean(losses)) if losses else math.nan,
        }
        result.log.append(row)
        if on_episode is not None:
            on_episode(row)
        done = episode + 1
        if every and done % every == 0:
            v = validate(online, cfg)
            v["episode"] = done
            result.validations.append(v)
            log.info("episode %d: validation success %.3f", done, v["success"])
        if done % tc.target_update == 0:
            target.load_state_dict(online.state_dict())
            result.target_syncs.append(done)
    result.episodes = tc.episodes
    return result


# --- checkpoints ---

def save_checkpoint(path: str | Path, net: SocialGraphQNet, cfg: RunConfig | None = None,
                    episodes: int = 0, extra: dict | None = None) -> None:
    config = config_dict(cfg) if cfg is not None else None
    if config is not None:
        # where a run was written is not part of what it computed
        config.pop("output_dir", None)
    meta = {"format_version": FORMAT_VERSION, "episodes": episodes,
            "dims": vars(net.dims).copy(), "config": config}
    if extra:
        meta.update(extra)
    save_params(path, net.state_dict(), meta)


def load_checkpoint(path: str | Path, dims: NetworkDims | None = None) -> tuple[SocialGraphQNet, dict]:
    """Rebuild the network stored at ``path``; mismatched shapes raise ``CheckpointError``."""
    arrays, meta = load_params(path)
    if dims is None:
        try:
            dims = NetworkDims(**meta.get("dims", {}))
        except TypeError as exc:
            raise CheckpointError(f"{path}: bad network dimensions in metadata: {exc}") from exc
    net = SocialGraphQNet(dims)
    try:
        net.load_state_dict(arrays)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return net, meta


def write_log(path: str | Path, rows: Sequence[dict[str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for row in rows:
            w.writerow([row[k] if k in ("episode",) else repr(float(row[k])) for k in LOG_FIELDS])
