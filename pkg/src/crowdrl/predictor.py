"""Learned one-step pedestrian predictor.

Same agent embedders as the Q-network, one attention layer, then a small
per-pedestrian head that regresses the velocity each pedestrian will move
with over the next step. Everything is expressed in the robot-centric
frame of the current state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autograd import Adam, CheckpointError, F, Tape, Tensor, load_params, save_params
from .config import SimConfig
from .evaluation import OrcaRobotPolicy, run_episode
from .net import NetworkDims, _affine, batch_arrays, embed_agents, gat_layer, group_by_crowd_size
from .net import init_params as _init_all
from .sim.env import CrowdEnv
from .sim.state import JointState, to_robot_centric

HEAD_HIDDEN = 64


@dataclass
class Sample:
    state: JointState       # robot-centric
    velocities: np.ndarray  # (N, 2) next-step pedestrian velocities in the same frame


def init_predictor_params(dims: NetworkDims, rng: np.random.Generator) -> dict[str, Tensor]:
    base = _init_all(NetworkDims(dims.robot_in, dims.ped_in, dims.embed_hidden, dims.feature,
                                 dims.attention, 1, dims.common_hidden, dims.n_actions), rng)
    keep = ("robot_embed", "ped_embed", "gat0")
    params = {k: v for k, v in base.items() if k.startswith(keep)}
    for name, fi, fo in (("head.0", dims.feature, HEAD_HIDDEN), ("head.1", HEAD_HIDDEN, 2)):
        bound = 1.0 / math.sqrt(fi)
        params[f"{name}.weight"] = Tensor(rng.uniform(-bound, bound, (fi, fo)), requires_grad=True,
                                          name=f"{name}.weight")
        params[f"{name}.bias"] = Tensor(rng.uniform(-bound, bound, fo), requires_grad=True,
                                        name=f"{name}.bias")
    return params


class CrowdPredictor:
    def __init__(self, dims: NetworkDims = NetworkDims(), seed: int | np.random.Generator = 0,
                 params: dict[str, Tensor] | None = None):
        self.dims = dims
        if params is None:
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            params = init_predictor_params(dims, rng)
        self.params = params

    def forward_arrays(self, robot: np.ndarray, peds: np.ndarray) -> Tensor:
        """(B, N, 2) predicted velocities."""
        h = embed_agents(Tensor(robot), Tensor(peds), self.params)
        h1, _ = gat_layer(h, self.params, 0)
        z = F.add(h, h1)
        n = peds.shape[1]
        z = F.take(z, np.arange(1, n + 1), axis=1)
        z = F.relu(_affine(z, self.params, "head.0"))
        return _affine(z, self.params, "head.1")

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise ValueError(f"predictor parameter names differ: {sorted(set(arrays) ^ set(self.params))}")
        for name, p in self.params.items():
            if arrays[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for parameter {name!r}")
            p.data = np.array(arrays[name], dtype=np.float64)

    def predict(self, state: JointState) -> np.ndarray:
        if state.n_peds == 0:
            return np.zeros((0, 2))
        return self.forward_arrays(state.robot_vec[None], state.peds[None]).data[0]

    def loss(self, samples: Sequence[Sample]) -> Tensor:
        """Mean squared velocity error over all pedestrians in ``samples``."""
        total = None
        count = 0
        for _, idx in sorted(group_by_crowd_size([s.state for s in samples]).items()):
            robot, peds = batch_arrays([samples[i].state for i in idx])
            if peds.shape[1] == 0:
                continue
            target = np.stack([samples[i].velocities for i in idx])
            part = F.sum(F.square(F.sub(self.forward_arrays(robot, peds), Tensor(target))))
            total = part if total is None else F.add(total, part)
            count += target.shape[0] * target.shape[1]
        if total is None:
            raise ValueError("no pedestrians in the given samples")
        return F.scale(total, 1.0 / count)


def save_predictor(path, predictor: CrowdPredictor, report: "PredictorReport | None" = None) -> None:
    meta = {"kind": "crowd_predictor", "report": vars(report) if report else None}
    save_params(path, predictor.state_dict(), meta)


def load_predictor(path) -> CrowdPredictor:
    arrays, meta = load_params(path)
    if meta.get("kind") != "crowd_predictor":
        raise CheckpointError(f"{path}: not a crowd predictor checkpoint")
    model = CrowdPredictor()
    try:
        model.load_state_dict(arrays)
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return model


class LearnedCrowdModel:
    """Adapter so the planner's environment model can use a trained predictor."""

    def __init__(self, predictor: CrowdPredictor):
        self.predictor = predictor

    def pedestrian_velocities(self, state: JointState, dt: float) -> np.ndarray:
        return self.predictor.predict(state)


def next_velocities_in_frame(prev_world: JointState, next_world: JointState) -> np.ndarray:
    """Displacement-based pedestrian velocities, rotated into ``prev``'s robot-centric frame."""
    origin = prev_world.robot_vec[0:2]
    dx, dy = prev_world.robot_vec[5] - origin[0], prev_world.robot_vec[6] - origin[1]
    ang = math.atan2(dy, dx) if (dx or dy) else 0.0
    c, s = math.cos(ang), math.sin(ang)
    v = next_world.peds[:, 2:4]
    return np.stack([c * v[:, 0] + s * v[:, 1], -s * v[:, 0] + c * v[:, 1]], axis=1)


def collect_dataset(episodes: int, scenario: str = "simple", seed: int = 0,
                    sim: SimConfig = SimConfig()) -> list[Sample]:
    """Harvest (state, next pedestrian velocity) pairs from ORCA-robot episodes."""
    env = CrowdEnv(scenario, sim)
    policy = OrcaRobotPolicy(sim)
    samples: list[Sample] = []
    for ep in range(episodes):
        rec = run_episode(env, policy, (seed, ep), 1.0, record=True, case_seed=ep)
        for prev, nxt in zip(rec.states[:-1], rec.states[1:]):
            samples.append(Sample(to_robot_centric(prev), next_velocities_in_frame(prev, nxt)))
    return samples


def displacement_error(predictor: CrowdPredictor, samples: Sequence[Sample], dt: float) -> float:
    """Mean one-step displacement error (metres) over every pedestrian."""
    errs = []
    for s in samples:
        if s.state.n_peds:
            d = (predictor.predict(s.state) - s.velocities) * dt
            errs.append(np.hypot(d[:, 0], d[:, 1]))
    if not errs:
        raise ValueError("no pedestrians in the given samples")
    return float(np.mean(np.concatenate(errs)))


def constant_velocity_error(samples: Sequence[Sample], dt: float) -> float:
    errs = [np.hypot(*((s.state.peds[:, 2:4] - s.velocities) * dt).T) for s in samples if s.state.n_peds]
    return float(np.mean(np.concatenate(errs)))


@dataclass
class PredictorReport:
    train_size: int
    heldout_size: int
    ade_before: float
    ade_after: float
    ade_constant_velocity: float
    final_loss: float


def train_one_step_predictor(samples: Sequence[Sample], epochs: int = 20, batch_size: int = 64,
                             lr: float = 1e-3, seed: int = 0, heldout_fraction: float = 0.2,
                             dt: float = 0.25) -> tuple[CrowdPredictor, PredictorReport]:
    """Fit a predictor by minibatch regression; report held-out displacement error."""
    if not samples:
        raise ValueError("cannot train a predictor on an empty dataset")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_held = int(round(heldout_fraction * len(samples)))
    if len(samples) > 1:
        n_held = min(max(n_held, 1), len(samples) - 1)
    else:
        n_held = 0
    held = [samples[i] for i in order[:n_held]]
    train = [samples[i] for i in order[n_held:]]
    eval_set = held or train
    model = CrowdPredictor(seed=rng)
    before = displacement_error(model, eval_set, dt)
    opt = Adam(model.params, lr=lr)
    last = math.nan
    for _ in range(epochs):
        perm = rng.permutation(len(train))
        for start in range(0, len(train), batch_size):
            batch = [train[i] for i in perm[start:start + batch_size]]
            opt.zero_grad()
            with Tape() as tape:
                loss = model.loss(batch)
            tape.backward(loss)
            opt.step()
            last = loss.item()
    report = PredictorReport(len(train), len(held), before, displacement_error(model, eval_set, dt),
                             constant_velocity_error(eval_set, dt), last)
    return model, report
