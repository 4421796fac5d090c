"""Look-ahead refinement of coarse Q-values with a crowd model.

For each of the top-``k`` actions the model predicts the next state and its
reward, and the coarse value is blended with the bootstrapped return::

    Q^d(s, a) = d/(d+1) * Q(s, a) + 1/(d+1) * (r + gamma' * max_a' Q^{d-1}(s', a'))

with ``Q^0 = Q`` and the inner max itself ranging over the top-``k`` actions
of ``s'``. Predicted goal arrivals and collisions stop the recursion.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .config import RewardConfig, RolloutConfig, SimConfig
from .net import SocialGraphQNet
from .sim.actions import Action, build_action_space
from .sim.env import robot_world_velocity
from .sim.reward import Status
from .sim.state import JointState, to_robot_centric, wrap_angle


@dataclass
class Prediction:
    next_state: JointState
    reward: float
    status: Status


class CrowdModel(Protocol):
    def pedestrian_velocities(self, state: JointState, dt: float) -> np.ndarray:
        """(N, 2) velocities the pedestrians will move with over the next step."""
        ...


class ConstantVelocityModel:
    """Every pedestrian keeps its current velocity."""

    def pedestrian_velocities(self, state: JointState, dt: float) -> np.ndarray:
        return state.peds[:, 2:4].copy()


def predict_crowd_constant_velocity(state: JointState, dt: float) -> np.ndarray:
    """Next pedestrian rows ``(N, 5)`` under constant velocity."""
    peds = state.peds.copy()
    peds[:, 0:2] += peds[:, 2:4] * dt
    return peds


class EnvironmentModel:
    """One-step predictor of ``(next state, reward)`` for a robot action.

    The robot moves by its exact holonomic kinematics; only pedestrian
    motion comes from ``crowd``. Rewards are the true reward function
    applied to the predicted states. Inputs are never mutated.
    """

    def __init__(self, crowd: CrowdModel | None = None, sim: SimConfig = SimConfig(),
                 reward: RewardConfig = RewardConfig()):
        self.crowd = crowd or ConstantVelocityModel()
        self.sim = sim
        self.reward = reward

    def predict(self, state: JointState, action: Action) -> Prediction:
        return self.predict_many(state, [action])[0]

    def predict_many(self, state: JointState, actions: Sequence[Action]) -> list[Prediction]:
        """:meth:`predict` for several actions from one state.

        The crowd does not react to the robot, so it is predicted once and
        the robot moves, separations and rewards are computed together.
        """
        dt, cfg = self.sim.dt, self.reward
        r = state.robot_vec
        ped_v = self.crowd.pedestrian_velocities(state, dt)
        peds = state.peds.copy()
        peds[:, 0:2] += ped_v * dt
        peds[:, 2:4] = ped_v

        vel = np.array([robot_world_velocity(r, a) for a in actions]).reshape(-1, 2)
        # min separation of each action's straight robot path against every pedestrian
        dp = r[0:2] - state.peds[:, 0:2]                      # (N, 2)
        dv = vel[:, None, :] - ped_v[None, :, :]              # (K, N, 2)
        vv = np.einsum("knj,knj->kn", dv, dv)
        pv = np.einsum("nj,knj->kn", dp, dv)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(vv > 0.0, -pv / np.where(vv > 0.0, vv, 1.0), 0.0)
        t = np.clip(t, 0.0, dt)
        closest = dp[None] + t[..., None] * dv
        gaps = np.hypot(closest[..., 0], closest[..., 1]) - r[4] - peds[None, :, 4]

        robots = np.tile(r, (len(actions), 1))
        robots[:, 0:2] += vel * dt
        robots[:, 2:4] = vel
        for i, a in enumerate(actions):
            if a.speed > 0:
                robots[i, 8] = wrap_angle(math.atan2(vel[i, 1], vel[i, 0]))
        collided = np.any(gaps < 0.0, axis=1)
        d_prev = math.hypot(r[0] - r[5], r[1] - r[6])
        d_next = np.hypot(robots[:, 0] - robots[:, 5], robots[:, 1] - robots[:, 6])
        reached = d_next < cfg.goal_tolerance
        goal = np.where(reached & ~collided, cfg.goal_reward, cfg.progress_factor * (d_prev - d_next))
        close = np.where(gaps < cfg.discomfort_dist, dt * (gaps - cfg.discomfort_dist) / 2.0, 0.0)
        total = goal + np.where(collided, cfg.collision_penalty, 0.0) + close.sum(axis=1)
        out = []
        for i in range(len(actions)):
            status = Status.COLLISION if collided[i] else Status.REACHED_GOAL if reached[i] else Status.RUNNING
            out.append(Prediction(JointState(robots[i], peds.copy(), state.frame), float(total[i]), status))
        return out


@dataclass
class PlanStats:
    forward_calls: int = 0
    model_calls: int = 0
    leaf_values: int = 0


def top_k(q: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` largest values; ties go to the lower index."""
    order = np.argsort(-q, kind="stable")
    return order[:k]


class RolloutPlanner:
    def __init__(self, net: SocialGraphQNet, model: EnvironmentModel | None = None,
                 config: RolloutConfig = RolloutConfig(), gamma: float = 0.9,
                 sim: SimConfig = SimConfig()):
        self.net = net
        self.model = model or EnvironmentModel(sim=sim)
        self.config = config
        self.sim = sim
        self.actions = build_action_space(sim.robot_v_pref)
        self.gamma_step = gamma ** (sim.dt * sim.robot_v_pref)
        self.stats = PlanStats()

    def _q(self, state: JointState) -> np.ndarray:
        self.stats.forward_calls += 1
        return self.net.q(state)

    def _q_many(self, states: list[JointState]) -> list[np.ndarray]:
        # one forward per successor, as a tree search expands them
        return [self._q(s) for s in states]

    def _refine(self, state: JointState, q: np.ndarray, depth: int, width: int) -> dict[int, float]:
        """Refined values of the top-``width`` actions of ``state``."""
        w_now = depth / (depth + 1.0)
        w_future = 1.0 / (depth + 1.0)
        candidates = [int(a) for a in top_k(q, width)]
        self.stats.model_calls += len(candidates)
        preds = self.model.predict_many(state, [self.actions[a] for a in candidates])
        future = {a: pred.reward for a, pred in zip(candidates, preds)}
        live = [(a, to_robot_centric(p.next_state)) for a, p in zip(candidates, preds)
                if p.status is Status.RUNNING]
        q_next = self._q_many([s for _, s in live])
        for (a, nxt), qn in zip(live, q_next):
            if depth == 1:
                self.stats.leaf_values += qn.size
                best = float(qn.max())
            else:
                best = max(self._refine(nxt, qn, depth - 1, width).values())
            future[a] += self.gamma_step * best
        return {a: w_now * float(q[a]) + w_future * future[a] for a in candidates}

    def refine_q(self, state: JointState, depth: int | None = None,
                 width: int | None = None) -> dict[int, float]:
        """Refined values for the candidate actions of ``state`` (all 81 when depth is 0)."""
        depth = self.config.depth if depth is None else depth
        width = self.config.width if width is None else width
        q = self._q(state)
        if depth == 0:
            return {i: float(v) for i, v in enumerate(q)}
        return self._refine(state, q, depth, width)

    def plan(self, state: JointState) -> Action:
        """Best action after refinement; a pure function of its inputs."""
        depth, width = self.config.depth, self.config.width
        q = self._q(state)
        if depth == 0:
            return self.actions[int(np.argmax(q))]
        refined = self._refine(state, q, depth, width)
        if self.config.restrict_to_candidates:
            best = max(refined, key=lambda a: (refined[a], -a))
        else:
            values = q.copy()
            for a, v in refined.items():
                values[a] = v
            best = int(np.argmax(values))
        return self.actions[best]


def plan_action(state: JointState, net: SocialGraphQNet, model: EnvironmentModel | None = None,
                config: RolloutConfig = RolloutConfig(), gamma: float = 0.9,
                sim: SimConfig = SimConfig()) -> Action:
    return RolloutPlanner(net, model, config, gamma, sim).plan(state)
