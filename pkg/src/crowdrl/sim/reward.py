"""Three-part navigation reward: goal progress, collision penalty, discomfort penalty."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..config import RewardConfig
from .actions import Action
from .state import JointState


class Status(str, Enum):
    RUNNING = "running"
    REACHED_GOAL = "reached_goal"
    COLLISION = "collision"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class RewardTerms:
    goal: float
    collision: float
    discomfort: float

    @property
    def total(self) -> float:
        return self.goal + self.collision + self.discomfort


def surface_gaps(min_seps, robot_radius: float, ped_radii) -> np.ndarray:
    """Centre separations minus both radii (negative means overlap)."""
    return np.asarray(min_seps, dtype=np.float64) - robot_radius - np.asarray(ped_radii, dtype=np.float64)


def reward_terms(prev: JointState, next_: JointState, min_seps, dt: float,
                 cfg: RewardConfig = RewardConfig()) -> tuple[RewardTerms, Status]:
    """Evaluate each reward term and the resulting status.

    ``min_seps`` are minimum centre distances between robot and each
    pedestrian over the step. Collision is checked before goal arrival; a
    step that does both ends in collision and earns only the progress term.
    """
    if prev.n_peds != next_.n_peds or len(min_seps) != next_.n_peds:
        raise ValueError(
            f"inconsistent crowd sizes: prev={prev.n_peds}, next={next_.n_peds}, "
            f"min_seps={len(min_seps)}"
        )
    r0, r1 = prev.robot_vec, next_.robot_vec
    gaps = surface_gaps(min_seps, r1[4], next_.peds[:, 4])

    collided = bool(np.any(gaps < 0.0))
    d_prev = math.hypot(r0[0] - r0[5], r0[1] - r0[6])
    d_next = math.hypot(r1[0] - r1[5], r1[1] - r1[6])
    reached = d_next < cfg.goal_tolerance

    if reached and not collided:
        goal = cfg.goal_reward
    else:
        goal = cfg.progress_factor * (d_prev - d_next)
    collision = cfg.collision_penalty if collided else 0.0
    close = gaps[gaps < cfg.discomfort_dist]
    discomfort = float(np.sum(dt * (close - cfg.discomfort_dist) / 2.0))

    if collided:
        status = Status.COLLISION
    elif reached:
        status = Status.REACHED_GOAL
    else:
        status = Status.RUNNING
    return RewardTerms(goal, collision, discomfort), status


def compute_reward(prev: JointState, action: Action, next_: JointState, min_seps, dt: float,
                   cfg: RewardConfig = RewardConfig()) -> tuple[float, Status]:
    """Total reward and status for one step.

    ``action`` is accepted for interface symmetry; the reward depends only on
    the states it produced.
    """
    terms, status = reward_terms(prev, next_, min_seps, dt, cfg)
    return terms.total, status
