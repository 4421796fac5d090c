"""Circle-crossing and square-crossing scenario generation."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from ..config import SimConfig
from .state import JointState, WORLD

SeedLike = Union[int, Sequence[int], np.random.SeedSequence]

ROBOT_START = (0.0, -4.0)
ROBOT_GOAL = (0.0, 4.0)

# extra clearance between sampled agents, on top of their radii
SPAWN_CLEARANCE = 0.2


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str = "simple"
    n_circle: int = 5
    n_square: int = 0
    circle_radius: float = 4.0
    square_side: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("simple", "complex"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.n_circle < 0 or self.n_square < 0:
            raise ValueError("pedestrian counts must be non-negative")

    @classmethod
    def simple(cls, seed: int = 0, sim: SimConfig = SimConfig()) -> "ScenarioSpec":
        return cls("simple", 5, 0, sim.circle_radius, sim.square_side, seed)

    @classmethod
    def complex(cls, seed: int = 0, sim: SimConfig = SimConfig()) -> "ScenarioSpec":
        return cls("complex", 5, 5, sim.circle_radius, sim.square_side, seed)

    @classmethod
    def named(cls, kind: str, seed: int = 0, sim: SimConfig = SimConfig()) -> "ScenarioSpec":
        if kind == "simple":
            return cls.simple(seed, sim)
        if kind == "complex":
            return cls.complex(seed, sim)
        raise ValueError(f"unknown scenario kind {kind!r}")

    @property
    def n_peds(self) -> int:
        return self.n_circle + self.n_square


@dataclass
class Scenario:
    """Initial world state plus the pedestrians' hidden intents."""

    state: JointState
    ped_goals: np.ndarray
    ped_v_pref: np.ndarray


def _clear(point, others: list[tuple[float, float]], min_dist: float) -> bool:
    return all(math.hypot(point[0] - o[0], point[1] - o[1]) >= min_dist for o in others)


def generate_scenario(spec: ScenarioSpec, seed: SeedLike | None = None,
                      sim: SimConfig = SimConfig()) -> Scenario:
    """Sample a scenario; a deterministic function of ``(spec, seed)``.

    Circle crossers start on the circle with uniform per-coordinate noise and
    head for the point opposite their start. Square crossers get start and goal
    uniform in the square. Starts and goals are rejection-sampled to keep
    clear of each other and of the robot's start and goal.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    min_dist = 2 * sim.ped_radius + SPAWN_CLEARANCE
    starts: list[tuple[float, float]] = [ROBOT_START]
    goals: list[tuple[float, float]] = [ROBOT_GOAL]

    for _ in range(spec.n_circle):
        while True:
            angle = rng.uniform(0.0, 2.0 * math.pi)
            nx, ny = rng.uniform(-sim.circle_noise, sim.circle_noise, size=2)
            p = (spec.circle_radius * math.cos(angle) + nx,
                 spec.circle_radius * math.sin(angle) + ny)
            g = (-p[0], -p[1])
            if _clear(p, starts, min_dist) and _clear(g, goals, min_dist):
                break
        starts.append(p)
        goals.append(g)

    half = spec.square_side / 2.0
    for _ in range(spec.n_square):
        while True:
            p = tuple(rng.uniform(-half, half, size=2))
            if _clear(p, starts, min_dist):
                break
        while True:
            g = tuple(rng.uniform(-half, half, size=2))
            if _clear(g, goals, min_dist):
                break
        starts.append(p)
        goals.append(g)

    robot = np.array([ROBOT_START[0], ROBOT_START[1], 0.0, 0.0, sim.robot_radius,
                      ROBOT_GOAL[0], ROBOT_GOAL[1], sim.robot_v_pref, math.pi / 2])
    n = spec.n_peds
    peds = np.zeros((n, 5))
    if n:
        peds[:, 0:2] = np.array(starts[1:])
        peds[:, 4] = sim.ped_radius
    return Scenario(
        state=JointState(robot, peds, WORLD),
        ped_goals=np.array(goals[1:], dtype=np.float64).reshape(n, 2),
        ped_v_pref=np.full(n, sim.ped_v_pref),
    )
