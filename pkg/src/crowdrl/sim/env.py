"""Episode simulation: holonomic robot among ORCA pedestrians that ignore it."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..config import RewardConfig, SimConfig
from .actions import Action
from .geometry import min_separations, pairwise_min_separations
from .orca import agent_velocity
from .reward import RewardTerms, Status, reward_terms
from .scenario import Scenario, ScenarioSpec, SeedLike, generate_scenario
from .state import JointState, to_robot_centric, wrap_angle


class EpisodeFinishedError(RuntimeError):
    pass


@dataclass
class StepOutcome:
    next_state: JointState
    reward: float
    status: Status
    min_separations: np.ndarray
    terms: RewardTerms
    discomfort: bool


@dataclass
class TurningPoint:
    ped: int
    time: float
    x: float
    y: float


def robot_world_velocity(robot_vec: np.ndarray, action: Action) -> tuple[float, float]:
    """World-frame velocity of an action whose heading is robot-centric."""
    dx, dy = robot_vec[5] - robot_vec[0], robot_vec[6] - robot_vec[1]
    frame = math.atan2(dy, dx) if (dx or dy) else 0.0
    ang = frame + action.heading
    return action.speed * math.cos(ang), action.speed * math.sin(ang)


def pedestrian_velocities(peds: np.ndarray, goals: np.ndarray, v_pref: np.ndarray,
                          dt: float, horizon: float, buffer: float = 0.0) -> np.ndarray:
    """ORCA velocities for every pedestrian against all the others.

    ``buffer`` pads every radius inside the ORCA computation only.
    """
    n = peds.shape[0]
    rows = peds.tolist()
    for r in rows:
        r[4] += buffer
    out = np.zeros((n, 2))
    for i in range(n):
        others = rows[:i] + rows[i + 1:]
        out[i] = agent_velocity(rows[i][0:2], rows[i][2:4], rows[i][4], goals[i], v_pref[i],
                                others, dt, horizon)
    return out


class CrowdEnv:
    """Seeded single-episode simulator.

    The world state is mutated in place by :meth:`step`; observations handed
    to policies are robot-centric copies.
    """

    def __init__(self, kind: str = "simple", sim: SimConfig = SimConfig(),
                 reward: RewardConfig = RewardConfig()):
        self.kind = kind
        self.sim = sim
        self.reward_cfg = reward
        self.spec = ScenarioSpec.named(kind, 0, sim)
        self._state: JointState | None = None
        self.status = Status.RUNNING

    def reset(self, seed: SeedLike = 0, scenario: Scenario | None = None) -> JointState:
        """Start an episode from ``scenario`` or one generated from ``seed``."""
        # one generator drives both placement and later goal resampling
        rng = np.random.default_rng(seed)
        if scenario is None:
            scenario = generate_scenario(self.spec, rng, self.sim)
        self._rng = rng
        self._state = scenario.state.copy()
        self.ped_goals = scenario.ped_goals.copy()
        self.ped_v_pref = scenario.ped_v_pref.copy()
        self.turning_points: list[TurningPoint] = []
        self.time = 0.0
        self.steps = 0
        self.status = Status.RUNNING
        return self._state.copy()

    @property
    def state(self) -> JointState:
        if self._state is None:
            raise EpisodeFinishedError("environment has not been reset")
        return self._state

    def observe(self) -> JointState:
        return to_robot_centric(self.state)

    def _resample_goals(self) -> None:
        half = self.sim.square_side / 2.0
        peds = self._state.peds
        for i in range(peds.shape[0]):
            gx, gy = self.ped_goals[i]
            if math.hypot(peds[i, 0] - gx, peds[i, 1] - gy) < peds[i, 4]:
                self.turning_points.append(TurningPoint(i, self.time, float(gx), float(gy)))
                self.ped_goals[i] = self._rng.uniform(-half, half, size=2)

    def step(self, action: Action) -> StepOutcome:
        if self._state is None or self.status is not Status.RUNNING:
            raise EpisodeFinishedError(f"cannot step an episode with status {self.status.value}")
        dt = self.sim.dt
        prev = self._state
        robot_v = robot_world_velocity(prev.robot_vec, action)
        ped_v = pedestrian_velocities(prev.peds, self.ped_goals, self.ped_v_pref, dt,
                                      self.sim.orca_horizon, self.sim.orca_buffer)

        seps = min_separations(prev.robot_vec[0:2], robot_v, prev.peds[:, 0:2], ped_v, dt)

        robot = prev.robot_vec.copy()
        robot[0] += robot_v[0] * dt
        robot[1] += robot_v[1] * dt
        robot[2:4] = robot_v
        if action.speed > 0:
            robot[8] = wrap_angle(math.atan2(robot_v[1], robot_v[0]))
        peds = prev.peds.copy()
        peds[:, 0:2] += ped_v * dt
        peds[:, 2:4] = ped_v
        nxt = JointState(robot, peds, prev.frame)

        terms, status = reward_terms(prev, nxt, seps, dt, self.reward_cfg)
        self._state = nxt
        self.time += dt
        self.steps += 1
        # tolerate accumulated rounding in the step count
        if status is Status.RUNNING and self.time >= self.sim.time_limit - 1e-9:
            status = Status.TIMEOUT
        self.status = status
        self._resample_goals()
        gaps = seps - robot[4] - peds[:, 4]
        discomfort = bool(np.any(gaps < self.reward_cfg.discomfort_dist))
        return StepOutcome(nxt.copy(), terms.total, status, seps, terms, discomfort)


@dataclass
class CrowdRun:
    steps: int
    collision_steps: int = 0
    min_gap: float = math.inf
    positions: list = field(default_factory=list)

    @property
    def collided(self) -> bool:
        return self.collision_steps > 0


def simulate_pedestrians(scenario: Scenario, sim: SimConfig = SimConfig(),
                         steps: int | None = None, seed: SeedLike = 0,
                         keep_positions: bool = False) -> CrowdRun:
    """Run the crowd alone and count steps with any pedestrian overlap."""
    if steps is None:
        steps = int(round(sim.time_limit / sim.dt))
    rng = np.random.default_rng(seed)
    peds = scenario.state.peds.copy()
    goals = scenario.ped_goals.copy()
    v_pref = scenario.ped_v_pref
    half = sim.square_side / 2.0
    run = CrowdRun(steps)
    for _ in range(steps):
        if keep_positions:
            run.positions.append(peds[:, 0:2].copy())
        vel = pedestrian_velocities(peds, goals, v_pref, sim.dt, sim.orca_horizon, sim.orca_buffer)
        seps = pairwise_min_separations(peds[:, 0:2], vel, sim.dt)
        gaps = seps - peds[:, 4][:, None] - peds[:, 4][None, :]
        gap = float(gaps.min()) if gaps.size else math.inf
        run.min_gap = min(run.min_gap, gap)
        if gap < 0.0:
            run.collision_steps += 1
        peds[:, 0:2] += vel * sim.dt
        peds[:, 2:4] = vel
        for i in range(peds.shape[0]):
            if math.hypot(*(peds[i, 0:2] - goals[i])) < peds[i, 4]:
                goals[i] = rng.uniform(-half, half, size=2)
    return run
