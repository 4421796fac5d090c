"""Agent state records and the joint crowd-robot state.

A :class:`JointState` is array-backed: the robot lives in a 9-vector
``[px, py, vx, vy, radius, gx, gy, v_pref, theta]`` and pedestrians in an
``(N, 5)`` matrix ``[px, py, vx, vy, radius]``. The record views
(:class:`FullState`, :class:`ObservableState`) are built on demand.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

WORLD = "world"
ROBOT_CENTRIC = "robot"

ROBOT_DIM = 9
PED_DIM = 5


def wrap_angle(theta: float) -> float:
    """Map an angle to [0, 2*pi)."""
    out = math.fmod(theta, TWO_PI)
    if out < 0.0:
        out += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    if out >= TWO_PI:
        out = 0.0
    return out


@dataclass(frozen=True)
class ObservableState:
    px: float
    py: float
    vx: float
    vy: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")

    def to_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.vx, self.vy, self.radius], dtype=np.float64)

    @classmethod
    def from_array(cls, row) -> "ObservableState":
        return cls(*(float(x) for x in row[:PED_DIM]))


@dataclass(frozen=True)
class FullState:
    px: float
    py: float
    vx: float
    vy: float
    radius: float
    gx: float
    gy: float
    v_pref: float
    theta: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if not self.v_pref > 0:
            raise ValueError(f"v_pref must be positive, got {self.v_pref}")
        if not 0.0 <= self.theta < TWO_PI:
            raise ValueError(f"theta must lie in [0, 2pi), got {self.theta}")

    def to_array(self) -> np.ndarray:
        return np.array(
            [self.px, self.py, self.vx, self.vy, self.radius,
             self.gx, self.gy, self.v_pref, self.theta],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, vec) -> "FullState":
        return cls(*(float(x) for x in vec[:ROBOT_DIM]))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.px, self.py])

    @property
    def goal(self) -> np.ndarray:
        return np.array([self.gx, self.gy])


class JointState:
    """Robot full state plus all pedestrian observable states."""

    __slots__ = ("robot_vec", "peds", "frame")

    def __init__(self, robot_vec: np.ndarray, peds: np.ndarray, frame: str = WORLD):
        robot_vec = np.asarray(robot_vec, dtype=np.float64)
        peds = np.asarray(peds, dtype=np.float64).reshape(-1, PED_DIM)
        if robot_vec.shape != (ROBOT_DIM,):
            raise ValueError(f"robot vector must have shape ({ROBOT_DIM},), got {robot_vec.shape}")
        if frame not in (WORLD, ROBOT_CENTRIC):
            raise ValueError(f"unknown frame {frame!r}")
        self.robot_vec = robot_vec
        self.peds = peds
        self.frame = frame

    @classmethod
    def from_records(cls, robot: FullState, pedestrians: Sequence[ObservableState],
                     frame: str = WORLD) -> "JointState":
        peds = np.array([p.to_array() for p in pedestrians], dtype=np.float64).reshape(-1, PED_DIM)
        return cls(robot.to_array(), peds, frame)

    @property
    def robot(self) -> FullState:
        return FullState.from_array(self.robot_vec)

    @property
    def pedestrians(self) -> list[ObservableState]:
        return [ObservableState.from_array(row) for row in self.peds]

    @property
    def n_peds(self) -> int:
        return self.peds.shape[0]

    def copy(self) -> "JointState":
        return JointState(self.robot_vec.copy(), self.peds.copy(), self.frame)

    def __eq__(self, other) -> bool:
        if not isinstance(other, JointState):
            return NotImplemented
        return (self.frame == other.frame
                and np.array_equal(self.robot_vec, other.robot_vec)
                and np.array_equal(self.peds, other.peds))

    def __repr__(self) -> str:
        return f"JointState(frame={self.frame!r}, robot={self.robot}, n_peds={self.n_peds})"


def to_robot_centric(state: JointState) -> JointState:
    """Translate to the robot's position and rotate its goal onto +x.

    When the robot sits exactly on its goal the rotation is the identity.
    """
    r = state.robot_vec
    px, py = r[0], r[1]
    dx, dy = r[5] - px, r[6] - py
    if dx == 0.0 and dy == 0.0:
        angle = 0.0
    else:
        angle = math.atan2(dy, dx)
    c, s = math.cos(angle), math.sin(angle)
    # rows of the inverse rotation
    rot = np.array([[c, s], [-s, c]])

    robot = r.copy()
    robot[0:2] = 0.0
    robot[2:4] = rot @ r[2:4]
    robot[5] = math.hypot(dx, dy)
    robot[6] = 0.0
    robot[8] = wrap_angle(r[8] - angle)

    peds = state.peds.copy()
    if peds.shape[0]:
        peds[:, 0:2] = (state.peds[:, 0:2] - r[0:2]) @ rot.T
        peds[:, 2:4] = state.peds[:, 2:4] @ rot.T
    return JointState(robot, peds, ROBOT_CENTRIC)
