"""Discrete holonomic action set: a stop action plus 5 speeds x 16 headings."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

N_SPEEDS = 5
N_HEADINGS = 16
N_ACTIONS = 1 + N_SPEEDS * N_HEADINGS


@dataclass(frozen=True)
class Action:
    speed: float
    heading: float
    index: int

    @property
    def velocity(self) -> np.ndarray:
        """Velocity in the robot-centric frame."""
        return np.array([self.speed * math.cos(self.heading), self.speed * math.sin(self.heading)])


def build_action_space(v_pref: float) -> list[Action]:
    """Return the 81 actions in fixed order.

    Index 0 is the stop action. Index ``1 + s * 16 + h`` is speed
    ``(s + 1) / 5 * v_pref`` at heading ``h * 2 * pi / 16`` (speed-major).
    """
    if not v_pref > 0:
        raise ValueError(f"v_pref must be positive, got {v_pref}")
    actions = [Action(0.0, 0.0, 0)]
    for s in range(N_SPEEDS):
        speed = (s + 1) / N_SPEEDS * v_pref
        for h in range(N_HEADINGS):
            heading = h * 2.0 * math.pi / N_HEADINGS
            actions.append(Action(speed, heading, len(actions)))
    return actions


def action_velocities(actions: list[Action]) -> np.ndarray:
    """(len(actions), 2) matrix of robot-centric velocities."""
    return np.array([a.velocity for a in actions])


def nearest_action(actions: list[Action], velocity) -> Action:
    """Action whose velocity is closest in Euclidean distance (ties -> lower index)."""
    vel = action_velocities(actions)
    d2 = np.sum((vel - np.asarray(velocity, dtype=np.float64)) ** 2, axis=1)
    return actions[int(np.argmin(d2))]
