import math

import numpy as np
import pytest

from crowdrl.sim.state import JointState, to_robot_centric


def random_world_state(rng: np.random.Generator, n_peds: int = 5) -> JointState:
    angle = rng.uniform(0, 2 * math.pi)
    robot = np.array([*rng.uniform(-4, 4, 2), *rng.uniform(-1, 1, 2), 0.3,
                      *rng.uniform(-4, 4, 2), 1.0, angle])
    peds = np.column_stack([rng.uniform(-5, 5, (n_peds, 2)), rng.uniform(-1, 1, (n_peds, 2)),
                            np.full(n_peds, 0.3)])
    return JointState(robot, peds.reshape(n_peds, 5))


def random_centric_state(rng: np.random.Generator, n_peds: int = 5) -> JointState:
    return to_robot_centric(random_world_state(rng, n_peds))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (title, passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record_acceptance(number: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (title, ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:>2}. {title}: {detail}")
