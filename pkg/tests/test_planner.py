import numpy as np
import pytest

from conftest import random_centric_state, random_world_state
from crowdrl.config import RolloutConfig, SimConfig
from crowdrl.net import SocialGraphQNet
from crowdrl.planner import (ConstantVelocityModel, EnvironmentModel, Prediction, RolloutPlanner,
                             plan_action, predict_crowd_constant_velocity, top_k)
from crowdrl.sim.actions import N_ACTIONS, build_action_space
from crowdrl.sim.env import CrowdEnv, robot_world_velocity
from crowdrl.sim.geometry import min_separations
from crowdrl.sim.reward import Status, reward_terms
from crowdrl.sim.state import JointState

ACTIONS = build_action_space(1.0)
MARK = 0.31  # pedestrian radius tagging a successor state for the fake network


class TableNet:
    """Fake network: one q-vector for the root, another for any successor."""

    def __init__(self, root_q, next_q):
        self.root_q = np.asarray(root_q, dtype=float)
        self.next_q = np.asarray(next_q, dtype=float)
        self.calls = 0

    def q(self, state):
        self.calls += 1
        return (self.next_q if state.peds[0, 4] == MARK else self.root_q).copy()

    def q_batch(self, states):
        return np.array([self.q(s) for s in states]).reshape(len(states), -1)


class ScriptedModel:
    """Fake environment model with per-action (reward, status)."""

    def __init__(self, outcomes, default=(0.0, Status.RUNNING)):
        self.outcomes = outcomes
        self.default = default

    def predict_many(self, state, actions):
        return [self.predict(state, a) for a in actions]

    def predict(self, state, action):
        reward, status = self.outcomes.get(action.index, self.default)
        robot = state.robot_vec.copy()
        robot[0] += 0.1
        peds = state.peds.copy()
        peds[:, 4] = MARK
        return Prediction(JointState(robot, peds, state.frame), reward, status)


def root_state():
    return random_centric_state(np.random.default_rng(0), 2)


def planner(net, model, depth, width, restrict=True, gamma_step=None):
    p = RolloutPlanner(net, model, RolloutConfig(depth=depth, width=width, restrict_to_candidates=restrict))
    if gamma_step is not None:
        p.gamma_step = gamma_step
    return p


def test_depth_zero_equals_coarse_q(rng):
    net = SocialGraphQNet(seed=0)
    p = RolloutPlanner(net, config=RolloutConfig(depth=0, width=10))
    for _ in range(20):
        s = random_centric_state(rng, int(rng.integers(0, 6)))
        refined = p.refine_q(s)
        q = net.q(s)
        assert list(refined) == list(range(N_ACTIONS))
        assert np.array_equal(np.array([refined[a] for a in range(N_ACTIONS)]), q)
        assert p.plan(s).index == int(np.argmax(q))


def test_depth_one_synthetic_value():
    root = np.zeros(N_ACTIONS)
    root[3] = 4.0
    nxt = np.full(N_ACTIONS, -1.0)
    nxt[10] = 5.0
    p = planner(TableNet(root, nxt), ScriptedModel({3: (1.0, Status.RUNNING)}), 1, 1, gamma_step=0.974)
    refined = p.refine_q(root_state())
    assert refined == {3: pytest.approx(0.5 * 4 + 0.5 * (1 + 0.974 * 5), abs=1e-12)}
    assert refined[3] == pytest.approx(4.935, abs=1e-12)


def test_depth_two_recursion_by_hand():
    root = np.arange(N_ACTIONS, dtype=float) / 100
    nxt = np.arange(N_ACTIONS, dtype=float)[::-1] / 10  # best successor action is 0 with 8.0
    g = 0.974
    p = planner(TableNet(root, nxt), ScriptedModel({}, (0.5, Status.RUNNING)), 2, 2, gamma_step=g)
    refined = p.refine_q(root_state())
    inner = max(0.5 * nxt[a] + 0.5 * (0.5 + g * nxt.max()) for a in (0, 1))
    assert set(refined) == {80, 79}
    for a in (80, 79):
        assert refined[a] == pytest.approx(2 / 3 * root[a] + 1 / 3 * (0.5 + g * inner), abs=1e-12)


def test_terminal_prediction_drops_the_bootstrap():
    root = np.zeros(N_ACTIONS)
    root[5] = 2.0
    net = TableNet(root, np.full(N_ACTIONS, 100.0))
    p = planner(net, ScriptedModel({5: (10.0, Status.REACHED_GOAL)}), 1, 1)
    assert p.refine_q(root_state()) == {5: pytest.approx(0.5 * 2.0 + 0.5 * 10.0)}
    assert net.calls == 1


def test_width_one_matches_greedy(rng):
    net = SocialGraphQNet(seed=1)
    p = RolloutPlanner(net, config=RolloutConfig(depth=1, width=1))
    for _ in range(100):
        s = random_centric_state(rng, int(rng.integers(1, 6)))
        assert p.plan(s).index == int(np.argmax(net.q(s)))


def test_collision_veto_selects_the_safe_candidate():
    root = np.zeros(N_ACTIONS)
    root[7], root[9] = 5.0, 4.5
    nxt = np.full(N_ACTIONS, 4.5)
    model = ScriptedModel({7: (-2.5, Status.COLLISION), 9: (0.0, Status.RUNNING)})
    for restrict in (True, False):
        p = planner(TableNet(root, nxt), model, 1, 2, restrict=restrict)
        refined = p.refine_q(root_state())
        assert refined[7] < refined[9]
        assert p.plan(root_state()).index == 9
    # without look-ahead the risky action wins
    assert planner(TableNet(root, nxt), model, 0, 2).plan(root_state()).index == 7


def test_expansion_count_is_bounded(rng):
    net = SocialGraphQNet(seed=2)
    s = random_centric_state(rng, 3)
    for depth, width in [(1, 1), (1, 10), (2, 3), (3, 2)]:
        p = RolloutPlanner(net, config=RolloutConfig(depth=depth, width=width))
        p.refine_q(s)
        assert p.stats.leaf_values <= width ** depth * N_ACTIONS
        assert p.stats.model_calls <= sum(width ** i for i in range(1, depth + 1))


def test_expansion_count_is_exact_without_terminals():
    net = TableNet(np.arange(N_ACTIONS, dtype=float), np.zeros(N_ACTIONS))
    p = planner(net, ScriptedModel({}), 2, 3)
    p.refine_q(root_state())
    assert p.stats.leaf_values == 3 ** 2 * N_ACTIONS
    assert p.stats.model_calls == 3 + 9
    assert p.stats.forward_calls == 1 + 3 + 9


def test_refinement_touches_only_candidates(rng):
    net = SocialGraphQNet(seed=3)
    s = random_centric_state(rng, 4)
    q = net.q(s)
    p = RolloutPlanner(net, config=RolloutConfig(depth=1, width=10, restrict_to_candidates=False))
    refined = p.refine_q(s)
    assert set(refined) == set(int(a) for a in top_k(q, 10))
    assert np.array_equal(net.q(s), q)


def test_unrestricted_selection_uses_coarse_values_for_the_rest():
    root = np.zeros(N_ACTIONS)
    root[1], root[2], root[3] = 3.0, 2.9, 2.8
    # both candidates collide; the best non-candidate keeps its coarse 2.8
    model = ScriptedModel({1: (-2.5, Status.COLLISION), 2: (-2.5, Status.COLLISION)})
    assert planner(TableNet(root, root), model, 1, 2, restrict=False).plan(root_state()).index == 3
    assert planner(TableNet(root, root), model, 1, 2, restrict=True).plan(root_state()).index == 1


def test_equal_outcomes_keep_the_greedy_choice(rng):
    for _ in range(20):
        root = rng.normal(size=N_ACTIONS)
        model = ScriptedModel({}, (float(rng.normal()), Status.RUNNING))
        nxt = rng.normal(size=N_ACTIONS)
        for depth in (1, 2):
            p = planner(TableNet(root, nxt), model, depth, 5)
            assert p.plan(root_state()).index == int(np.argmax(root))


def test_top_k_ties_go_to_lower_index():
    q = np.array([1.0, 3.0, 3.0, 2.0, 3.0])
    assert list(top_k(q, 3)) == [1, 2, 4]
    assert list(top_k(q, 1)) == [1]
    assert list(top_k(np.zeros(81), 2)) == [0, 1]


def test_plan_is_pure(rng):
    net = SocialGraphQNet(seed=4)
    s = random_centric_state(rng, 5)
    before = s.copy()
    a = plan_action(s, net)
    assert s == before
    assert plan_action(s, net) == a
    assert RolloutPlanner(net).plan(s) == a


def test_constant_velocity_examples():
    peds = np.array([[0.0, 0.0, 1.0, 0.0, 0.3], [2.0, -1.0, 0.0, 0.0, 0.3]])
    s = JointState(np.array([0, 0, 0, 0, 0.3, 4, 0, 1, 0], dtype=float), peds)
    out = predict_crowd_constant_velocity(s, 0.25)
    assert np.allclose(out[0], [0.25, 0.0, 1.0, 0.0, 0.3], atol=0, rtol=0)
    assert np.array_equal(out[1], peds[1])
    assert np.array_equal(s.peds, peds)
    assert np.array_equal(ConstantVelocityModel().pedestrian_velocities(s, 0.25), peds[:, 2:4])


def test_environment_model_uses_exact_robot_kinematics(rng):
    sim = SimConfig()
    model = EnvironmentModel(sim=sim)
    for _ in range(20):
        s = random_world_state(rng, 3)
        before = s.copy()
        a = ACTIONS[int(rng.integers(N_ACTIONS))]
        pred = model.predict(s, a)
        assert s == before
        v = robot_world_velocity(s.robot_vec, a)
        assert np.allclose(pred.next_state.robot_vec[0:2], s.robot_vec[0:2] + np.array(v) * sim.dt,
                           atol=1e-15)
        assert np.allclose(pred.next_state.peds[:, 0:2], s.peds[:, 0:2] + s.peds[:, 2:4] * sim.dt)


def test_batched_prediction_matches_the_reward_function(rng):
    sim = SimConfig()
    model = EnvironmentModel(sim=sim)
    for _ in range(50):
        s = random_centric_state(rng, int(rng.integers(0, 6)))
        s.peds[:, 0:2] *= 0.3  # crowd the robot so collisions and discomfort occur
        chosen = [ACTIONS[i] for i in rng.choice(N_ACTIONS, 10, replace=False)]
        for a, pred in zip(chosen, model.predict_many(s, chosen)):
            v = np.array(robot_world_velocity(s.robot_vec, a))
            seps = min_separations(s.robot_vec[0:2], v, s.peds[:, 0:2], s.peds[:, 2:4], sim.dt)
            terms, status = reward_terms(s, pred.next_state, seps, sim.dt)
            assert pred.reward == pytest.approx(terms.total, abs=1e-12)
            assert pred.status is status


def test_model_matches_the_simulator_reward_when_pedestrians_keep_course():
    sim = SimConfig()
    env = CrowdEnv("simple", sim)
    env.reset(0)
    # a lone static pedestrian makes the ORCA crowd step equal constant velocity
    env.state.peds[:] = [[3.0, 3.0, 0.0, 0.0, 0.3]]
    env.ped_goals[:] = [[3.0, 3.0]]
    env.ped_v_pref[:] = [1.0]
    s = env.state.copy()
    a = ACTIONS[5]
    pred = EnvironmentModel(sim=sim).predict(s, a)
    out = env.step(a)
    assert pred.reward == pytest.approx(out.reward, abs=1e-12)
    assert pred.status is out.status
    assert np.allclose(pred.next_state.robot_vec, env.state.robot_vec, atol=1e-12)


def test_constant_velocity_error_against_the_crowd():
    sim = SimConfig()
    env = CrowdEnv("simple", sim)
    errors = []
    for seed in range(100):
        env.reset(seed)
        # walk the robot away from the crowd so no step ends the episode
        for _ in range(int(seed % 7)):
            env.step(ACTIONS[1 + 4 * 16 + 8])
        if env.status is not Status.RUNNING:
            continue
        s = env.state.copy()
        pred = predict_crowd_constant_velocity(s, sim.dt)
        env.step(ACTIONS[1 + 4 * 16 + 8])
        errors.append(np.linalg.norm(env.state.peds[:, 0:2] - pred[:, 0:2], axis=1).mean())
    assert len(errors) >= 90
    err = float(np.mean(errors))
    print(f"constant-velocity one-step displacement error: {err:.4f} m")
    assert np.isfinite(err)
    assert err < sim.ped_v_pref * sim.dt * 2
