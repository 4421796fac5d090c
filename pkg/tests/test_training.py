import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_centric_state
from crowdrl.autograd import Adam, Tape
from crowdrl.autograd.serialize import CheckpointError
from crowdrl.config import RunConfig, TrainConfig
from crowdrl.net import NetworkDims, SocialGraphQNet
from crowdrl.sim.actions import N_ACTIONS, build_action_space
from crowdrl.training import (ReplayMemory, Transition, _EpsilonGreedy, discount_factor_per_step,
                              epsilon_at, load_checkpoint, run_training, save_checkpoint, td_loss,
                              td_target, td_targets, train_step, write_log)


def small_config(**train) -> RunConfig:
    base = dict(episodes=12, target_update=5, validation_episodes=2, batch_size=16)
    base.update(train)
    return dataclasses.replace(RunConfig(), train=dataclasses.replace(TrainConfig(), **base))


def transitions(rng, n, terminal=False, n_peds=3):
    return [Transition(random_centric_state(rng, n_peds), int(rng.integers(N_ACTIONS)),
                       float(rng.normal()), random_centric_state(rng, n_peds), terminal)
            for _ in range(n)]


def test_epsilon_schedule_examples():
    assert epsilon_at(0) == 0.5
    assert epsilon_at(2500) == pytest.approx(0.3, abs=1e-15)
    assert epsilon_at(5000) == 0.1
    assert epsilon_at(9999) == 0.1
    with pytest.raises(ValueError):
        epsilon_at(-1)


@given(st.integers(0, 10**6))
def test_epsilon_stays_in_range(episode):
    eps = epsilon_at(episode)
    assert 0.1 <= eps <= 0.5
    if episode > 0:
        assert eps <= epsilon_at(episode - 1)


def test_discount_per_step():
    # 0.9 ** 0.25 = sqrt(sqrt(0.9)); reference from a high-precision evaluation
    from decimal import Decimal, getcontext
    getcontext().prec = 40
    ref = float(Decimal("0.9").sqrt().sqrt())
    assert discount_factor_per_step(0.9, 0.25, 1.0) == pytest.approx(ref, abs=1e-15)
    assert round(ref, 5) == 0.974
    assert discount_factor_per_step(0.9, 0.5, 2.0) == 0.9
    assert discount_factor_per_step(0.9, 0.0, 1.0) == 1.0


def test_transition_rejects_bad_action(rng):
    s = random_centric_state(rng, 2)
    with pytest.raises(ValueError):
        Transition(s, 81, 0.0, s, False)
    with pytest.raises(ValueError):
        Transition(s, -1, 0.0, s, False)


class ConstantQ:
    """Stand-in target network returning a fixed q-vector."""

    def __init__(self, q):
        self.vec = np.asarray(q, dtype=float)

    def q_batch(self, states):
        return np.tile(self.vec, (len(states), 1))


def test_td_target_examples(rng):
    s = random_centric_state(rng, 2)
    q = np.zeros(N_ACTIONS)
    q[7] = 2.0
    assert td_target(Transition(s, 0, 10.0, s, True), ConstantQ(q), 0.974) == 10.0
    assert td_target(Transition(s, 0, 0.0, s, False), ConstantQ(q), 0.974) == pytest.approx(1.948, abs=1e-12)


def test_double_q_target_evaluates_the_selected_action(rng):
    s = random_centric_state(rng, 2)
    chooser, evaluator = np.zeros(N_ACTIONS), np.zeros(N_ACTIONS)
    chooser[3] = 1.0
    evaluator[3], evaluator[7] = 0.5, 2.0
    t = Transition(s, 0, 0.1, s, False)
    got = td_targets([t], ConstantQ(evaluator), 0.974, selector=ConstantQ(chooser))
    assert got[0] == pytest.approx(0.1 + 0.974 * 0.5, abs=1e-12)
    # without a selector the evaluator's own maximum is used
    assert td_targets([t], ConstantQ(evaluator), 0.974)[0] == pytest.approx(0.1 + 0.974 * 2.0, abs=1e-12)
    done = Transition(s, 0, -2.5, s, True)
    assert td_targets([done], ConstantQ(evaluator), 0.974, selector=ConstantQ(chooser))[0] == -2.5


def test_td_targets_ignore_the_online_network(rng):
    batch = transitions(rng, 6)
    target = SocialGraphQNet(seed=1)
    before = td_targets(batch, target, 0.974)
    online = SocialGraphQNet(seed=2)
    train_step(batch, online, target, Adam(online.params, lr=1e-2), 0.974)
    assert np.array_equal(td_targets(batch, target, 0.974), before)


def test_single_transition_loss_by_hand(rng):
    net = SocialGraphQNet(seed=3)
    t = transitions(rng, 1)[0]
    target = 1.25
    q = net.q(t.state)[t.action]
    loss = td_loss([t], net, np.array([target])).item()
    assert loss == pytest.approx((target - q) ** 2, rel=1e-12)


def test_train_step_zero_loss_when_targets_match(rng):
    net = SocialGraphQNet(seed=4)
    batch = transitions(rng, 5, terminal=True)
    batch = [dataclasses.replace(t, reward=float(net.q(t.state)[t.action])) for t in batch]
    before = net.state_dict()
    loss = train_step(batch, net, net.copy(), Adam(net.params), 0.974)
    assert loss == pytest.approx(0.0, abs=1e-20)
    after = net.state_dict()
    assert all(np.allclose(before[k], after[k], atol=1e-12) for k in before)


def test_train_step_empty_batch():
    net = SocialGraphQNet(seed=0)
    with pytest.raises(ValueError):
        train_step([], net, net, Adam(net.params), 0.974)


def test_loss_decreases_on_a_frozen_batch(rng):
    net = SocialGraphQNet(seed=5)
    target = net.copy()
    batch = transitions(rng, 20, n_peds=4) + transitions(rng, 10, n_peds=2)
    targets = td_targets(batch, target, 0.974)
    opt = Adam(net.params, lr=5e-4)
    losses = []
    for _ in range(50):
        opt.zero_grad()
        with Tape() as tape:
            loss = td_loss(batch, net, targets)
        tape.backward(loss)
        opt.step()
        losses.append(loss.item())
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert min(losses) >= 0.0


def test_replay_memory_is_fifo(rng):
    cap = 50
    mem = ReplayMemory(cap)
    s = random_centric_state(rng, 1)
    for i in range(2 * cap):
        mem.push(Transition(s, i % N_ACTIONS, float(i), s, False))
        assert len(mem) <= cap
    assert mem.inserted == 2 * cap
    assert [mem[i].reward for i in range(cap)] == [float(i) for i in range(cap, 2 * cap)]
    drawn = mem.sample(cap, rng)
    assert len({t.reward for t in drawn}) == cap
    assert len(mem.sample(500, rng)) == cap
    with pytest.raises(ValueError):
        ReplayMemory(10).sample(1, rng)
    with pytest.raises(ValueError):
        ReplayMemory(0)


def test_default_replay_capacity():
    assert ReplayMemory().capacity == 100_000 == TrainConfig().capacity


def test_pure_exploration_is_uniform():
    actions = build_action_space(1.0)
    policy = _EpsilonGreedy(SocialGraphQNet(seed=0), np.random.default_rng(9), actions)
    index = {id(a): i for i, a in enumerate(actions)}
    draws = 81 * 200
    counts = np.zeros(N_ACTIONS)
    s = random_centric_state(np.random.default_rng(0), 0)
    for _ in range(draws):
        counts[index[id(policy.act(s))]] += 1
    expected = draws / N_ACTIONS
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    # 99.9th percentile of chi-squared with 80 degrees of freedom
    assert chi2 < 124.84


def test_target_syncs_only_at_multiples_of_c():
    res = run_training(small_config(), validate_every=0)
    assert res.target_syncs == [5, 10]
    assert len(res.log) == 12 and res.episodes == 12
    assert [r["episode"] for r in res.log] == list(range(1, 13))
    assert all(0.1 <= r["epsilon"] <= 0.5 for r in res.log)


def test_target_network_is_frozen_between_syncs(monkeypatch):
    import crowdrl.training as T
    seen = []
    original = T.td_targets

    def spy(batch, target, gamma_step, selector=None):
        seen.append(target.state_dict()["advantage.weight"].copy())
        return original(batch, target, gamma_step, selector)

    monkeypatch.setattr(T, "td_targets", spy)
    res = run_training(small_config(episodes=7, target_update=3), validate_every=0)
    assert res.target_syncs == [3, 6]
    # one gradient step per episode: episodes 1-3 use the initial target, 4-6 the first sync
    assert len(seen) == 7
    assert all(np.array_equal(seen[0], w) for w in seen[:3])
    assert all(np.array_equal(seen[3], w) for w in seen[3:6])
    assert not np.array_equal(seen[0], seen[3])
    assert not np.array_equal(seen[3], seen[6])


def test_validation_schedule_does_not_change_training():
    quiet = run_training(small_config(episodes=10), validate_every=0)
    busy = run_training(small_config(episodes=10, validation_interval=2))
    assert [v["episode"] for v in busy.validations] == [2, 4, 6, 8, 10]
    assert quiet.validations == [] and quiet.log == busy.log
    default = run_training(small_config(episodes=10))
    assert [v["episode"] for v in default.validations] == [5, 10]


def test_double_q_training_runs_and_differs():
    plain = run_training(small_config(episodes=6), validate_every=0)
    double = run_training(small_config(episodes=6, double_q=True), validate_every=0)
    assert all(np.isfinite(r["loss"]) for r in double.log)
    # online and target coincide until the first update, so both rules agree there
    assert plain.log[0] == double.log[0]
    assert plain.log[-1]["loss"] != double.log[-1]["loss"]


def test_training_is_deterministic(tmp_path):
    cfg = small_config(episodes=50, target_update=20)
    a = run_training(cfg, validate_every=25)
    b = run_training(cfg, validate_every=25)
    write_log(tmp_path / "a.csv", a.log)
    write_log(tmp_path / "b.csv", b.log)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert a.validations == b.validations
    sa, sb = a.net.state_dict(), b.net.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_training_seed_changes_the_run():
    a = run_training(small_config(episodes=5), validate_every=0)
    b = run_training(small_config(episodes=5, seed=1), validate_every=0)
    assert [r["avg_reward_100"] for r in a.log] != [r["avg_reward_100"] for r in b.log]


def test_log_csv_header(tmp_path):
    res = run_training(small_config(episodes=2), validate_every=0)
    write_log(tmp_path / "log.csv", res.log)
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "episode,avg_reward_100,avg_return_100,nav_time_100,disc_rate_100,epsilon,loss"
    assert len(lines) == 3


def test_checkpoint_round_trip(tmp_path):
    net = SocialGraphQNet(seed=11)
    cfg = RunConfig()
    save_checkpoint(tmp_path / "c.npz", net, cfg, episodes=42)
    loaded, meta = load_checkpoint(tmp_path / "c.npz")
    a, b = net.state_dict(), loaded.state_dict()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert meta["episodes"] == 42
    assert meta["config"]["train"]["gamma"] == 0.9
    assert "format_version" in meta


def test_truncated_checkpoint(tmp_path):
    path = tmp_path / "c.npz"
    save_checkpoint(path, SocialGraphQNet(seed=0))
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 3])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_mismatched_head_size_names_the_parameter(tmp_path):
    path = tmp_path / "c.npz"
    save_checkpoint(path, SocialGraphQNet(NetworkDims(common_hidden=64), seed=0))
    with pytest.raises(CheckpointError, match="common"):
        load_checkpoint(path, dims=NetworkDims())
    net, _ = load_checkpoint(path)
    assert net.dims.common_hidden == 64
    assert math.isfinite(float(net.q(random_centric_state(np.random.default_rng(0), 2))[0]))
