import math

import numpy as np
import pytest

from latent_sensing.dqn import (
    MAX_ORACLE_POI,
    NO_GAIN_REWARD,
    NOP_REWARD,
    DqnConfig,
    ReplayBuffer,
    Transition,
    _copy_params,
    env_step,
    evaluate_policy,
    init_qnet,
    oracle_optimal,
    reset_episode,
    reward_for,
    select_action,
    simulate_joint,
    td_targets,
    train_dqn,
)
from latent_sensing.nnkit import Layer, DenseNet, RngStream
from latent_sensing.world import Environment, WorldConfig, WorldMap, information, observe


def biased_qnet(n_poi, d_z, favourite, seed=0):
    """A Q-network whose greedy action is always ``favourite``."""
    net = init_qnet(n_poi, d_z, RngStream(seed))
    head = net.layers[-1]
    head.weight[...] = 0.0
    head.bias[...] = 0.0
    head.bias[favourite] = 1.0
    return net


def linear_net(weight, bias):
    return DenseNet([Layer(np.array(weight, float), np.array(bias, float), "linear")])


def test_reward_mapping():
    assert reward_for(0.5, 0.01) == 0.5
    assert reward_for(0.0100001, 0.01) == 0.0100001
    assert reward_for(0.01, 0.01) == NO_GAIN_REWARD
    assert reward_for(-0.2, 0.01) == NO_GAIN_REWARD
    assert NOP_REWARD == 0.0


@pytest.mark.parametrize("p,expected", [(0.0, False), (1.0, True)])
def test_reset_episode_extremes(zero_model, p, expected):
    cfg = WorldConfig(p_other=p)
    for seed in range(5):
        env, wmap = reset_episode(zero_model, cfg, "x", RngStream(seed))
        assert len(env.poi_classes) == 3
        for b in wmap.beliefs:
            assert b.observed_w is expected and not b.observed_x


def test_reset_episode_fraction(zero_model):
    rng = RngStream(3)
    flags = [b.observed_x for _ in range(10_000 // 3 + 1)
             for b in reset_episode(zero_model, WorldConfig(), "w", rng)[1].beliefs]
    se = math.sqrt(0.25 / len(flags))
    assert abs(np.mean(flags) - 0.5) < 3 * se


def test_env_step_nop(zero_model):
    env, wmap = Environment((1, 2, 3)), WorldMap.fresh(3, 2)
    reward, new, done = env_step(env, wmap, 3, "x", zero_model, RngStream(0), 0, WorldConfig())
    assert (reward, done) == (0.0, True) and new is wmap


def test_env_step_invalid_action(zero_model):
    env, wmap = Environment((1, 2, 3)), WorldMap.fresh(3, 2)
    for bad in (-1, 4):
        with pytest.raises(ValueError):
            env_step(env, wmap, bad, "x", zero_model, RngStream(0), 0, WorldConfig())


def test_env_step_cap(zero_model):
    env, wmap = Environment((1, 2, 3)), WorldMap.fresh(3, 2)
    cfg = WorldConfig()
    assert not env_step(env, wmap, 0, "x", zero_model, RngStream(0), 4, cfg)[2]
    assert env_step(env, wmap, 0, "x", zero_model, RngStream(0), 5, cfg)[2]


def test_env_step_rewards_on_trained_model(model):
    cfg = WorldConfig()
    rng = RngStream(11)
    firsts, repeats = [], []
    for trial in range(200):
        env = Environment((int(rng.integers(1, 4)),))
        m = "xw"[trial % 2]
        r1, wmap, _ = env_step(env, WorldMap.fresh(1, 2), 0, m, model, rng, 0, cfg)
        r2, _, _ = env_step(env, wmap, 0, m, model, rng, 1, cfg)
        firsts.append(r1 > 0)
        repeats.append(r2 == NO_GAIN_REWARD)
    assert np.mean(firsts) >= 0.95
    assert np.mean(repeats) >= 0.9


def test_select_action_greedy_and_ties():
    rng = RngStream(0)
    assert select_action([0.1, 0.5, 0.2, 0.0], 0.0, rng) == 1
    assert select_action([0.3, 0.3, 0.1], 0.0, rng) == 0
    with pytest.raises(ValueError):
        select_action([0.0, 1.0], 1.5, rng)


def test_select_action_uniform_when_fully_random():
    rng = RngStream(5)
    picks = np.array([select_action([0, 10, 0, 0], 1.0, rng) for _ in range(8000)])
    se = math.sqrt(0.25 * 0.75 / len(picks))
    for a in range(4):
        assert abs(np.mean(picks == a) - 0.25) < 3 * se


def test_td_targets_examples():
    target = linear_net([[1.0, 0.0], [0.0, 2.0]], [0.0, 0.0])  # Q(s) = (s0, 2 s1)
    s = np.zeros(2)
    batch = [
        Transition(s, 0, 0.5, np.array([1.0, 3.0]), False),
        Transition(s, 1, -1.0, np.array([4.0, 1.0]), True),
    ]
    np.testing.assert_allclose(td_targets(batch, target, 0.95), [0.5 + 0.95 * 6.0, -1.0])
    np.testing.assert_allclose(td_targets(batch, target, 0.0), [0.5, -1.0])
    with pytest.raises(ValueError):
        td_targets([], target, 0.9)


def test_replay_buffer_fifo_and_capacity():
    buf = ReplayBuffer(3)
    for i in range(5):
        buf.push(Transition(np.zeros(1), i, 0.0, np.zeros(1), False))
    assert len(buf) == 3
    assert [t.action for t in buf.items] == [2, 3, 4]
    sample = buf.sample(50, RngStream(0))
    assert {t.action for t in sample} <= {2, 3, 4}


def test_target_copy_makes_nets_equal():
    a, b = init_qnet(3, 2, RngStream(1)), init_qnet(3, 2, RngStream(2))
    _copy_params(a, b)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)
    a.params()[0][0, 0] += 1.0
    assert b.params()[0][0, 0] != a.params()[0][0, 0]


def test_config_validation():
    with pytest.raises(ValueError):
        DqnConfig(gamma=1.0)
    with pytest.raises(ValueError):
        DqnConfig(eps_min=0.5, eps_start=0.1)
    with pytest.raises(ValueError):
        DqnConfig(episodes=-1)


def test_zero_episodes_returns_initial_net(zero_model):
    net, history = train_dqn(zero_model, "x", WorldConfig(), DqnConfig(episodes=0), RngStream(4))
    assert history == []
    fresh = init_qnet(3, 2, RngStream(4).child("init"))
    for p, q in zip(net.params(), fresh.params()):
        np.testing.assert_array_equal(p, q)


def test_short_training_schedule_and_determinism(zero_model):
    cfg = DqnConfig(episodes=30, batch_size=8)
    net_a, hist_a = train_dqn(zero_model, "w", WorldConfig(), cfg, RngStream(6))
    net_b, hist_b = train_dqn(zero_model, "w", WorldConfig(), cfg, RngStream(6))
    assert hist_a == hist_b
    eps = [h.epsilon for h in hist_a]
    assert eps[0] == 1.0 and all(b <= a for a, b in zip(eps, eps[1:]))
    np.testing.assert_allclose(eps, [0.99**i for i in range(30)])
    assert net_a.is_finite()


def test_epsilon_floor_after_default_schedule(trained_q):
    for _, history in trained_q.values():
        eps = [h.epsilon for h in history]
        assert len(eps) == 2000
        assert all(b <= a for a, b in zip(eps, eps[1:]))
        assert min(eps) == 0.01 and eps[-1] == 0.01


def test_training_improves_reward(trained_q):
    for _, history in trained_q.values():
        rewards = [h.total_reward for h in history]
        assert np.mean(rewards[-100:]) > np.mean(rewards[:100])


def test_always_nop_policy_scores_zero(model):
    nop = biased_qnet(3, 2, favourite=3)
    assert evaluate_policy(nop, model, "x", WorldConfig(), 20, RngStream(0)) == 0.0
    assert evaluate_policy(nop, model, "w", WorldConfig(), 1, RngStream(0)) == 0.0


def test_oracle_on_uninformative_model_stops_at_once(zero_model):
    env = Environment((1, 2, 3))
    res = oracle_optimal(env, WorldMap.fresh(3, 2), zero_model, "x", WorldConfig(), RngStream(0))
    assert res.value == 0.0 and res.actions == (3,)


def test_oracle_single_poi_known_gain(zero_model):
    # The x encoder now reports sigma = 0.5 in both dimensions for any input.
    head = zero_model.enc_x.layers[-1]
    head.bias[2:] = 2.0 * math.log(0.5)
    cfg = WorldConfig(n_poi=1)
    res = oracle_optimal(Environment((2,)), WorldMap.fresh(1, 2), zero_model, "x", cfg, RngStream(0))
    expected = math.sqrt(2) - 1 / math.sqrt(2)
    assert res.value == pytest.approx(expected, abs=1e-12)
    assert res.actions == (0, 1)
    assert res.stderr == pytest.approx(0.0, abs=1e-12)


def test_oracle_rejects_large_worlds(zero_model):
    n = MAX_ORACLE_POI + 1
    with pytest.raises(ValueError):
        oracle_optimal(Environment((1,) * n), WorldMap.fresh(n, 2), zero_model, "x",
                       WorldConfig(n_poi=n), RngStream(0))


def test_oracle_not_below_any_fixed_policy(model):
    cfg = WorldConfig()
    env = Environment((2, 3, 1))
    start = WorldMap.fresh(3, 2)
    best = oracle_optimal(env, start, model, "x", cfg, RngStream(9), k=64)
    # Observing every PoI once is one candidate sequence.
    rng = RngStream(10)
    totals = []
    for _ in range(64):
        wmap, total = start, 0.0
        for n in range(3):
            delta, wmap = observe(env, wmap, n, "x", model, rng)
            total += reward_for(delta, cfg.delta_threshold)
        totals.append(total)
    assert best.value >= np.mean(totals) - 3 * np.std(totals) / 8


def test_simulate_immediate_nop_leaves_map_fresh(model):
    nop = biased_qnet(3, 2, favourite=3)
    trace, final = simulate_joint(nop, nop, model, Environment((1, 2, 3)), WorldConfig(), RngStream(0))
    assert [(r.agent, r.action) for r in trace] == [("x", 3), ("w", 3)]
    assert final.total_information() == pytest.approx(3 / math.sqrt(2))


def test_simulate_cap_and_alternation(model):
    greedy0 = biased_qnet(3, 2, favourite=0)
    cfg = WorldConfig()
    trace, _ = simulate_joint(greedy0, greedy0, model, Environment((1, 2, 3)), cfg, RngStream(0))
    assert len(trace) == 2 * cfg.max_steps
    assert [r.agent for r in trace] == ["x", "w"] * cfg.max_steps


def test_simulate_retired_agent_leaves_other_running(model):
    nop, obs = biased_qnet(3, 2, favourite=3), biased_qnet(3, 2, favourite=1)
    cfg = WorldConfig()
    trace, final = simulate_joint(nop, obs, model, Environment((1, 2, 3)), cfg, RngStream(2))
    assert trace[0].agent == "x" and trace[0].action == 3
    assert [r.agent for r in trace[1:]] == ["w"] * (2 * cfg.max_steps - 1)
    assert final.beliefs[1].observed_w and not final.beliefs[1].observed_x
    assert information(final.beliefs[0]) == pytest.approx(1 / math.sqrt(2))
