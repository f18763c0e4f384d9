import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hflsim.cost import AssignmentPattern, CostParams
from hflsim.d3qn import network as net
from hflsim.d3qn.agent import (
    Agent,
    AgentConfig,
    assign_drl,
    episode_features,
    greedy,
    loss_and_grads,
    q_values,
    reward,
    select_action,
    td_targets,
    train_step,
)
from hflsim.d3qn.lstm import lstm_backward, lstm_forward
from hflsim.d3qn.replay import Batch, ReplayBuffer, Transition
from hflsim.d3qn.train import TrainConfig, train_agent, write_curve_csv
from hflsim.errors import ConfigurationError, ContractViolation
from hflsim.topology import generate_topology


def small_agent(M=3, H=5, hidden=8, head_hidden=0, **kw):
    return Agent(AgentConfig(n_actions=M, horizon=H, hidden=hidden, head_hidden=head_hidden, **kw))


def random_batch(rng, B=6, H=5, F=6, M=3):
    t = rng.integers(0, H, size=B)
    return Batch(rng.random((B, H, F)), t, rng.integers(0, M, size=B), rng.choice([-1.0, 1.0], size=B), t == H - 1)


# -- dueling head -------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_centering_identity(seed, M):
    rng = np.random.default_rng(seed)
    p = net.init_params(rng, M + 3, M, 8, head_hidden=4)
    X = rng.random((4, 6, M + 3))
    Q, V, A, _ = net.forward(p, X, rng.integers(0, 6, size=4))
    assert np.max(np.abs(Q.mean(axis=1) - V)) <= 1e-9
    np.testing.assert_allclose(Q - V[:, None], A - A.mean(axis=1, keepdims=True), atol=1e-12)


def test_equal_advantages_give_value():
    rng = np.random.default_rng(0)
    p = net.init_params(rng, 6, 3, 8)
    p["aW"][:] = 0.0
    p["ab"][:] = 0.7
    Q, V, _, _ = net.forward(p, rng.random((2, 4, 6)), np.array([0, 3]))
    np.testing.assert_allclose(Q, np.repeat(V[:, None], 3, axis=1), atol=1e-15)


def test_q_values_deterministic():
    agent = small_agent()
    X = np.random.default_rng(1).random((5, 6))
    assert np.array_equal(q_values(agent, (X, 2)), q_values(agent, (X, 2)))
    assert np.array_equal(small_agent().online["fW"], agent.online["fW"])


def test_forward_all_matches_per_position():
    rng = np.random.default_rng(2)
    p = net.init_params(rng, 6, 3, 8, head_hidden=5)
    X = rng.random((7, 6))
    Q_all = net.forward_all(p, X)
    Q, _, _, _ = net.forward(p, np.repeat(X[None], 7, axis=0), np.arange(7))
    np.testing.assert_allclose(Q_all, Q, atol=1e-12)


def test_state_halves_share_current_row():
    # perturbing row t changes both encoder halves; rows after t only the backward half
    rng = np.random.default_rng(3)
    p = net.init_params(rng, 6, 3, 8)
    X = rng.random((1, 6, 6))
    t = np.array([2])
    Hf0, _ = lstm_forward(p["fW"], p["fb"], X[:, :3])
    X2 = X.copy()
    X2[0, 4] += 1.0
    Hf1, _ = lstm_forward(p["fW"], p["fb"], X2[:, :3])
    assert np.array_equal(Hf0, Hf1)
    assert not np.array_equal(net.forward(p, X, t)[0], net.forward(p, X2, t)[0])


# -- gradients ----------------------------------------------------------------


def _block_errors(p, X, t, dQ, h=1e-6):
    _, _, _, cache = net.forward(p, X, t)
    g = net.backward(p, cache, dQ)
    errs = {}
    for k, v in p.items():
        num = np.zeros_like(v)
        it = np.nditer(v, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = v[i]
            v[i] = old + h
            up = np.sum(net.forward(p, X, t)[0] * dQ)
            v[i] = old - h
            dn = np.sum(net.forward(p, X, t)[0] * dQ)
            v[i] = old
            num[i] = (up - dn) / (2 * h)
        errs[k] = np.linalg.norm(g[k] - num) / max(np.linalg.norm(num), 1e-12)
    return errs


@pytest.mark.parametrize("head_hidden", [0, 4])
def test_finite_difference_gradients(head_hidden):
    rng = np.random.default_rng(5)
    p = net.init_params(rng, 6, 3, 8, head_hidden=head_hidden)
    for k in p:
        p[k] = p[k] + rng.normal(0, 0.1, size=p[k].shape)
    X = rng.random((3, 5, 6))
    t = np.array([0, 2, 4])
    dQ = rng.normal(size=(3, 3))
    errs = _block_errors(p, X, t, dQ)
    assert set(errs) == set(p)
    for k, e in errs.items():
        assert e < 1e-4, (k, e)


def test_lstm_input_gradient():
    rng = np.random.default_rng(6)
    W = rng.normal(0, 0.3, size=(4 + 5, 20))
    b = rng.normal(0, 0.1, size=20)
    X = rng.normal(size=(2, 4, 4))
    dH = rng.normal(size=(2, 4, 5))
    _, cache = lstm_forward(W, b, X)
    _, _, dX = lstm_backward(W, cache, dH)
    num = np.zeros_like(X)
    h = 1e-6
    for i in np.ndindex(X.shape):
        old = X[i]
        X[i] = old + h
        up = np.sum(lstm_forward(W, b, X)[0] * dH)
        X[i] = old - h
        dn = np.sum(lstm_forward(W, b, X)[0] * dH)
        X[i] = old
        num[i] = (up - dn) / (2 * h)
    assert np.linalg.norm(dX - num) / np.linalg.norm(num) < 1e-4


def test_loss_matches_definition():
    rng = np.random.default_rng(7)
    agent = small_agent()
    batch = random_batch(rng)
    y = rng.normal(size=6)
    loss, _ = loss_and_grads(agent.online, batch, y)
    Q, _, _, _ = net.forward(agent.online, batch.features, batch.t)
    assert loss == pytest.approx(np.mean((Q[np.arange(6), batch.action] - y) ** 2), rel=1e-12)


def test_zero_error_is_noop():
    rng = np.random.default_rng(8)
    agent = small_agent()
    buf = ReplayBuffer(10, 5, 6)
    X = rng.random((5, 6))
    for t in range(5):
        buf.push(Transition(X, t, 0, 1.0, t == 4))
    batch = buf.sample(np.random.default_rng(0), 5)
    Q, _, _, _ = net.forward(agent.online, batch.features, batch.t)
    y = Q[np.arange(5), batch.action]
    loss, grads = loss_and_grads(agent.online, batch, y)
    assert loss == 0.0
    before = {k: v.copy() for k, v in agent.online.items()}
    agent.optimizer.step(agent.online, grads)
    for k in before:
        assert np.array_equal(before[k], agent.online[k])


def _overfit(optimizer, lr):
    rng = np.random.default_rng(9)
    agent = small_agent(lr=lr, optimizer=optimizer)
    batch = random_batch(rng, B=8)
    y = batch.reward.copy()
    losses = []
    for _ in range(100):
        loss, g = loss_and_grads(agent.online, batch, y)
        agent.optimizer.step(agent.online, g)
        losses.append(loss)
    return losses


def test_overfit_single_batch_gradient_descent():
    losses = _overfit("sgd", 0.1)
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[-1] < 0.25 * losses[0]


def test_overfit_single_batch_adam():
    losses = _overfit("adam", 1e-2)
    assert losses[-1] < 0.01 * losses[0]


def test_gradient_clipping():
    g = {"a": np.array([3.0, 4.0]), "b": np.array([12.0])}
    norm = net.clip_grads(g, 6.5)
    assert norm == pytest.approx(13.0)
    assert net.global_norm(g) == pytest.approx(6.5)


# -- actions and rewards ------------------------------------------------------


def test_greedy_and_ties():
    assert greedy(np.array([0.1, 0.9, 0.3])) == 1
    assert greedy(np.array([0.4, 0.4, 0.4])) == 0
    agent = small_agent()
    rng = np.random.default_rng(0)
    assert select_action(agent, None, 0.0, rng, Q=np.array([0.1, 0.9, 0.3])) == 1


def test_epsilon_one_is_uniform():
    agent = small_agent(M=4)
    rng = np.random.default_rng(11)
    n = 10_000
    counts = np.bincount([select_action(agent, None, 1.0, rng, Q=np.zeros(4)) for _ in range(n)], minlength=4)
    sigma = np.sqrt(n * 0.25 * 0.75)
    assert np.all(np.abs(counts - n / 4) <= 3 * sigma)


def test_epsilon_out_of_range():
    with pytest.raises(ContractViolation):
        select_action(small_agent(), None, 1.5, np.random.default_rng(0), Q=np.zeros(3))


def test_reward():
    pat = AssignmentPattern({0: frozenset({1, 2}), 1: frozenset({3})})
    assert reward(0, pat, 2) == 1.0
    assert reward(1, pat, 2) == -1.0
    with pytest.raises(ContractViolation):
        reward(0, pat, 9)


def test_epsilon_schedule():
    cfg = TrainConfig(episodes=100)
    assert cfg.epsilon(0) == 1.0
    assert cfg.epsilon(15) == pytest.approx(0.525)
    assert cfg.epsilon(30) == pytest.approx(0.05) and cfg.epsilon(99) == pytest.approx(0.05)
    assert TrainConfig(episodes=100, greedy_only=True).epsilon(0) == 0.0


# -- targets ------------------------------------------------------------------


def _hand_target_agent(gamma):
    agent = small_agent(M=2, gamma=gamma)
    for k in agent.target:
        agent.target[k][:] = 0.0
    agent.target["ab"][:] = [0.2, 0.5]
    agent.target["vb"][:] = 0.35  # V = mean(Q) so Q = (0.2, 0.5)
    return agent


def test_td_target_hand_example():
    agent = _hand_target_agent(0.99)
    X = np.zeros((1, 5, 5))
    batch = Batch(X, np.array([1]), np.array([0]), np.array([-1.0]), np.array([False]))
    assert td_targets(agent, batch)[0] == pytest.approx(-0.505, abs=1e-12)


def test_td_target_terminal_and_zero_gamma():
    agent = _hand_target_agent(0.99)
    X = np.zeros((2, 5, 5))
    term = Batch(X[:1], np.array([4]), np.array([1]), np.array([1.0]), np.array([True]))
    assert td_targets(agent, term)[0] == 1.0
    agent0 = _hand_target_agent(0.0)
    live = Batch(X, np.array([0, 2]), np.array([0, 1]), np.array([1.0, -1.0]), np.array([False, False]))
    assert list(td_targets(agent0, live)) == [1.0, -1.0]


def test_targets_frozen_between_syncs():
    rng = np.random.default_rng(12)
    agent = small_agent(target_interval=1000, lr=1e-2)
    buf = ReplayBuffer(100, 5, 6)
    for _ in range(40):
        t = int(rng.integers(0, 5))
        buf.push(Transition(rng.random((5, 6)), t, int(rng.integers(0, 3)), float(rng.choice([-1, 1])), t == 4))
    probe = buf.sample(np.random.default_rng(0), 16)
    before = td_targets(agent, probe)
    for _ in range(5):
        train_step(agent, buf, 16, rng)
        agent.observe_step()
    assert np.array_equal(td_targets(agent, probe), before)
    agent.sync_target()
    assert not np.array_equal(td_targets(agent, probe), before)


def test_target_sync_interval():
    agent = small_agent(target_interval=3)
    synced = [agent.observe_step() for _ in range(7)]
    assert synced == [False, False, True, False, False, True, False]


def test_train_step_needs_warm_buffer():
    buf = ReplayBuffer(10, 5, 6)
    buf.push(Transition(np.zeros((5, 6)), 0, 0, 1.0, False))
    with pytest.raises(ContractViolation):
        train_step(small_agent(), buf, 1, np.random.default_rng(0))


# -- replay -------------------------------------------------------------------


def test_replay_fifo_and_capacity():
    buf = ReplayBuffer(4, 2, 1)
    for i in range(10):
        buf.push(Transition(np.full((2, 1), i), 0, 0, 1.0, False))
        assert len(buf) == min(i + 1, 4)
        assert buf.oldest_serial() == max(0, i - 3)
    stored = sorted(buf.features[:, 0, 0].tolist())
    assert stored == [6, 7, 8, 9]


def test_replay_sample_without_replacement():
    buf = ReplayBuffer(20, 2, 1)
    for i in range(20):
        buf.push(Transition(np.full((2, 1), i), 0, 0, 1.0, False))
    b = buf.sample(np.random.default_rng(0), 20)
    assert sorted(b.features[:, 0, 0].tolist()) == list(range(20))
    with pytest.raises(ContractViolation):
        buf.sample(np.random.default_rng(0), 21)


def test_replay_rejects_bad_reward():
    with pytest.raises(ContractViolation):
        ReplayBuffer(2, 2, 1).push(Transition(np.zeros((2, 1)), 0, 0, 0.5, False))


# -- features and rollout -----------------------------------------------------


def test_features_in_unit_interval():
    topo = generate_topology(12, 3, seed=0)
    X = episode_features(topo, range(12))
    assert X.shape == (12, 6)
    assert X.min() >= 0.0 and X.max() <= 1.0
    assert X[:, :3].min() == 0.0 and X[:, :3].max() == 1.0


def test_assign_drl_partition_and_mismatch():
    topo = generate_topology(5, 3, seed=1)
    agent = small_agent(M=3, H=5)
    pat = assign_drl(agent, range(5), topo)
    assert pat.covers(range(5))
    with pytest.raises(ConfigurationError):
        assign_drl(agent, range(4), topo)
    with pytest.raises(ConfigurationError):
        assign_drl(agent, range(5), generate_topology(5, 2, seed=1))


# -- checkpoints --------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    agent = small_agent(head_hidden=4)
    buf = ReplayBuffer(50, 5, 6)
    for _ in range(20):
        buf.push(Transition(rng.random((5, 6)), 1, 0, 1.0, False))
    train_step(agent, buf, 8, rng)
    agent.observe_step()
    path = tmp_path / "agent.npz"
    agent.save(path)
    back = Agent.load(path)
    assert back.config == agent.config
    assert (back.steps, back.updates) == (agent.steps, agent.updates)
    for k in agent.online:
        assert np.array_equal(back.online[k], agent.online[k])
        assert np.array_equal(back.target[k], agent.target[k])
    # identical continuation after reload
    r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
    train_step(agent, buf, 8, r1)
    train_step(back, buf, 8, r2)
    for k in agent.online:
        assert np.array_equal(back.online[k], agent.online[k])


def test_checkpoint_version_checked(tmp_path):
    agent = small_agent()
    path = tmp_path / "a.npz"
    agent.save(path)
    z = dict(np.load(path))
    z["format_version"] = np.array(99)
    np.savez(path, **z)
    with pytest.raises(ConfigurationError):
        Agent.load(path)


# -- training -----------------------------------------------------------------


def test_single_edge_return_is_horizon():
    cfg = TrainConfig(n_edges=1, horizon=6, episodes=3, batch_size=4, hidden=4, seed=0)
    res = train_agent(cfg, params=CostParams())
    assert [e.ret for e in res.curve] == [6.0, 6.0, 6.0]


def test_training_bitwise_reproducible(tmp_path):
    cfg = TrainConfig(n_edges=2, horizon=5, episodes=6, batch_size=8, hidden=4, target_interval=7, seed=3)
    a = train_agent(cfg)
    b = train_agent(cfg)
    # loss is NaN before the buffer is warm
    assert np.array_equal([(e.ret, e.loss) for e in a.curve], [(e.ret, e.loss) for e in b.curve], equal_nan=True)
    for k in a.agent.online:
        assert a.agent.online[k].tobytes() == b.agent.online[k].tobytes()
    write_curve_csv(tmp_path / "c.csv", a.curve)
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "episode,return,loss,epsilon,agreement"
