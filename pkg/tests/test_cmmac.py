"""Dispatcher tests: masking, rewards, value targets, and update steps."""

from types import SimpleNamespace

import numpy as np
import pytest

from edgesched.cluster import ContractError
from edgesched.cmmac import (
    ActorRecord,
    CriticPair,
    TransitionBuffer,
    act,
    advantage,
    build_actor,
    build_context,
    build_critic,
    compute_reward,
    critic_target,
    train_actor,
    train_critic,
)
from edgesched.nn import AdamState, Mlp, masked_softmax

from test_cluster import Dispatch, make_env, make_request


def make_outcome(violations=0, on_time_edge=0, on_time_cloud=0, cpu=None, mem=None):
    cpu = np.array(cpu if cpu is not None else [0.0, 0.0])
    mem = np.array(mem if mem is not None else [0.0, 0.0])
    return SimpleNamespace(
        violations=violations,
        on_time_edge=on_time_edge,
        on_time_cloud=on_time_cloud,
        on_time=on_time_edge + on_time_cloud,
        cpu_utils=cpu,
        mem_utils=mem,
    )


# -- context -----------------------------------------------------------------


def test_context_cloud_only_when_service_missing():
    env = make_env(n_nodes=3)
    env.load_arrivals([make_request(0)])
    env.step_slot({})
    ctx = build_context(env, 0)
    assert list(ctx) == [1.0, 0.0, 0.0, 0.0]


def test_context_all_hosting_nodes_valid():
    env = make_env(n_nodes=3)
    for i in range(3):
        env.deploy(i, 1)
    env.load_arrivals([make_request(0)])
    env.step_slot({})
    assert list(build_context(env, 0)) == [1.0, 1.0, 1.0, 1.0]


def test_context_cloud_always_valid():
    rng = np.random.default_rng(0)
    env = make_env(n_nodes=3)
    env.load_arrivals([make_request(0, deadline=10**7)])
    env.step_slot({})
    for _ in range(20):
        i = int(rng.integers(0, 3))
        if rng.random() < 0.5 and env.nodes[i].can_host_replicate(env.catalog, 1):
            env.deploy(i, 1)
        ctx = build_context(env, 0)
        assert ctx[0] == 1.0


def test_context_none_on_empty_queue():
    env = make_env()
    assert build_context(env, 0) is None


# -- acting ------------------------------------------------------------------


def test_act_cloud_only_forced():
    actor = build_actor(6, 4, seed=0)
    ctx = np.array([1.0, 0.0, 0.0, 0.0])
    target, probs = act(actor, np.zeros(6), ctx, "greedy")
    assert target == 0
    assert probs[0] == 1.0


def test_act_sampling_matches_uniform_distribution():
    # equal logits over 4 valid entries: empirical frequencies within
    # 3 sigma of 1/4 over 10k draws
    actor = build_actor(5, 6, seed=1)
    for w in actor.weights:
        w[...] = 0.0
    for b in actor.biases:
        b[...] = 0.0  # relu_plus_one head -> all logits exactly 1
    ctx = np.array([1.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    rng = np.random.default_rng(2)
    counts = np.zeros(6)
    n = 10_000
    for _ in range(n):
        t, _ = act(actor, np.zeros(5), ctx, "sample", rng=rng)
        counts[t] += 1
    assert counts[2] == 0 and counts[4] == 0
    p = 0.25
    sigma = np.sqrt(n * p * (1 - p))
    for j in (0, 1, 3, 5):
        assert abs(counts[j] - n * p) < 3 * sigma


def test_act_greedy_deterministic():
    actor = build_actor(5, 4, seed=3)
    state = np.ones(5)
    ctx = np.array([1.0, 1.0, 1.0, 0.0])
    first_target, first_probs = act(actor, state, ctx, "greedy")
    for _ in range(5):
        target, probs = act(actor, state, ctx, "greedy")
        assert target == first_target
        assert np.array_equal(probs, first_probs)


def test_act_never_targets_masked_entry():
    rng = np.random.default_rng(4)
    actor = build_actor(8, 5, seed=5)
    for _ in range(500):
        state = rng.normal(size=8)
        ctx = (rng.random(5) < 0.5).astype(float)
        ctx[0] = 1.0
        target, probs = act(actor, state, ctx, "sample", rng=rng)
        assert ctx[target] == 1.0
        assert np.all(probs[ctx == 0.0] == 0.0)


# -- reward ------------------------------------------------------------------


def test_reward_balanced_idle_cluster():
    r = compute_reward(make_outcome(), epsilon=1.0)
    assert r.lambda_violation == 0.0
    assert r.xi == 0.0
    assert r.nu == pytest.approx(0.5)
    assert r.value == pytest.approx(np.exp(-0.5), abs=1e-12)


def test_reward_all_violations_no_balance_term():
    r = compute_reward(make_outcome(violations=3), epsilon=0.0)
    assert r.lambda_violation == 1.0
    assert r.value == pytest.approx(np.exp(-1.0), abs=1e-12)


def test_reward_huge_imbalance_limit():
    r = compute_reward(make_outcome(cpu=[0.0, 1000.0]), epsilon=1.0)
    assert r.nu == pytest.approx(1.0)
    assert r.value == pytest.approx(np.exp(-1.0), rel=1e-6)


def test_reward_bounds_property():
    rng = np.random.default_rng(6)
    for _ in range(300):
        out = make_outcome(
            violations=int(rng.integers(0, 5)),
            on_time_edge=int(rng.integers(0, 5)),
            cpu=rng.random(4),
            mem=rng.random(4),
        )
        eps = float(rng.uniform(0, 4))
        r = compute_reward(out, epsilon=eps)
        assert 0.0 < r.value <= 1.0
        if r.value == 1.0:
            assert eps == 0.0 and r.lambda_violation == 0.0


# -- critic target -----------------------------------------------------------


def constant_value_net(value):
    net = Mlp([3, 1], ["linear"], seed=0)
    net.weights[0][...] = 0.0
    net.biases[0][...] = value
    return net


def test_critic_target_single_agent():
    net = constant_value_net(1.0)
    got = critic_target([np.zeros(3)], [0.5], [1.0], 0.9, net)
    assert got == pytest.approx(1.4)


def test_critic_target_gamma_zero():
    net = constant_value_net(123.0)
    got = critic_target([np.zeros(3)] * 2, [0.5, 0.25], [0.5, 0.4], 0.0, net)
    assert got == pytest.approx(0.5 * 0.5 + 0.4 * 0.25)


def test_critic_target_two_symmetric_agents_double():
    net = constant_value_net(1.0)
    one = critic_target([np.zeros(3)], [0.5], [0.8], 0.9, net)
    two = critic_target([np.zeros(3)] * 2, [0.5] * 2, [0.8] * 2, 0.9, net)
    assert two == pytest.approx(2 * one)


# -- critic training ---------------------------------------------------------


def test_train_critic_zero_loss_no_move():
    pair = CriticPair(4, seed=0)
    state = np.ones(4)
    v = float(pair.value_net.forward(state)[0])
    buffer = TransitionBuffer()
    buffer.critic_records.append(([state], v))
    adam = AdamState(pair.value_net.params, 1e-3)
    before = [p.copy() for p in pair.value_net.params]
    loss = train_critic(buffer, pair, adam)
    assert loss == pytest.approx(0.0, abs=1e-20)
    for p, q in zip(pair.value_net.params, before):
        assert np.allclose(p, q)


def test_train_critic_descends_convex_objective():
    pair = CriticPair(2, seed=1)
    # overwrite with a 1-parameter linear critic to hand-check descent
    pair.value_net = Mlp([2, 1], ["linear"], seed=0)
    pair.value_net.weights[0][...] = np.array([[2.0], [0.0]])
    pair.value_net.biases[0][...] = 0.0
    adam = AdamState(pair.value_net.params, 0.05)
    state = np.array([1.0, 0.0])
    target = 5.0

    def loss_now():
        return float((pair.value_net.forward(state)[0] - target) ** 2)

    pre = loss_now()
    buffer = TransitionBuffer()
    buffer.critic_records.append(([state], target))
    reported = train_critic(buffer, pair, adam)
    assert reported == pytest.approx(pre)
    assert loss_now() < pre


def test_train_critic_gradient_matches_finite_differences():
    pair = CriticPair(3, seed=2)
    states = [np.array([0.3, -0.8, 1.1]), np.array([0.9, 0.1, -0.4])]
    v_star = 0.7
    buffer = TransitionBuffer()
    buffer.critic_records.append((states, v_star))

    def objective():
        vals = pair.value_net.forward(np.stack(states))[:, 0]
        return float(np.mean((vals - v_star) ** 2))

    # capture the analytic gradient by re-deriving it the way train_critic does
    x = np.stack(states)
    out, cache = pair.value_net.forward_cached(x)
    err = out[:, 0] - v_star
    grads, _ = pair.value_net.backward(cache, (2.0 * err / len(err))[:, None])

    rng = np.random.default_rng(0)
    params = pair.value_net.params
    for _ in range(60):
        pi = int(rng.integers(len(params)))
        arr = params[pi]
        ci = int(rng.integers(arr.size))
        keep = arr.ravel()[ci]
        arr.ravel()[ci] = keep + 1e-5
        hi = objective()
        arr.ravel()[ci] = keep - 1e-5
        lo = objective()
        arr.ravel()[ci] = keep
        fd = (hi - lo) / 2e-5
        an = grads[pi].ravel()[ci]
        assert abs(fd - an) / max(abs(fd), abs(an), 1e-8) < 1e-4


# -- actor training ----------------------------------------------------------


def make_actor_record(actor, state, ctx, target, adv):
    return ActorRecord(
        state=state,
        target=target,
        advantage_value=adv,
        reward=0.0,
        context=ctx,
    )


def test_train_actor_zero_advantage_no_move():
    actor = build_actor(4, 3, seed=0)
    buffer = TransitionBuffer()
    ctx = np.array([1.0, 1.0, 0.0])
    buffer.actor_records.append(
        make_actor_record(actor, np.ones(4), ctx, target=1, adv=0.0)
    )
    adam = AdamState(actor.params, 1e-3)
    before = [p.copy() for p in actor.params]
    norm = train_actor(buffer, actor, adam)
    assert norm == 0.0
    for p, q in zip(actor.params, before):
        assert np.array_equal(p, q)


def test_train_actor_positive_advantage_raises_action_probability():
    actor = build_actor(4, 3, seed=1)
    state = np.array([0.5, -0.5, 1.0, 0.0])
    ctx = np.array([1.0, 1.0, 1.0])
    _, before = act(actor, state, ctx, "greedy")
    buffer = TransitionBuffer()
    buffer.actor_records.append(make_actor_record(actor, state, ctx, 2, adv=1.0))
    adam = AdamState(actor.params, 1e-3)
    train_actor(buffer, actor, adam)
    _, after = act(actor, state, ctx, "greedy")
    assert after[2] > before[2]


def test_train_actor_masked_entries_stay_zero():
    actor = build_actor(4, 3, seed=2)
    state = np.ones(4)
    ctx = np.array([1.0, 0.0, 1.0])
    buffer = TransitionBuffer()
    buffer.actor_records.append(make_actor_record(actor, state, ctx, 2, adv=2.0))
    adam = AdamState(actor.params, 1e-3)
    train_actor(buffer, actor, adam)
    _, probs = act(actor, state, ctx, "greedy")
    assert probs[1] == 0.0


def test_train_actor_rejects_masked_action():
    actor = build_actor(4, 3, seed=3)
    buffer = TransitionBuffer()
    ctx = np.array([1.0, 0.0, 1.0])
    buffer.actor_records.append(make_actor_record(actor, np.ones(4), ctx, 1, adv=1.0))
    adam = AdamState(actor.params, 1e-3)
    with pytest.raises(ContractError):
        train_actor(buffer, actor, adam)


# -- shared parameters and target freezing ------------------------------------


def test_identical_agents_identical_distributions():
    actor = build_actor(6, 4, seed=4)
    state = np.linspace(0, 1, 6)
    ctx = np.array([1.0, 1.0, 0.0, 1.0])
    _, p1 = act(actor, state, ctx, "greedy")
    _, p2 = act(actor, state, ctx, "greedy")
    assert np.array_equal(p1, p2)


def test_target_net_frozen_between_syncs():
    pair = CriticPair(3, seed=5)
    frozen = [p.copy() for p in pair.target_net.params]
    adam = AdamState(pair.value_net.params, 1e-2)
    buffer = TransitionBuffer()
    for _ in range(5):
        buffer.critic_records.append(([np.ones(3)], 2.0))
        train_critic(buffer, pair, adam)
    for p, q in zip(pair.target_net.params, frozen):
        assert np.array_equal(p, q)
    pair.sync_target()
    for p, q in zip(pair.target_net.params, pair.value_net.params):
        assert np.array_equal(p, q)


def test_advantage_formula():
    assert advantage(0.5, 0.9, 1.0, 0.3) == pytest.approx(0.5 + 0.9 - 0.3)
