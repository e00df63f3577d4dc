"""Coordinated multi-agent actor-critic request dispatch.

One actor per access point over its local state, masked to the currently
valid targets; one shared critic trained centrally with a target network
that syncs at episode boundaries. The per-slot reward e^(-lambda - eps*nu)
combines the deadline-violation ratio with a load-balance term and is
shared by every agent that acted.

Reward, advantage, and value-target bookkeeping run one slot late: the
reward for an action taken at slot t is realized by the outcomes of
[t, t+1], so records are finalized at slot t+1 with that reward and the
successor state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cluster import ContractError
from .nn import AdamState, Mlp, adam_step, masked_softmax, sample_rows


def build_actor(state_len, n_actions, seed=0):
    """Policy net: 256-128-32 ReLU trunk, ReLU+1 head for positive logits."""
    return Mlp(
        [state_len, 256, 128, 32, n_actions],
        ["relu", "relu", "relu", "relu_plus_one"],
        seed=seed,
    )


def build_critic(state_len, seed=0):
    """Value net: 256-128-64-32 ReLU trunk, linear scalar head."""
    return Mlp(
        [state_len, 256, 128, 64, 32, 1],
        ["relu", "relu", "relu", "relu", "linear"],
        seed=seed,
    )


@dataclass
class DispatchAction:
    eap_id: int
    target: int  # 0 = cloud, j in [1, N] = edge node j-1
    request_id: int


@dataclass
class DispatchReward:
    lambda_violation: float
    xi: float
    nu: float
    epsilon_weight: float
    value: float


def build_context(env, b):
    """Validity vector for eAP b's head request, or None on an empty queue.

    Index 0 (cloud) is always valid; node j is valid iff it hosts a live
    replicate of the head request's type and its executor queue has room.
    """
    head = env.peek_dispatch_head(b)
    if head is None:
        return None
    return env.validity_vector(head.record.service_type)


def act(actor, state, context, mode, rng=None):
    """Pick a dispatch target from the masked policy distribution.

    Returns (target, probs). sample mode draws (training); greedy takes
    the argmax (evaluation). The chosen target always has context 1.
    """
    logits = actor.forward(state)
    probs = masked_softmax(logits, context)
    if mode == "greedy":
        target = int(np.argmax(probs))
    elif mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        target = sample_rows(probs, rng)
    else:
        raise ValueError(f"unknown act mode {mode!r}")
    return target, probs


def compute_reward(outcome, epsilon):
    """Shared per-slot dispatch reward e^(-lambda - epsilon*nu)."""
    terminal = outcome.violations + outcome.on_time
    lam = outcome.violations / terminal if terminal else 0.0
    utils = np.concatenate([outcome.cpu_utils, outcome.mem_utils])
    xi = float(np.std(utils))
    nu = 1.0 / (1.0 + np.exp(-xi))
    value = float(np.exp(-lam - epsilon * nu))
    return DispatchReward(
        lambda_violation=lam,
        xi=xi,
        nu=nu,
        epsilon_weight=epsilon,
        value=value,
    )


def advantage(reward, gamma, v_next_target, v_current):
    """TD advantage: realized reward + discounted target value - baseline."""
    return reward + gamma * v_next_target - v_current


def critic_target(succ_states, rewards, probs, gamma, target_net):
    """Probability-weighted one-step return summed over the acting agents."""
    if not succ_states:
        return 0.0
    if not (len(succ_states) == len(rewards) == len(probs)):
        raise ValueError("per-agent lists must align")
    values = target_net.forward(np.stack(succ_states))[:, 0]
    total = 0.0
    for p, r, v in zip(probs, rewards, values):
        total += p * (r + gamma * v)
    return float(total)


class CriticPair:
    """Value net plus a frozen copy refreshed at episode boundaries."""

    def __init__(self, state_len, seed=0):
        self.value_net = build_critic(state_len, seed=seed)
        self.target_net = self.value_net.copy()

    def sync_target(self):
        self.target_net.load_state(self.value_net.params)


@dataclass
class ActorRecord:
    state: np.ndarray
    target: int
    advantage_value: float
    reward: float
    context: np.ndarray


@dataclass
class TransitionBuffer:
    actor_records: list = field(default_factory=list)
    critic_records: list = field(default_factory=list)  # (states, v_star)

    def drain_actor(self):
        out = self.actor_records
        self.actor_records = []
        return out

    def drain_critic(self):
        out = self.critic_records
        self.critic_records = []
        return out


def train_critic(buffer, pair, adam):
    """One Adam step of squared error toward the stored value targets.

    Returns the pre-step mean loss, 0.0 when there is nothing buffered.
    """
    records = buffer.drain_critic()
    if not records:
        return 0.0
    states = []
    targets = []
    for agent_states, v_star in records:
        for s in agent_states:
            states.append(s)
            targets.append(v_star)
    x = np.stack(states)
    t = np.array(targets)
    out, cache = pair.value_net.forward_cached(x)
    err = out[:, 0] - t
    loss = float(np.mean(err**2))
    grad_out = (2.0 * err / len(err))[:, None]
    grads, _ = pair.value_net.backward(cache, grad_out)
    adam_step(adam, pair.value_net.params, grads)
    return loss


def train_actor(buffer, actor, adam):
    """One Adam ascent step on sum(log pi * advantage) over the buffer.

    Returns the gradient norm of the objective; raises ContractError if a
    stored action sits outside its stored mask (corruption detector).
    """
    records = buffer.drain_actor()
    if not records:
        return 0.0
    states = np.stack([r.state for r in records])
    out, cache = actor.forward_cached(states)
    grad_out = np.zeros_like(out)
    for k, rec in enumerate(records):
        if rec.context[rec.target] != 1.0:
            raise ContractError(
                f"stored action {rec.target} outside its context mask"
            )
        p = out[k]
        masked_total = float(np.sum(p * rec.context))
        # d log pi_j / d p = e_j / p_j - F / sum(F * p)
        row = -rec.context / masked_total
        row[rec.target] += 1.0 / p[rec.target]
        grad_out[k] = rec.advantage_value * row
    grads, _ = actor.backward(cache, grad_out)
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    adam_step(adam, actor.params, [-g for g in grads])
    return norm


class DispatchLearner:
    """Per-slot driver for the dispatch half of the training loop.

    Actors run inference on a periodically synchronized snapshot of the
    live policy, mirroring the broadcast of parameters to the distributed
    access points.
    """

    def __init__(
        self,
        state_len,
        n_actions,
        gamma=0.9,
        epsilon=1.0,
        learning_rate=5e-4,
        critic_learning_rate=None,
        sync_period_slots=10,
        seed=0,
    ):
        self.gamma = gamma
        self.epsilon = epsilon
        self.sync_period_slots = int(sync_period_slots)
        self.actor = build_actor(state_len, n_actions, seed=seed)
        self.deployed_actor = self.actor.copy()
        self.critic = CriticPair(state_len, seed=seed + 1)
        self.actor_adam = AdamState(self.actor.params, learning_rate)
        # the critic must reach the return scale before advantages carry
        # signal, so it may run hotter than the actor
        self.critic_adam = AdamState(
            self.critic.value_net.params,
            learning_rate if critic_learning_rate is None else critic_learning_rate,
        )
        self.buffer = TransitionBuffer()
        self.rng = np.random.default_rng(seed + 2)
        self._pending = {}  # b -> (state, target, action_prob, context)
        self._slots_seen = 0
        self.last_critic_loss = 0.0
        self.last_actor_grad_norm = 0.0

    def finalize_pending(self, env, prev_reward):
        """Turn last slot's decisions into records now that the shared
        reward and successor states exist."""
        if not self._pending:
            return
        order = sorted(self._pending)
        succ_states = [env.snapshot_local_state(b) for b in order]
        succ_vals = self.critic.target_net.forward(np.stack(succ_states))[:, 0]
        prev_states = [self._pending[b][0] for b in order]
        prev_vals = self.critic.value_net.forward(np.stack(prev_states))[:, 0]
        probs = [self._pending[b][2] for b in order]
        rewards = [prev_reward] * len(order)
        v_star = critic_target(
            succ_states, rewards, probs, self.gamma, self.critic.target_net
        )
        self.buffer.critic_records.append((prev_states, v_star))
        for i, b in enumerate(order):
            state, target, _, context = self._pending[b]
            adv = advantage(
                prev_reward, self.gamma, float(succ_vals[i]), float(prev_vals[i])
            )
            self.buffer.actor_records.append(
                ActorRecord(
                    state=state,
                    target=target,
                    advantage_value=adv,
                    reward=prev_reward,
                    context=context,
                )
            )
        self._pending = {}

    def decide(self, env, b, mode="sample"):
        head = env.peek_dispatch_head(b)
        if head is None:
            return None
        state = env.snapshot_local_state(b, head=head)
        context = env.validity_vector(head.record.service_type)
        target, probs = act(self.deployed_actor, state, context, mode, rng=self.rng)
        if mode == "sample":
            self._pending[b] = (state, target, float(probs[target]), context)
        return DispatchAction(eap_id=b, target=target, request_id=head.id)

    def end_slot(self, train=True):
        if train:
            self.last_critic_loss = train_critic(
                self.buffer, self.critic, self.critic_adam
            )
            self.last_actor_grad_norm = train_actor(
                self.buffer, self.actor, self.actor_adam
            )
        self._slots_seen += 1
        if self._slots_seen % self.sync_period_slots == 0:
            self.deployed_actor.load_state(self.actor.params)

    def end_episode(self):
        self.critic.sync_target()
        self.deployed_actor.load_state(self.actor.params)
        self._pending = {}

    def checkpoint_nets(self):
        return {
            "actor": self.actor,
            "critic_value": self.critic.value_net,
            "critic_target": self.critic.target_net,
        }
