"""Prototype: 1 eAP / 2 nodes with 10x speed asymmetry; does the actor
learn to prefer the fast node?"""

import sys
import time

sys.path.insert(0, "src")
import numpy as np

from edgesched.cluster import EAP, Clock, CloudCluster, Cluster, EdgeNode, ServiceCatalog
from edgesched.cmmac import DispatchLearner, compute_reward
from edgesched.workload import Request, TraceRecord


def make_env():
    catalog = ServiceCatalog(
        nominal_proc_ms=[2000.0],
        replicate_cpu=[500.0],
        replicate_mem=[256.0],
        image_size_mb=[100.0],
        deadline_ms_range=[(800, 1000)],
        input_size_kb=[50.0],
    )
    nodes = [
        EdgeNode(0, 0, 4000, 4096, 300, speed_factor=1.0),   # slow
        EdgeNode(1, 0, 4000, 4096, 300, speed_factor=10.0),  # fast
    ]
    eaps = [EAP(0, [0, 1], 100.0)]
    env = Cluster(
        catalog, nodes, eaps,
        cloud=CloudCluster(parallelism=8, speed_factor=1.0),
        clock=Clock(slot_ms=250.0, slots_per_frame=25),
        eap_strategy="fifo", executor_strategy="fifo",
    )
    env.deploy(0, 1, count=2)
    env.deploy(1, 1, count=2)
    return env


def gen_requests(rng, n_slots, rate=0.8):
    reqs = []
    rid = 0
    for s in range(n_slots):
        for _ in range(rng.poisson(rate)):
            arr = s * 250.0 + rng.uniform(0, 250.0)
            deadline = int(rng.uniform(800, 1000))
            rec = TraceRecord(int(arr), 1, deadline, 100.0, 64.0, 50.0)
            reqs.append(Request(id=rid, record=rec, eap_id=0))
            rid += 1
    reqs.sort(key=lambda r: (r.record.arrival_ms, r.id))
    for i, r in enumerate(reqs):
        r.id = i
    return reqs


def fast_node_prob(learner):
    env = make_env()
    rng = np.random.default_rng(999)
    env.load_arrivals(gen_requests(rng, 12))
    probs = []
    from edgesched.cmmac import act
    for _ in range(12):
        head = env.peek_dispatch_head(0)
        actions = {}
        if head is not None:
            state = env.snapshot_local_state(0, head=head)
            ctx = env.validity_vector(1)
            target, p = act(learner.actor, state, ctx, "greedy")
            probs.append(p[2])  # index 2 = node 1 (fast)
            from edgesched.cmmac import DispatchAction
            actions[0] = DispatchAction(0, target, head.id)
        env.step_slot(actions)
    return float(np.mean(probs)) if probs else 0.0


def train_seed(seed, episodes=200, slots_per_episode=50, lr=5e-4):
    env0 = make_env()
    learner = DispatchLearner(
        state_len=env0.local_state_len, n_actions=3,
        gamma=0.9, epsilon=0.0, learning_rate=lr, sync_period_slots=10, seed=seed,
    )
    wl_rng = np.random.default_rng(10_000 + seed)
    hit = None
    for ep in range(episodes):
        env = make_env()
        env.load_arrivals(gen_requests(wl_rng, slots_per_episode))
        prev_reward = 0.0
        for t in range(slots_per_episode):
            learner.finalize_pending(env, prev_reward)
            actions = {}
            a = learner.decide(env, 0, mode="sample")
            if a is not None:
                actions[0] = a
            out = env.step_slot(actions)
            prev_reward = compute_reward(out, learner.epsilon).value
            learner.end_slot(train=True)
        learner.end_episode()
        if (ep + 1) % 10 == 0:
            p = fast_node_prob(learner)
            if p >= 0.9 and hit is None:
                hit = ep + 1
                break
    return hit, fast_node_prob(learner)


t0 = time.time()
results = []
for seed in range(5):
    hit, p = train_seed(seed)
    results.append((seed, hit, round(p, 3)))
    print(f"seed {seed}: reached at ep {hit}, final prob {p:.3f}, elapsed {time.time()-t0:.1f}s")
print(results)
