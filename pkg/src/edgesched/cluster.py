"""Discrete-event simulation of the edge-cloud system.

Owns the topology (access points, edge nodes, cloud), service replicates,
request transport and execution, deadline dropping, and the two-time-scale
clock. Decisions (dispatch, executor drains, scaling) fire only at slot
boundaries; completions and transit arrivals are tracked sub-slot through
an event heap.

Execution model: one replicate processes one request at a time and takes
nominal_proc_ms / speed_factor. Replicates reserve their CPU/memory on the
node while deployed; "utilization" is the busy fraction of that capacity,
"free" is capacity minus deployment reservations. Requests still running
at their deadline are allowed to finish (no preemption) and are recorded
as deadline violations on completion; queued and in-transit requests whose
deadline has passed are dropped at each slot end.
"""

from __future__ import annotations

import heapq
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import dequeue as dq


class ContractError(ValueError):
    """An operation was called outside its documented domain."""


class InvalidActionError(ContractError):
    """A dispatch action targeted an option the mask should have excluded."""


class ServiceCatalog:
    """Per-type execution and footprint constants, 1-based service ids."""

    def __init__(
        self,
        nominal_proc_ms,
        replicate_cpu,
        replicate_mem,
        image_size_mb,
        deadline_ms_range=None,
        input_size_kb=None,
    ):
        n = len(nominal_proc_ms)
        if n < 1:
            raise ValueError("catalog needs at least one service type")
        for name, vals in (
            ("nominal_proc_ms", nominal_proc_ms),
            ("replicate_cpu", replicate_cpu),
            ("replicate_mem", replicate_mem),
            ("image_size_mb", image_size_mb),
        ):
            if len(vals) != n:
                raise ValueError(f"{name} length != {n}")
            if any(v <= 0 for v in vals):
                raise ValueError(f"{name} entries must be positive")
        self._proc = tuple(float(v) for v in nominal_proc_ms)
        self._cpu = tuple(float(v) for v in replicate_cpu)
        self._mem = tuple(float(v) for v in replicate_mem)
        self._image = tuple(float(v) for v in image_size_mb)
        if deadline_ms_range is None:
            deadline_ms_range = [(1000.0, 8000.0)] * n
        if input_size_kb is None:
            input_size_kb = [100.0] * n
        self._deadline = tuple((float(a), float(b)) for a, b in deadline_ms_range)
        self._input_kb = tuple(float(v) for v in input_size_kb)

    @property
    def w_count(self):
        return len(self._proc)

    def _check(self, w):
        if not 1 <= w <= self.w_count:
            raise ContractError(f"service type {w} outside [1, {self.w_count}]")

    def nominal_proc_ms(self, w):
        self._check(w)
        return self._proc[w - 1]

    def replicate_cpu(self, w):
        self._check(w)
        return self._cpu[w - 1]

    def replicate_mem(self, w):
        self._check(w)
        return self._mem[w - 1]

    def image_size_mb(self, w):
        self._check(w)
        return self._image[w - 1]

    def deadline_ms_range(self, w):
        self._check(w)
        return self._deadline[w - 1]

    def input_size_kb(self, w):
        self._check(w)
        return self._input_kb[w - 1]


@dataclass
class LinkSpec:
    latency_ms: float
    bw_mbps: float

    def __post_init__(self):
        if self.latency_ms < 0 or self.bw_mbps <= 0:
            raise ValueError("latency must be >= 0 and bandwidth > 0")


@dataclass
class NetworkModel:
    device_edge: LinkSpec = field(default_factory=lambda: LinkSpec(20.0, 50.0))
    intra_edge_lan: LinkSpec = field(default_factory=lambda: LinkSpec(10.0, 1000.0))
    edge_cloud_wan: LinkSpec = field(default_factory=lambda: LinkSpec(100.0, 100.0))


def transport_delay(src, dst, size_kb, net):
    """Milliseconds to move size_kb between two locations.

    Locations are tuples: ("device",), ("eap", b), ("node", n), ("cloud",).
    delay = link latency + 8*size_kb/bw_mbps (kb->bits over Mbps, in ms).
    """
    if size_kb < 0:
        raise ContractError("size_kb must be >= 0")
    if src == dst:
        return 0.0
    kinds = frozenset((src[0], dst[0]))
    if kinds == frozenset(("device", "eap")):
        link = net.device_edge
    elif kinds == frozenset(("eap", "node")):
        link = net.intra_edge_lan
    elif kinds == frozenset(("eap", "cloud")):
        link = net.edge_cloud_wan
    else:
        raise ContractError(f"no link class between {src} and {dst}")
    return link.latency_ms + 8.0 * size_kb / link.bw_mbps


@dataclass
class Clock:
    slot_ms: float = 250.0
    slots_per_frame: int = 100
    slot_index: int = 0
    now_ms: float = 0.0

    @property
    def frame_index(self):
        return self.slot_index // self.slots_per_frame

    @property
    def is_frame_boundary(self):
        return self.slot_index % self.slots_per_frame == 0

    def advance(self):
        self.slot_index += 1
        self.now_ms = self.slot_index * self.slot_ms


@dataclass
class NormalizationConstants:
    """Fixed min-max denominators for state features."""

    queue_cap: float = 50.0
    deadline_ms: float = 10000.0
    latency_ms: float = 200.0
    replicate_count: float = 10.0


class EdgeNode:
    def __init__(
        self,
        node_id,
        eap_id,
        cpu_capacity,
        mem_capacity,
        storage_capacity_gb,
        speed_factor=1.0,
    ):
        if speed_factor <= 0:
            raise ValueError("speed_factor must be positive")
        self.id = int(node_id)
        self.eap_id = int(eap_id)
        self.cpu_capacity = float(cpu_capacity)
        self.mem_capacity = float(mem_capacity)
        self.storage_capacity_gb = float(storage_capacity_gb)
        self.speed_factor = float(speed_factor)
        self.deployed = {}  # w -> replicate count
        self.pending_delete = {}  # w -> replicates to remove once one finishes
        self.executor_queue = []
        self.running = []  # (finish_ms, request)

    def reserved_cpu(self, catalog):
        return sum(catalog.replicate_cpu(w) * c for w, c in self.deployed.items())

    def reserved_mem(self, catalog):
        return sum(catalog.replicate_mem(w) * c for w, c in self.deployed.items())

    def free_cpu(self, catalog):
        return self.cpu_capacity - self.reserved_cpu(catalog)

    def free_mem(self, catalog):
        return self.mem_capacity - self.reserved_mem(catalog)

    def busy_count(self, w):
        return sum(1 for _, r in self.running if r.record.service_type == w)

    def idle_replicates(self, w):
        d = self.deployed.get(w, 0) - self.pending_delete.get(w, 0)
        return max(0, d - self.busy_count(w))

    def hosted_replicates(self, w):
        """Replicates not marked for deletion."""
        return self.deployed.get(w, 0) - self.pending_delete.get(w, 0)

    def idle_map(self):
        return {w: self.idle_replicates(w) for w in sorted(self.deployed)}

    def cpu_utilization(self, catalog):
        used = sum(
            catalog.replicate_cpu(r.record.service_type) for _, r in self.running
        )
        return used / self.cpu_capacity

    def mem_utilization(self, catalog):
        used = sum(
            catalog.replicate_mem(r.record.service_type) for _, r in self.running
        )
        return used / self.mem_capacity

    def can_host_replicate(self, catalog, w):
        return (
            self.free_cpu(catalog) >= catalog.replicate_cpu(w)
            and self.free_mem(catalog) >= catalog.replicate_mem(w)
        )


class EAP:
    def __init__(self, eap_id, attached_nodes, measured_cloud_latency_ms):
        self.id = int(eap_id)
        self.attached_nodes = list(attached_nodes)
        self.measured_cloud_latency_ms = float(measured_cloud_latency_ms)
        self.dispatch_queue = []


class CloudCluster:
    """Always hosts every service; capacity is a shared execution pool."""

    def __init__(self, parallelism=60, speed_factor=1.0):
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        self.parallelism = int(parallelism)
        self.speed_factor = float(speed_factor)
        self.executor_queue = []
        self.running = []

    @property
    def idle_slots(self):
        return self.parallelism - len(self.running)


@dataclass
class OrchestrationAction:
    """Frame-scale scaling decision: per selected node one delta in [-W, W].

    delta 0 leaves the node alone, +w adds a replicate of service w, -w
    removes one. Learned orchestration selects exactly H distinct nodes;
    threshold autoscaling may emit any number of (node, delta) pairs.
    """

    selected_nodes: list
    deltas: list

    def __post_init__(self):
        if len(self.selected_nodes) != len(self.deltas):
            raise ValueError("selected_nodes and deltas length mismatch")


@dataclass
class ScalingEntry:
    node_id: int
    requested: int
    realized: int
    deferred: bool = False


@dataclass
class ScalingReport:
    entries: list
    image_pull_mb: float


@dataclass
class SlotOutcome:
    """Everything a slot produced, for rewards, metrics, and tests."""

    slot_index: int
    now_ms: float
    arrived: int
    arrived_per_eap: dict
    on_time_edge: int
    on_time_cloud: int
    violations: int  # late completions + expired drops
    forwarded_kb: float
    cpu_utils: np.ndarray
    mem_utils: np.ndarray
    node_queue_lens: list
    cloud_queue_len: int
    completions: list  # (request, location, on_time)
    in_flight: int

    @property
    def on_time(self):
        return self.on_time_edge + self.on_time_cloud


class Cluster:
    """Single-owner environment state machine.

    All mutation goes through step_slot/apply_scaling; snapshots are plain
    numpy values safe to hand to learners.
    """

    def __init__(
        self,
        catalog,
        nodes,
        eaps,
        cloud=None,
        net=None,
        clock=None,
        eap_strategy="discounted",
        executor_strategy="discounted",
        lambda_e=0.9,
        lambda_prime=0.5,
        executor_queue_cap=50,
        norms=None,
    ):
        self.catalog = catalog
        self.nodes = sorted(nodes, key=lambda n: n.id)
        if [n.id for n in self.nodes] != list(range(len(self.nodes))):
            raise ValueError("node ids must be 0..N-1")
        self.eaps = sorted(eaps, key=lambda e: e.id)
        if [e.id for e in self.eaps] != list(range(len(self.eaps))):
            raise ValueError("eAP ids must be 0..B-1")
        self.cloud = cloud or CloudCluster()
        self.net = net or NetworkModel()
        self.clock = clock or Clock()
        self.eap_strategy = eap_strategy
        self.executor_strategy = executor_strategy
        self.priority_params = dq.PriorityParams(lambda_prime=lambda_prime)
        self.executor_queue_cap = int(executor_queue_cap)
        self.norms = norms or NormalizationConstants()

        w_count = catalog.w_count
        lan = self.net.intra_edge_lan
        eap_init = {
            w: catalog.nominal_proc_ms(w)
            + lan.latency_ms
            + 8.0 * catalog.input_size_kb(w) / lan.bw_mbps
            for w in range(1, w_count + 1)
        }
        exec_init = {w: catalog.nominal_proc_ms(w) for w in range(1, w_count + 1)}
        self.eap_estimators = {
            e.id: dq.CompletionEstimator(eap_init, lambda_e=lambda_e, scope="eap")
            for e in self.eaps
        }
        self.node_estimators = {
            n.id: dq.CompletionEstimator(exec_init, lambda_e=lambda_e, scope="executor")
            for n in self.nodes
        }
        self.cloud_estimator = dq.CompletionEstimator(
            exec_init, lambda_e=lambda_e, scope="executor"
        )

        self._arrivals = []  # (eap_enqueue_ms, request), consumed in order
        self._arrival_ptr = 0
        self._events = []  # heap of (time, seq, kind, payload)
        self._event_seq = 0
        self._in_transit = set()

        self.total_arrived = 0
        self.total_on_time = 0
        self.total_dropped = 0

    # -- setup -----------------------------------------------------------

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_eaps(self):
        return len(self.eaps)

    @property
    def max_nodes_per_eap(self):
        return max(len(e.attached_nodes) for e in self.eaps)

    def load_arrivals(self, requests):
        """Queue a request stream; enqueue time pre-charges the device link."""
        pre = self.net.device_edge.latency_ms
        items = [(r.record.arrival_ms + pre, r.id, r) for r in requests]
        items.sort()
        self._arrivals.extend(items)
        self._arrivals.sort()

    def deploy(self, node_id, w, count=1):
        """Directly place replicates (initial deployment, tests)."""
        node = self.nodes[node_id]
        for _ in range(count):
            if not node.can_host_replicate(self.catalog, w):
                raise ContractError(
                    f"node {node_id} cannot host another replicate of {w}"
                )
            node.deployed[w] = node.deployed.get(w, 0) + 1

    def _push_event(self, time_ms, kind, payload):
        self._event_seq += 1
        heapq.heappush(self._events, (time_ms, self._event_seq, kind, payload))

    # -- observation helpers ---------------------------------------------

    def peek_dispatch_head(self, b):
        eap = self.eaps[b]
        est = self.eap_estimators[b]
        return dq.select_for_dispatch(
            eap.dispatch_queue,
            self.eap_strategy,
            est,
            self.clock.now_ms,
            params=self.priority_params,
        )

    def node_valid_for(self, w, node_id):
        """Mask-level availability: hosts a live replicate and has queue room."""
        node = self.nodes[node_id]
        return (
            node.hosted_replicates(w) >= 1
            and len(node.executor_queue) < self.executor_queue_cap
        )

    def validity_vector(self, w):
        """Length N+1 binary vector; index 0 (cloud) is always valid."""
        vec = np.zeros(self.n_nodes + 1)
        vec[0] = 1.0
        for node in self.nodes:
            if self.node_valid_for(w, node.id):
                vec[node.id + 1] = 1.0
        return vec

    def utilization_vectors(self):
        cpu = np.array([n.cpu_utilization(self.catalog) for n in self.nodes])
        mem = np.array([n.mem_utilization(self.catalog) for n in self.nodes])
        return cpu, mem

    def orchestration_backlog(self):
        """Unprocessed requests sitting in edge executor queues."""
        return sum(len(n.executor_queue) for n in self.nodes)

    def in_flight_count(self):
        queued = sum(len(e.dispatch_queue) for e in self.eaps)
        queued += sum(len(n.executor_queue) for n in self.nodes)
        queued += len(self.cloud.executor_queue)
        running = sum(len(n.running) for n in self.nodes) + len(self.cloud.running)
        return queued + running + len(self._in_transit)

    @property
    def local_state_len(self):
        return self.catalog.w_count + 3 + 4 * self.max_nodes_per_eap + 2

    def snapshot_local_state(self, b, head="auto"):
        """Fixed-length feature vector for eAP b's dispatch agent.

        Layout: head-type one-hot (W) | normalized remaining deadline |
        empty-queue flag | queue length | per attached node (padded to the
        topology max) [queue, free cpu, free mem, free storage] | node
        count | measured cloud latency. All entries min-max normalized by
        the documented constants.
        """
        eap = self.eaps[b]
        if head == "auto":
            head = self.peek_dispatch_head(b)
        w_count = self.catalog.w_count
        norms = self.norms
        vec = np.zeros(self.local_state_len)
        if head is not None:
            vec[head.record.service_type - 1] = 1.0
            remaining = head.deadline_at_ms - self.clock.now_ms
            vec[w_count] = min(max(remaining / norms.deadline_ms, 0.0), 1.0)
        else:
            vec[w_count + 1] = 1.0  # empty-queue flag
        vec[w_count + 2] = min(len(eap.dispatch_queue) / norms.queue_cap, 1.0)
        base = w_count + 3
        for i, node_id in enumerate(eap.attached_nodes):
            node = self.nodes[node_id]
            off = base + 4 * i
            vec[off] = min(len(node.executor_queue) / norms.queue_cap, 1.0)
            vec[off + 1] = max(node.free_cpu(self.catalog) / node.cpu_capacity, 0.0)
            vec[off + 2] = max(node.free_mem(self.catalog) / node.mem_capacity, 0.0)
            vec[off + 3] = 1.0  # free storage fraction; storage is never consumed
        tail = base + 4 * self.max_nodes_per_eap
        vec[tail] = len(eap.attached_nodes) / self.max_nodes_per_eap
        vec[tail + 1] = min(eap.measured_cloud_latency_ms / norms.latency_ms, 1.0)
        return vec

    def snapshot_global_state(self):
        """All local vectors concatenated plus the cloud queue length."""
        parts = [self.snapshot_local_state(e.id) for e in self.eaps]
        cloud_q = min(len(self.cloud.executor_queue) / self.norms.queue_cap, 1.0)
        parts.append(np.array([cloud_q]))
        return np.concatenate(parts)

    # -- frame-scale mutation --------------------------------------------

    def apply_scaling(self, action):
        """Execute a scaling action; infeasible deltas coerce to no-ops.

        Adds respect capacity reservations. Deletes remove an idle
        replicate immediately or defer until one finishes its current
        request. Image pulls are charged when a node gains its first
        replicate of a service.
        """
        w_count = self.catalog.w_count
        entries = []
        image_mb = 0.0
        for node_id, delta in zip(action.selected_nodes, action.deltas):
            delta = int(delta)
            if abs(delta) > w_count:
                raise ContractError(f"delta {delta} outside [-{w_count}, {w_count}]")
            node = self.nodes[node_id]
            if delta == 0:
                entries.append(ScalingEntry(node_id, 0, 0))
                continue
            if delta > 0:
                w = delta
                if node.can_host_replicate(self.catalog, w):
                    first = node.deployed.get(w, 0) == 0
                    node.deployed[w] = node.deployed.get(w, 0) + 1
                    if first:
                        image_mb += self.catalog.image_size_mb(w)
                    entries.append(ScalingEntry(node_id, delta, delta))
                else:
                    entries.append(ScalingEntry(node_id, delta, 0))
                continue
            w = -delta
            if node.hosted_replicates(w) < 1:
                entries.append(ScalingEntry(node_id, delta, 0))
                continue
            if node.idle_replicates(w) >= 1:
                node.deployed[w] -= 1
                if node.deployed[w] == 0:
                    del node.deployed[w]
                entries.append(ScalingEntry(node_id, delta, delta))
            else:
                # all live replicates busy: delete once one finishes
                node.pending_delete[w] = node.pending_delete.get(w, 0) + 1
                entries.append(ScalingEntry(node_id, delta, 0, deferred=True))
        return ScalingReport(entries=entries, image_pull_mb=image_mb)

    # -- slot-scale mutation ---------------------------------------------

    def step_slot(self, dispatch_actions):
        """Advance one slot: execute dispatches, drain executors, play out
        sub-slot events, drop expired requests, update estimators."""
        t0 = self.clock.now_ms
        t1 = t0 + self.clock.slot_ms
        stats = {
            "arrived": 0,
            "arrived_per_eap": defaultdict(int),
            "on_time_edge": 0,
            "on_time_cloud": 0,
            "violations": 0,
            "forwarded_kb": 0.0,
            "completions": [],
        }
        eap_obs = defaultdict(lambda: defaultdict(list))
        exec_obs = defaultdict(lambda: defaultdict(list))

        self._execute_dispatches(dispatch_actions, t0, stats)
        self._drain_executors(t0)
        self._play_events(t1, stats, eap_obs, exec_obs)
        self._drop_expired(t1, stats)
        self._update_estimators(eap_obs, exec_obs)

        self.clock.advance()
        cpu, mem = self.utilization_vectors()
        outcome = SlotOutcome(
            slot_index=self.clock.slot_index - 1,
            now_ms=t1,
            arrived=stats["arrived"],
            arrived_per_eap=dict(stats["arrived_per_eap"]),
            on_time_edge=stats["on_time_edge"],
            on_time_cloud=stats["on_time_cloud"],
            violations=stats["violations"],
            forwarded_kb=stats["forwarded_kb"],
            cpu_utils=cpu,
            mem_utils=mem,
            node_queue_lens=[len(n.executor_queue) for n in self.nodes],
            cloud_queue_len=len(self.cloud.executor_queue),
            completions=stats["completions"],
            in_flight=self.in_flight_count(),
        )
        return outcome

    def _execute_dispatches(self, dispatch_actions, t0, stats):
        for b in sorted(dispatch_actions):
            action = dispatch_actions[b]
            if action is None:
                continue
            eap = self.eaps[b]
            est = self.eap_estimators[b]
            head = dq.dequeue_eap(
                eap.dispatch_queue,
                self.eap_strategy,
                est,
                t0,
                params=self.priority_params,
            )
            if head is None:
                raise InvalidActionError(f"eAP {b} acted on an empty queue")
            if head.id != action.request_id:
                raise InvalidActionError(
                    f"eAP {b} action names request {action.request_id}, "
                    f"strategy head is {head.id}"
                )
            w = head.record.service_type
            target = action.target
            if not 0 <= target <= self.n_nodes:
                raise InvalidActionError(f"target {target} outside [0, N]")
            if target > 0 and not self.node_valid_for(w, target - 1):
                raise InvalidActionError(
                    f"node {target - 1} is not available for service {w}"
                )
            head.dequeue_time_ms = t0
            head.advance_status("in_transit")
            # eAP-to-node rides the LAN regardless of attachment; only the
            # link class matters for delay
            dest_loc = ("cloud",) if target == 0 else ("node", target - 1)
            delay = transport_delay(
                ("eap", b), dest_loc, head.record.input_size_kb, self.net
            )
            if target == 0 or self.nodes[target - 1].eap_id != b:
                stats["forwarded_kb"] += head.record.input_size_kb
            self._in_transit.add(head.id)
            self._push_event(t0 + delay, "transit", (head, target))

    def _drain_executors(self, t0):
        for node in self.nodes:
            est = self.node_estimators[node.id]
            taken = dq.drain_executor(
                node.executor_queue,
                self.executor_strategy,
                est,
                node.idle_map(),
                t0,
                params=self.priority_params,
            )
            for req in taken:
                self._start_execution(req, node, t0)
        taken = dq.drain_executor(
            self.cloud.executor_queue,
            self.executor_strategy,
            self.cloud_estimator,
            dq.PooledAvailability(self.cloud.idle_slots),
            t0,
            params=self.priority_params,
        )
        for req in taken:
            self._start_execution(req, None, t0)

    def _start_execution(self, req, node, t0):
        speed = node.speed_factor if node is not None else self.cloud.speed_factor
        proc = self.catalog.nominal_proc_ms(req.record.service_type) / speed
        finish = t0 + proc
        req.exec_start_ms = t0
        req.advance_status("processing")
        where = ("node", node.id) if node is not None else ("cloud",)
        if node is not None:
            node.running.append((finish, req))
        else:
            self.cloud.running.append((finish, req))
        self._push_event(finish, "complete", (req, where))

    def _play_events(self, t1, stats, eap_obs, exec_obs):
        while self._events and self._events[0][0] <= t1:
            time_ms, _, kind, payload = heapq.heappop(self._events)
            if kind == "transit":
                req, target = payload
                if req.status != "in_transit":
                    continue  # dropped mid-flight
                self._in_transit.discard(req.id)
                req.executor_enqueue_ms = time_ms
                req.advance_status("queued_at_executor")
                if target == 0:
                    self.cloud.executor_queue.append(req)
                else:
                    self.nodes[target - 1].executor_queue.append(req)
            elif kind == "complete":
                req, where = payload
                self._finish_execution(req, where, time_ms, stats, eap_obs, exec_obs)
            else:
                raise RuntimeError(f"unknown event kind {kind}")

        # workload arrivals reaching their eAP inside this slot
        while (
            self._arrival_ptr < len(self._arrivals)
            and self._arrivals[self._arrival_ptr][0] <= t1
        ):
            enqueue_ms, _, req = self._arrivals[self._arrival_ptr]
            self._arrival_ptr += 1
            req.eap_arrival_ms = enqueue_ms
            self.eaps[req.eap_id].dispatch_queue.append(req)
            self.total_arrived += 1
            stats["arrived"] += 1
            stats["arrived_per_eap"][req.eap_id] += 1

    def _finish_execution(self, req, where, finish_ms, stats, eap_obs, exec_obs):
        if where[0] == "node":
            node = self.nodes[where[1]]
            node.running = [(f, r) for f, r in node.running if r.id != req.id]
            w = req.record.service_type
            if node.pending_delete.get(w, 0) > 0:
                node.pending_delete[w] -= 1
                if node.pending_delete[w] == 0:
                    del node.pending_delete[w]
                node.deployed[w] -= 1
                if node.deployed[w] == 0:
                    del node.deployed[w]
        else:
            self.cloud.running = [
                (f, r) for f, r in self.cloud.running if r.id != req.id
            ]
        req.completion_time_ms = finish_ms
        on_time = finish_ms <= req.deadline_at_ms
        stats["completions"].append((req, where, on_time))
        if on_time:
            req.advance_status("completed_on_time")
            self.total_on_time += 1
            if where[0] == "node":
                stats["on_time_edge"] += 1
            else:
                stats["on_time_cloud"] += 1
        else:
            req.advance_status("dropped")
            self.total_dropped += 1
            stats["violations"] += 1
        w = req.record.service_type
        eap_obs[req.eap_id][w].append(finish_ms - req.dequeue_time_ms)
        exec_obs[where][w].append(finish_ms - req.exec_start_ms)

    def _drop_expired(self, t1, stats):
        def expired(req):
            return req.deadline_at_ms <= t1

        for eap in self.eaps:
            for req in [r for r in eap.dispatch_queue if expired(r)]:
                eap.dispatch_queue.remove(req)
                self._mark_dropped(req, t1, stats)
        for node in self.nodes:
            for req in [r for r in node.executor_queue if expired(r)]:
                node.executor_queue.remove(req)
                self._mark_dropped(req, t1, stats)
        for req in [r for r in self.cloud.executor_queue if expired(r)]:
            self.cloud.executor_queue.remove(req)
            self._mark_dropped(req, t1, stats)
        # in transit: mark dropped; their arrival events become no-ops
        if self._in_transit:
            transit_reqs = sorted(
                (
                    payload[0]
                    for _, _, kind, payload in self._events
                    if kind == "transit" and payload[0].id in self._in_transit
                ),
                key=lambda r: r.id,
            )
            for req in transit_reqs:
                if expired(req):
                    self._in_transit.discard(req.id)
                    self._mark_dropped(req, t1, stats)

    def _mark_dropped(self, req, t1, stats):
        req.completion_time_ms = t1
        req.advance_status("dropped")
        self.total_dropped += 1
        stats["violations"] += 1

    def _update_estimators(self, eap_obs, exec_obs):
        for b in sorted(eap_obs):
            est = self.eap_estimators[b]
            for w in sorted(eap_obs[b]):
                samples = eap_obs[b][w]
                dq.update_estimate(est, w, float(np.mean(samples)))
        for where in sorted(exec_obs):
            est = (
                self.cloud_estimator
                if where[0] == "cloud"
                else self.node_estimators[where[1]]
            )
            for w in sorted(exec_obs[where]):
                samples = exec_obs[where][w]
                dq.update_estimate(est, w, float(np.mean(samples)))
