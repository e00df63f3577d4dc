"""Queue-ordering strategies for dispatch and executor queues.

Three policies: fifo, latency_greedy (closest deadline first), and
discounted (priority from the gap between remaining deadline budget and a
discounted completion-time estimate). The estimator keeps one
exponentially discounted completion-time value per service type and is
updated only on slots that actually observed completions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

STRATEGIES = ("fifo", "latency_greedy", "discounted")

# gap below which the feasible/infeasible split in the priority rule is
# treated as an exact tie; the tie priority dominates every priority
# reachable with a gap of at least the window
TIE_WINDOW_MS = 1.0
TIE_PRIORITY = 1000.0


@dataclass
class PriorityParams:
    lambda_prime: float = 0.5  # penalty on likely-infeasible requests

    def __post_init__(self):
        if not 0.0 < self.lambda_prime < 1.0:
            raise ValueError("lambda_prime must be in (0, 1)")


@dataclass
class CompletionEstimator:
    """Per-type discounted completion-time estimates (ms).

    scope "eap" covers transport + executor queueing + execution (time
    from eAP dequeue to completion); scope "executor" covers execution
    only (time from executor dequeue to completion).
    """

    initial: dict
    lambda_e: float = 0.9
    scope: str = "eap"
    values: dict = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.lambda_e < 1.0:
            raise ValueError("lambda_e must be in (0, 1)")
        if self.scope not in ("eap", "executor"):
            raise ValueError(f"unknown estimator scope {self.scope!r}")
        self.values = {int(w): float(v) for w, v in self.initial.items()}

    def estimate(self, w):
        return self.values[w]


def update_estimate(est, w, observed_ms):
    """Blend one per-slot mean observation into the estimate for type w.

    observed_ms == 0 means "nothing observed this slot" and is skipped.
    """
    if w not in est.values:
        raise KeyError(f"unknown service type {w}")
    if observed_ms < 0:
        raise ValueError("observed_ms must be >= 0")
    if observed_ms == 0:
        return est
    est.values[w] = est.lambda_e * est.values[w] + (1.0 - est.lambda_e) * observed_ms
    return est


def priority(remaining_ms, estimate_ms, params):
    """Dequeue priority from remaining budget vs estimated completion time.

    Feasible (remaining > estimate): 1/(remaining-estimate), so tighter
    slack means higher priority. Likely infeasible: the same shape scaled
    by lambda_prime. Gaps inside the tie window collapse to a fixed
    priority above every feasible value at gap >= TIE_WINDOW_MS.
    """
    gap = remaining_ms - estimate_ms
    if abs(gap) < TIE_WINDOW_MS:
        return TIE_PRIORITY
    if gap > 0:
        return 1.0 / gap
    return params.lambda_prime / (-gap)


def _order_key(req, strategy, est, params, now_ms, queue_time_attr):
    if strategy == "fifo":
        entry = getattr(req, queue_time_attr)
        entry = req.record.arrival_ms if entry is None else entry
        return (entry, req.id)
    remaining = req.deadline_at_ms - now_ms
    if strategy == "latency_greedy":
        return (remaining, getattr(req, queue_time_attr) or 0.0, req.id)
    if strategy == "discounted":
        pri = priority(remaining, est.estimate(req.record.service_type), params)
        return (-pri, getattr(req, queue_time_attr) or 0.0, req.id)
    raise ValueError(f"unknown dequeue strategy {strategy!r}")


def rank_queue(queue, strategy, est, params, now_ms, queue_time_attr):
    """Queue snapshot sorted best-first under the strategy."""
    return sorted(
        queue,
        key=lambda r: _order_key(r, strategy, est, params, now_ms, queue_time_attr),
    )


def select_for_dispatch(queue, strategy, est, now_ms, params=None):
    """The request the eAP strategy would dequeue, without removing it."""
    if not queue:
        return None
    params = params or PriorityParams()
    ranked = rank_queue(queue, strategy, est, params, now_ms, "eap_arrival_ms")
    return ranked[0]


def dequeue_eap(queue, strategy, est, now_ms, params=None):
    """Remove and return the highest-priority request, or None if empty."""
    head = select_for_dispatch(queue, strategy, est, now_ms, params=params)
    if head is not None:
        queue.remove(head)
    return head


class ReplicaAvailability:
    """Per-type idle capacity consumed as the drain scan hands out work."""

    def __init__(self, counts):
        self.counts = {int(w): int(c) for w, c in counts.items()}

    def take(self, w):
        if self.counts.get(w, 0) > 0:
            self.counts[w] -= 1
            return True
        return False

    def any_left(self):
        return any(c > 0 for c in self.counts.values())


class PooledAvailability:
    """Shared execution slots (the cloud runs every type)."""

    def __init__(self, slots):
        self.slots = int(slots)

    def take(self, w):
        if self.slots > 0:
            self.slots -= 1
            return True
        return False

    def any_left(self):
        return self.slots > 0


def drain_executor(queue, strategy, est, idle_replicates, now_ms, params=None):
    """Dequeue every request whose type still has an idle execution slot.

    Scans the queue best-priority-first; a request whose type has no idle
    slot is skipped and the scan proceeds to lower priorities. Removes and
    returns the selected requests in dequeue order.
    """
    if not queue:
        return []
    params = params or PriorityParams()
    avail = (
        ReplicaAvailability(idle_replicates)
        if isinstance(idle_replicates, dict)
        else idle_replicates
    )
    ranked = rank_queue(queue, strategy, est, params, now_ms, "executor_enqueue_ms")
    taken = []
    for req in ranked:
        if not avail.any_left():
            break
        if avail.take(req.record.service_type):
            taken.append(req)
    for req in taken:
        queue.remove(req)
    return taken
