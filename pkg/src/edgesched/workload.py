"""Request ingestion and synthesis.

Two sources of work: header-less CSV trace files (six columns:
arrival_ms, service_type, deadline_ms, cpu_demand, mem_demand,
input_size_kb) and four synthetic arrival patterns. Both emit a
deterministic, seeded list of Requests already bound to admitting access
points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# lifecycle states in transition order; the last two are terminal
STATUS_ORDER = (
    "queued_at_eap",
    "in_transit",
    "queued_at_executor",
    "processing",
    "completed_on_time",
    "dropped",
)
TERMINAL_STATUSES = ("completed_on_time", "dropped")

PATTERN_KINDS = ("periodic_cpu", "periodic_mem", "periodic_cpu_2x", "raw", "file")


class TraceParseError(ValueError):
    """A trace row could not be parsed; message names the line number."""


class TraceValidationError(ValueError):
    """A parsed record violates a field invariant."""


@dataclass
class TraceRecord:
    arrival_ms: int
    service_type: int
    deadline_ms: int
    cpu_demand: float  # millicores per processing occupancy
    mem_demand: float  # MB
    input_size_kb: float

    def validate(self, w_max=None):
        if self.arrival_ms < 0:
            raise TraceValidationError(f"arrival_ms {self.arrival_ms} < 0")
        if self.service_type < 1:
            raise TraceValidationError(f"service_type {self.service_type} < 1")
        if w_max is not None and self.service_type > w_max:
            raise TraceValidationError(
                f"service_type {self.service_type} > W={w_max}"
            )
        if self.deadline_ms <= 0:
            raise TraceValidationError(f"deadline_ms {self.deadline_ms} <= 0")
        if self.cpu_demand <= 0:
            raise TraceValidationError(f"cpu_demand {self.cpu_demand} <= 0")
        if self.mem_demand <= 0:
            raise TraceValidationError(f"mem_demand {self.mem_demand} <= 0")
        if self.input_size_kb < 0:
            raise TraceValidationError(f"input_size_kb {self.input_size_kb} < 0")


@dataclass
class Request:
    """One service request and its lifecycle timestamps (all ms)."""

    id: int
    record: TraceRecord
    eap_id: int
    status: str = "queued_at_eap"
    dequeue_time_ms: float | None = None  # dequeued from the eAP queue
    completion_time_ms: float | None = None
    eap_arrival_ms: float | None = None  # enqueue time at the admitting eAP
    executor_enqueue_ms: float | None = None
    exec_start_ms: float | None = None

    @property
    def deadline_at_ms(self):
        """Absolute deadline, measured from request generation."""
        return self.record.arrival_ms + self.record.deadline_ms

    @property
    def is_terminal(self):
        return self.status in TERMINAL_STATUSES

    def advance_status(self, new_status):
        old_i = STATUS_ORDER.index(self.status)
        new_i = STATUS_ORDER.index(new_status)
        if self.is_terminal or new_i < old_i:
            raise ValueError(f"illegal transition {self.status} -> {new_status}")
        self.status = new_status


@dataclass
class ArrivalPattern:
    """Synthetic arrival shape.

    periodic_cpu: request counts follow a sinusoidal rate envelope, so the
    per-frame CPU demand sum does too. periodic_mem: flat counts with the
    per-request memory demand following the envelope (CPU sum stays flat).
    periodic_cpu_2x: periodic_cpu at half the configured period. raw:
    heavy-tailed inter-arrivals and demands.
    """

    kind: str
    period_frames: int = 10
    amplitude: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PATTERN_KINDS:
            raise ValueError(f"unknown pattern kind {self.kind!r}")
        if self.kind in ("periodic_cpu", "periodic_mem", "periodic_cpu_2x"):
            if self.period_frames <= 0:
                raise ValueError("period_frames must be positive")
        if not 0.0 <= self.amplitude <= 1.0:
            raise ValueError("amplitude must be in [0, 1]")

    def effective_period(self):
        if self.kind == "periodic_cpu_2x":
            return max(1, self.period_frames // 2)
        return self.period_frames


def load_trace(path, eap_count, seed, w_max=None):
    """Parse a trace CSV into Requests ordered by arrival time.

    Admitting eAPs are assigned uniformly at random from the seed, so the
    same (path, seed) pair always yields the same stream. Raises
    TraceParseError naming the offending line on malformed rows.
    """
    if eap_count < 1:
        raise ValueError("eap_count must be >= 1")
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise TraceParseError(
                    f"line {lineno}: expected 6 fields, got {len(parts)}"
                )
            try:
                rec = TraceRecord(
                    arrival_ms=int(parts[0]),
                    service_type=int(parts[1]),
                    deadline_ms=int(parts[2]),
                    cpu_demand=float(parts[3]),
                    mem_demand=float(parts[4]),
                    input_size_kb=float(parts[5]),
                )
            except ValueError as exc:
                raise TraceParseError(f"line {lineno}: {exc}") from exc
            rec.validate(w_max=w_max)
            records.append(rec)
    records.sort(key=lambda r: r.arrival_ms)
    rng = np.random.default_rng(seed)
    eaps = rng.integers(0, eap_count, size=len(records))
    return [
        Request(id=i, record=rec, eap_id=int(eaps[i]))
        for i, rec in enumerate(records)
    ]


def classify_services(raw_types, w_count):
    """Stable raw-type -> [1, W] mapping: (raw mod W) + 1.

    Seedless by design; consecutive raw ids cover all W buckets.
    """
    if w_count < 1:
        raise ValueError("w_count must be >= 1")
    return {int(r): (int(r) % w_count) + 1 for r in raw_types}


def _rate_envelope(pattern, frame):
    period = pattern.effective_period()
    return 1.0 + pattern.amplitude * np.sin(2.0 * np.pi * frame / period)


def synthesize(
    pattern,
    duration_frames,
    base_rate,
    catalog,
    eap_count=1,
    slot_ms=250.0,
    slots_per_frame=100,
):
    """Generate a seeded request stream for one of the four patterns.

    base_rate is mean requests per slot. Per-slot request counts are
    Poisson; demand fields come from the catalog's per-type nominals with
    a seeded spread. Deadlines are drawn uniformly from the catalog's
    per-type deadline range.
    """
    if duration_frames <= 0:
        raise ValueError("duration_frames must be positive")
    if base_rate <= 0:
        raise ValueError("base_rate must be positive")
    rng = np.random.default_rng(pattern.seed)
    w_count = catalog.w_count
    requests = []
    next_id = 0

    def make_request(arrival_ms, w, cpu_scale=1.0, mem_scale=1.0):
        nonlocal next_id
        lo, hi = catalog.deadline_ms_range(w)
        deadline = int(rng.uniform(lo, hi))
        cpu = catalog.replicate_cpu(w) * rng.uniform(0.5, 1.5) * cpu_scale
        mem = catalog.replicate_mem(w) * rng.uniform(0.5, 1.5) * mem_scale
        size = catalog.input_size_kb(w) * rng.uniform(0.5, 1.5)
        rec = TraceRecord(
            arrival_ms=int(arrival_ms),
            service_type=w,
            deadline_ms=max(1, deadline),
            cpu_demand=float(cpu),
            mem_demand=float(mem),
            input_size_kb=float(size),
        )
        req = Request(id=next_id, record=rec, eap_id=int(rng.integers(0, eap_count)))
        next_id += 1
        return req

    if pattern.kind in ("periodic_cpu", "periodic_mem", "periodic_cpu_2x"):
        for frame in range(duration_frames):
            env = _rate_envelope(pattern, frame)
            for slot in range(slots_per_frame):
                slot_start = (frame * slots_per_frame + slot) * slot_ms
                if pattern.kind == "periodic_mem":
                    count = rng.poisson(base_rate)
                else:
                    count = rng.poisson(base_rate * env)
                for _ in range(count):
                    arrival = slot_start + rng.uniform(0.0, slot_ms)
                    w = int(rng.integers(1, w_count + 1))
                    if pattern.kind == "periodic_mem":
                        requests.append(make_request(arrival, w, mem_scale=env))
                    else:
                        requests.append(make_request(arrival, w))
    elif pattern.kind == "raw":
        horizon_ms = duration_frames * slots_per_frame * slot_ms
        mean_gap = slot_ms / base_rate
        # lognormal inter-arrivals and demand spreads give the heavy tail
        sigma = 1.2
        mu = np.log(mean_gap) - 0.5 * sigma * sigma
        t = 0.0
        while True:
            t += rng.lognormal(mu, sigma)
            if t >= horizon_ms:
                break
            w = int(rng.integers(1, w_count + 1))
            heavy = min(rng.lognormal(0.0, 0.6), 4.0)
            requests.append(make_request(t, w, cpu_scale=heavy, mem_scale=heavy))
    else:
        raise ValueError(f"pattern kind {pattern.kind!r} is not synthesizable")

    requests.sort(key=lambda r: (r.record.arrival_ms, r.id))
    for i, req in enumerate(requests):
        req.id = i
    return requests
