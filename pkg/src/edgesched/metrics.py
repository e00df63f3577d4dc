"""Evaluation counters: per-frame and long-run throughput rates and costs.

Per-frame throughput attributes completions to the frame they finish in,
so a backlogged frame can transiently exceed 1; that is intentional and
documented rather than clipped. Run-level throughput divides total on-time
completions by total arrivals after the end-of-run drain resolves every
in-flight request.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FRAME_CSV_COLUMNS = (
    "frame",
    "arrived",
    "completed_edge",
    "completed_cloud",
    "dropped",
    "phi_f",
    "cost_kb",
    "image_mb",
    "util_mean",
    "util_std",
    "reward_mean",
)


@dataclass
class FrameMetrics:
    frame_index: int
    arrived: int
    completed_edge: int
    completed_cloud: int
    dropped: int
    phi_f: float
    cost_dispatch_kb: float
    cost_image_pull_mb: float
    util_mean: float
    util_std: float
    reward_mean: float

    def csv_row(self):
        return (
            f"{self.frame_index},{self.arrived},{self.completed_edge},"
            f"{self.completed_cloud},{self.dropped},{self.phi_f:.10g},"
            f"{self.cost_dispatch_kb:.10g},{self.cost_image_pull_mb:.10g},"
            f"{self.util_mean:.10g},{self.util_std:.10g},{self.reward_mean:.10g}"
        )


@dataclass
class RunMetrics:
    arrived: int
    completed_on_time: int
    dropped: int
    phi_prime: float
    cost_dispatch_kb: float
    cost_image_pull_mb: float

    @property
    def total_cost_note(self):
        return f"{self.cost_dispatch_kb:.10g} kb + {self.cost_image_pull_mb:.10g} MB"


def load_std(env):
    """Population std of per-node CPU and memory utilization (2N values)."""
    cpu, mem = env.utilization_vectors()
    return float(np.std(np.concatenate([cpu, mem])))


def load_std_from_utils(cpu_utils, mem_utils):
    return float(np.std(np.concatenate([cpu_utils, mem_utils])))


class MetricsAccumulator:
    """Single-writer accumulator owned by the simulation loop."""

    def __init__(self):
        self.frames = []
        self._reset_frame()
        self.run_arrived = 0
        self.run_completed = 0
        self.run_dropped = 0
        self.run_cost_kb = 0.0
        self.run_image_mb = 0.0

    def _reset_frame(self):
        self._arrived = 0
        self._edge = 0
        self._cloud = 0
        self._dropped = 0
        self._cost_kb = 0.0
        self._image_mb = 0.0
        self._util_means = []
        self._util_stds = []
        self._rewards = []
        self._slots_in_frame = 0

    def record_slot(self, outcome, reward=None):
        self._arrived += outcome.arrived
        self._edge += outcome.on_time_edge
        self._cloud += outcome.on_time_cloud
        self._dropped += outcome.violations
        self._cost_kb += outcome.forwarded_kb
        utils = np.concatenate([outcome.cpu_utils, outcome.mem_utils])
        self._util_means.append(float(np.mean(utils)))
        self._util_stds.append(float(np.std(utils)))
        if reward is not None:
            self._rewards.append(float(reward))
        self._slots_in_frame += 1
        self.run_arrived += outcome.arrived
        self.run_completed += outcome.on_time
        self.run_dropped += outcome.violations
        self.run_cost_kb += outcome.forwarded_kb

    def record_scaling(self, report):
        self._image_mb += report.image_pull_mb
        self.run_image_mb += report.image_pull_mb

    def close_frame(self, frame_index):
        """Emit this frame's metrics and reset the per-frame counters."""
        if self._slots_in_frame == 0:
            raise ValueError("close_frame called with no recorded slots")
        phi_f = (self._edge + self._cloud) / max(self._arrived, 1)
        fm = FrameMetrics(
            frame_index=frame_index,
            arrived=self._arrived,
            completed_edge=self._edge,
            completed_cloud=self._cloud,
            dropped=self._dropped,
            phi_f=phi_f,
            cost_dispatch_kb=self._cost_kb,
            cost_image_pull_mb=self._image_mb,
            util_mean=float(np.mean(self._util_means)),
            util_std=float(np.mean(self._util_stds)),
            reward_mean=float(np.mean(self._rewards)) if self._rewards else 0.0,
        )
        self.frames.append(fm)
        self._reset_frame()
        return fm

    def run_metrics(self):
        return RunMetrics(
            arrived=self.run_arrived,
            completed_on_time=self.run_completed,
            dropped=self.run_dropped,
            phi_prime=self.run_completed / max(self.run_arrived, 1),
            cost_dispatch_kb=self.run_cost_kb,
            cost_image_pull_mb=self.run_image_mb,
        )

    def mean_phi_f(self):
        if not self.frames:
            return 0.0
        return float(np.mean([f.phi_f for f in self.frames]))


def write_frames_csv(path, frames):
    """Fixed-schema per-frame CSV; column order is part of the contract."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(FRAME_CSV_COLUMNS) + "\n")
        for fm in frames:
            f.write(fm.csv_row() + "\n")


def write_learning_curve_csv(path, rows):
    """rows: (episode, mean_phi_f) pairs."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("episode,mean_phi_f\n")
        for episode, phi in rows:
            f.write(f"{episode},{phi:.10g}\n")
