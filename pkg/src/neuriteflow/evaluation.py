"""Accuracy metrics and wall-clock benchmarking.

MAE here is the root-mean-square nodal error (the convention this
pipeline reports); MRE normalises it by the ground-truth range, in
percent.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRange, EmptyInput, LengthMismatch

__all__ = [
    "mae",
    "mre",
    "MetricReport",
    "metric_report",
    "error_field_csv",
    "TimingReport",
    "benchmark",
]


def mae(pred, truth) -> float:
    """Root-mean-square nodal error: sqrt(mean((pred - truth)^2))."""
    pred = np.asarray(pred, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred.size == 0:
        raise EmptyInput("empty prediction")
    if pred.shape != truth.shape:
        raise LengthMismatch(f"{pred.shape} vs {truth.shape}")
    d = pred - truth
    return float(np.sqrt(np.mean(d * d)))


def mre(pred, truth) -> float:
    """mae normalised by the ground-truth range, in percent."""
    truth = np.asarray(truth, dtype=float).ravel()
    value = mae(pred, truth)
    rng = float(truth.max() - truth.min())
    if rng <= 0:
        raise DegenerateRange("ground truth has zero range")
    return 100.0 * value / rng


@dataclass
class MetricReport:
    mae: float
    mre_percent: float
    per_node_abs_error: np.ndarray
    truth_max: float
    truth_min: float
    oracle_seconds: float | None = None
    surrogate_seconds: float | None = None

    @property
    def speedup(self) -> float | None:
        if not self.oracle_seconds or not self.surrogate_seconds:
            return None
        return self.oracle_seconds / self.surrogate_seconds

    def to_text(self) -> str:
        lines = [
            f"mae: {self.mae:.6g}",
            f"mre_percent: {self.mre_percent:.4f}",
            f"truth_range: [{self.truth_min:.6g}, {self.truth_max:.6g}]",
            f"max_abs_error: {self.per_node_abs_error.max():.6g}",
        ]
        if self.oracle_seconds is not None:
            lines.append(f"oracle_seconds: {self.oracle_seconds:.4f}")
        if self.surrogate_seconds is not None:
            lines.append(f"surrogate_seconds: {self.surrogate_seconds:.4f}")
        if self.speedup is not None:
            lines.append(f"speedup: {self.speedup:.2f}")
        return "\n".join(lines) + "\n"


def metric_report(pred, truth) -> MetricReport:
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return MetricReport(
        mae=mae(pred, truth),
        mre_percent=mre(pred, truth),
        per_node_abs_error=np.abs(pred - truth).reshape(len(pred), -1).max(axis=1),
        truth_max=float(truth.max()),
        truth_min=float(truth.min()),
    )


def error_field_csv(g, abs_error: np.ndarray) -> str:
    """Nodal error field as CSV (node_id, x, y, z, abs_error)."""
    lines = ["node_id,x,y,z,abs_error"]
    for i in range(g.n_nodes):
        x, y, z = g.positions[i]
        lines.append(f"{i},{x!r},{y!r},{z!r},{abs_error[i]!r}")
    return "\n".join(lines) + "\n"


@dataclass
class TimingReport:
    """Median-of-n wall-clock comparison at a shared horizon."""

    oracle_seconds: float
    surrogate_seconds: float
    horizon_steps: int
    runs: int
    oracle_samples: list[float] = field(default_factory=list)
    surrogate_samples: list[float] = field(default_factory=list)

    @property
    def speedup(self) -> float:
        return self.oracle_seconds / self.surrogate_seconds

    def to_text(self) -> str:
        return (
            f"horizon_steps: {self.horizon_steps}\n"
            f"runs: {self.runs}\n"
            f"oracle_seconds: {self.oracle_seconds:.4f}\n"
            f"surrogate_seconds: {self.surrogate_seconds:.4f}\n"
            f"speedup: {self.speedup:.2f}\n"
        )


def _median_time(fn, runs: int) -> tuple[float, list[float]]:
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples)), samples


def benchmark(oracle_fn, surrogate_fn, horizon_steps: int, runs: int = 5) -> TimingReport:
    """Time the reference solve against the surrogate rollout.

    Both callables must cover the same horizon; the caller pins
    single-threaded execution.
    """
    oracle_s, oracle_all = _median_time(oracle_fn, runs)
    surrogate_s, surrogate_all = _median_time(surrogate_fn, runs)
    return TimingReport(
        oracle_seconds=oracle_s,
        surrogate_seconds=surrogate_s,
        horizon_steps=horizon_steps,
        runs=runs,
        oracle_samples=oracle_all,
        surrogate_samples=surrogate_all,
    )
