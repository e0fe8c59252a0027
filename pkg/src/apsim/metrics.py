"""Scenario-level reductions: throughput, per-link CDF, frame delay.

All reductions run over the measured phase only (association is frozen
before measurement starts). Delay is head-of-line to ACK completion; frames
dropped at the buffer or at the retry limit contribute to drop counts, never
to delay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LinkStats",
    "ScenarioResult",
    "aggregate_throughput",
    "throughput_cdf",
    "mean_frame_delay",
]


@dataclass
class LinkStats:
    """Per (AP, STA) delivery accounting."""

    ap: int
    sta: int
    rate_mbps: float
    delivered_frames: int = 0
    delivered_bits: int = 0
    attempt_frames: int = 0
    retry_dropped: int = 0
    delay_sum_s: float = 0.0
    delays_s: list[float] = field(default_factory=list)


@dataclass
class ScenarioResult:
    """Everything a single measured run produces."""

    strategy: str
    seed: int
    duration_s: float
    links: list[LinkStats]
    arrived: int = 0
    buffer_dropped: int = 0
    retry_dropped: int = 0
    delivered: int = 0
    residual: int = 0  # still queued or in flight at the end
    exclusivity_violations: int = 0
    associated_stas: int = 0
    unassociated_stas: int = 0

    def conservation_holds(self) -> bool:
        return (
            self.arrived
            == self.delivered + self.buffer_dropped + self.retry_dropped + self.residual
        )

    @property
    def drop_rate(self) -> float:
        if self.arrived == 0:
            return 0.0
        return (self.buffer_dropped + self.retry_dropped) / self.arrived


def aggregate_throughput(result: ScenarioResult) -> float:
    """Sum of delivered payload bits over the measured duration, in Mbps."""
    if result.duration_s <= 0.0:
        raise ValueError("measured duration must be positive")
    total_bits = sum(link.delivered_bits for link in result.links)
    return total_bits / result.duration_s / 1e6


def per_sta_throughput(result: ScenarioResult) -> np.ndarray:
    """Throughput in Mbps per associated STA (zeros included), sorted."""
    values = [
        link.delivered_bits / result.duration_s / 1e6 for link in result.links
    ]
    return np.sort(np.asarray(values, dtype=float))


def throughput_cdf(result: ScenarioResult) -> list[tuple[float, float]]:
    """Empirical CDF of per-STA throughput at one-percentile granularity.

    Returns 101 (percentile, value) points using nearest-rank percentiles;
    the value sequence is non-decreasing by construction.
    """
    values = per_sta_throughput(result)
    if values.size == 0:
        raise ValueError("no associated links; CDF undefined")
    n = values.size
    points: list[tuple[float, float]] = []
    for p in range(101):
        if p == 0:
            rank = 1
        else:
            rank = math.ceil(p * n / 100.0)
        points.append((float(p), float(values[rank - 1])))
    return points


def mean_frame_delay(result: ScenarioResult) -> float:
    """Mean delivered-frame delay in seconds; NaN when nothing was delivered."""
    total = sum(link.delay_sum_s for link in result.links)
    count = sum(link.delivered_frames for link in result.links)
    if count == 0:
        return math.nan
    return total / count
