"""MAC-layer configuration, timing helpers and arrival processes.

The event-driven engine lives in engine.py; this module owns the pieces that
are meaningful on their own: DCF timing arithmetic, contention domains,
backoff draws, and the Poisson arrival model (both the incremental form and
the pre-generated schedule the engine consumes).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .phy import BASIC_RATE_BPS, PhyConfig, dbm_to_mw
from .topology import NetworkConfig, Topology

__all__ = [
    "MacConfig",
    "Frame",
    "NodeQueueState",
    "frame_airtime",
    "airtime_us",
    "collision_cycle_time",
    "contention_domain",
    "contention_domains",
    "draw_backoff",
    "next_cw",
    "enqueue_arrivals",
    "ArrivalSchedule",
    "build_arrival_schedules",
]

US_PER_S = 1_000_000


@dataclass(frozen=True)
class MacConfig:
    """DCF timing and framing parameters (times in microseconds)."""

    slot_time_us: int = 20
    sifs_us: int = 10
    difs_us: int = 20
    cca_time_us: int = 15
    cw_min: int = 32
    cw_max: int = 1024
    retry_limit: int = 7
    buffer_size: int = 20
    mac_header_bytes: int = 34
    rts_bytes: int = 20
    cts_bytes: int = 14
    ack_bytes: int = 14
    probe_req_bytes: int = 20
    probe_res_bytes: int = 20
    basic_rate_bps: float = BASIC_RATE_BPS
    packet_min_bytes: int = 1400
    packet_max_bytes: int = 1500
    mean_packet_bytes: float = 1460.0  # nominal frame size F for reporting
    arrival_rate_per_slot: float = 1.0
    use_rts_cts: bool = True
    collision_model: str = "mean_sinr"  # or "min_sinr"
    refade_per_frame: bool = False

    def validate(self) -> None:
        if self.slot_time_us <= 0 or self.sifs_us <= 0 or self.difs_us <= 0:
            raise ValueError("slot_time_us/sifs_us/difs_us: must be positive")
        if self.cw_min < 1 or self.cw_max < self.cw_min:
            raise ValueError("cw_min/cw_max: need 1 <= cw_min <= cw_max")
        if self.retry_limit < 0:
            raise ValueError("retry_limit: must be non-negative")
        if self.buffer_size < 1:
            raise ValueError("buffer_size: must be at least 1")
        if not 0 < self.packet_min_bytes <= self.packet_max_bytes:
            raise ValueError("packet size range: need 0 < min <= max")
        if self.mean_packet_bytes <= 0:
            raise ValueError("mean_packet_bytes: must be positive")
        if self.arrival_rate_per_slot <= 0.0:
            raise ValueError("arrival_rate_per_slot: must be positive")
        if self.collision_model not in ("mean_sinr", "min_sinr"):
            raise ValueError("collision_model: must be 'mean_sinr' or 'min_sinr'")


@dataclass
class Frame:
    """A queued downlink data frame."""

    sta: int
    payload_bytes: int
    arrival_us: int
    first_contention_us: int = -1
    retries: int = 0

    def frame_bits(self, cfg: MacConfig) -> int:
        return (self.payload_bytes + cfg.mac_header_bytes) * 8


def frame_airtime(frame_bits: float, rate_bps: float) -> float:
    """Time on air in seconds for a frame at a PHY rate (exact division)."""
    if frame_bits <= 0.0:
        raise ValueError("frame_bits must be positive")
    if rate_bps <= 0.0:
        raise ValueError("rate_bps must be positive")
    return frame_bits / rate_bps


def airtime_us(frame_bits: float, rate_bps: float) -> int:
    """Engine tick duration: airtime rounded up to a whole microsecond."""
    return int(math.ceil(frame_airtime(frame_bits, rate_bps) * US_PER_S))


def collision_cycle_time(
    data_airtime_s: float, cfg: MacConfig, cw: Optional[int] = None
) -> float:
    """Expected post-collision cycle length in seconds.

    DIFS + (cw/2) backoff slots + the data airtime + SIFS + ACK at the basic
    rate. ``cw`` defaults to the maximum contention window.
    """
    if data_airtime_s <= 0.0:
        raise ValueError("data_airtime_s must be positive")
    window = cfg.cw_max if cw is None else cw
    backoff_s = (window / 2.0) * cfg.slot_time_us / US_PER_S
    ack_s = cfg.ack_bytes * 8 / cfg.basic_rate_bps
    return (
        cfg.difs_us / US_PER_S + backoff_s + data_airtime_s + cfg.sifs_us / US_PER_S + ack_s
    )


def contention_domain(
    ap: int,
    topology: Topology,
    phy_config: PhyConfig,
    net_config: NetworkConfig,
) -> frozenset[int]:
    """Co-channel APs whose mean-gain signal at this AP exceeds the CCA level.

    Deterministic (mean gain), so the domain is static for the scenario and
    matches what live energy sensing between APs will report.
    """
    distances = topology.ap_distance_matrix()[ap]
    channel = topology.ap_channel[ap]
    threshold_mw = dbm_to_mw(phy_config.cca_threshold_dbm)
    members = []
    for m in range(topology.num_aps):
        if m == ap or topology.ap_channel[m] != channel:
            continue
        d = max(float(distances[m]), 1.0)
        power = (
            net_config.ap_tx_power_mw
            * net_config.gain_mean
            * d ** (-net_config.path_loss_exponent)
        )
        if power > threshold_mw:
            members.append(m)
    return frozenset(members)


def contention_domains(
    topology: Topology, phy_config: PhyConfig, net_config: NetworkConfig
) -> list[frozenset[int]]:
    return [
        contention_domain(j, topology, phy_config, net_config)
        for j in range(topology.num_aps)
    ]


def draw_backoff(cw: int, rng: random.Random) -> int:
    """Uniform integer slot count in [0, cw)."""
    if cw < 1:
        raise ValueError("contention window must be at least 1")
    return rng.randrange(cw)


def next_cw(cw: int, success: bool, cfg: MacConfig) -> int:
    """Contention-window evolution: reset on success, double on failure."""
    if success:
        return cfg.cw_min
    return min(cw * 2, cfg.cw_max)


@dataclass
class NodeQueueState:
    """Arrival/queue bookkeeping for one AP (contract-level form)."""

    queue: list[Frame] = field(default_factory=list)
    arrived: int = 0
    buffer_dropped: int = 0


def enqueue_arrivals(
    state: NodeQueueState,
    elapsed_slots: float,
    now_us: int,
    cfg: MacConfig,
    rng: random.Random,
) -> NodeQueueState:
    """Poisson arrivals over an elapsed interval, with a finite buffer.

    Draws the arrival count for the interval, uniform payload sizes, and
    drops whatever the buffer cannot hold. Destination selection is left to
    the caller (it depends on the association map).
    """
    if elapsed_slots < 0.0:
        raise ValueError("elapsed_slots cannot be negative")
    mean = elapsed_slots * cfg.arrival_rate_per_slot
    count = _poisson_draw(mean, rng)
    state.arrived += count
    for _ in range(count):
        if len(state.queue) >= cfg.buffer_size:
            state.buffer_dropped += 1
            continue
        payload = rng.randint(cfg.packet_min_bytes, cfg.packet_max_bytes)
        state.queue.append(Frame(sta=-1, payload_bytes=payload, arrival_us=now_us))
    return state


def _poisson_draw(mean: float, rng: random.Random) -> int:
    """Knuth for small means, normal approximation for large ones."""
    if mean <= 0.0:
        return 0
    if mean > 700.0:
        return max(0, int(round(rng.gauss(mean, math.sqrt(mean)))))
    limit = math.exp(-mean)
    count = 0
    product = rng.random()
    while product > limit:
        count += 1
        product *= rng.random()
    return count


@dataclass
class ArrivalSchedule:
    """Pre-generated arrival stream for one AP.

    times_us is sorted; sizes are payload bytes; dest_u are uniforms mapped
    onto the (strategy-dependent) associated STA list at run time, which
    keeps arrival times, sizes and destination draws identical across
    strategies for the paired-sample design.
    """

    times_us: np.ndarray
    sizes: np.ndarray
    dest_u: np.ndarray

    def count_until(self, t_us: int) -> int:
        return int(np.searchsorted(self.times_us, t_us, side="right"))


def build_arrival_schedules(
    num_aps: int,
    duration_us: int,
    cfg: MacConfig,
    seed_seq: np.random.SeedSequence,
) -> list[ArrivalSchedule]:
    """One independent schedule per AP covering [0, duration_us]."""
    rate_per_us = cfg.arrival_rate_per_slot / cfg.slot_time_us
    expected = duration_us * rate_per_us
    margin = int(expected + 6.0 * math.sqrt(expected + 1.0) + 16.0)
    schedules = []
    for child in seed_seq.spawn(num_aps):
        rng = np.random.Generator(np.random.PCG64(child))
        gaps = rng.exponential(scale=1.0 / rate_per_us, size=margin)
        times = np.cumsum(gaps)
        while times.size and times[-1] < duration_us:
            extra = rng.exponential(scale=1.0 / rate_per_us, size=margin // 4 + 16)
            times = np.concatenate([times, times[-1] + np.cumsum(extra)])
        times_us = np.ceil(times[times < duration_us]).astype(np.int64)
        n = times_us.size
        sizes = rng.integers(
            cfg.packet_min_bytes, cfg.packet_max_bytes, size=n, endpoint=True
        ).astype(np.int32)
        dest_u = rng.random(size=n)
        schedules.append(
            ArrivalSchedule(times_us=times_us, sizes=sizes, dest_u=dest_u)
        )
    return schedules
