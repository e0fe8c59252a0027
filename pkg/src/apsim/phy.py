"""Physical-layer model: power bookkeeping, SINR, rate lookup, carrier sense.

Powers are handled in milliwatts throughout; dBm only appears at the
configuration surface and in helpers. SINR is a linear ratio internally and
is converted to dB for rate lookups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

__all__ = [
    "PhyConfig",
    "InterferenceSample",
    "MeasurementWindow",
    "RATE_TABLE",
    "BASIC_RATE_BPS",
    "BASIC_RATE_FLOOR_DB",
    "dbm_to_mw",
    "mw_to_dbm",
    "instantaneous_interference",
    "windowed_interference",
    "sinr",
    "sinr_db",
    "rate_for_sinr",
    "required_sinr_db",
    "senses_busy",
]

# SINR thresholds (dB, inclusive lower edge) and the data rate they unlock,
# in Mbps. Brackets are half-open: a link at exactly the upper edge of one
# bracket already earns the next rate. Below the first edge no rate is
# feasible.
RATE_TABLE: tuple[tuple[float, float], ...] = (
    (6.0, 6.0),
    (7.8, 9.0),
    (9.0, 12.0),
    (10.8, 18.0),
    (17.0, 24.0),
    (18.8, 36.0),
    (24.0, 48.0),
    (24.6, 54.0),
)

# Control frames (RTS/CTS/ACK/probes) go out at the 1 Mbps basic rate and
# are decodable down to the lowest SINR edge of the table.
BASIC_RATE_BPS: float = 1e6
BASIC_RATE_FLOOR_DB: float = RATE_TABLE[0][0]


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


def mw_to_dbm(mw: float) -> float:
    if mw <= 0.0:
        raise ValueError("power must be positive to express in dBm")
    return 10.0 * math.log10(mw)


@dataclass(frozen=True)
class PhyConfig:
    """Receiver-side thresholds and the noise floor.

    ``sinr_threshold_db`` is the association feasibility threshold; ``None``
    means the per-STA rule (minimum over the STA's measured candidates) is
    applied by the caller.
    """

    cca_threshold_dbm: float = -86.0
    noise_floor_dbm: float = -90.0
    receiver_sensitivity_dbm: float = -90.96
    sinr_threshold_db: Optional[float] = None

    @property
    def cca_threshold_mw(self) -> float:
        return dbm_to_mw(self.cca_threshold_dbm)

    @property
    def noise_floor_mw(self) -> float:
        return dbm_to_mw(self.noise_floor_dbm)

    @property
    def receiver_sensitivity_mw(self) -> float:
        return dbm_to_mw(self.receiver_sensitivity_dbm)

    def validate(self) -> None:
        if self.noise_floor_dbm >= 30.0:
            raise ValueError("noise_floor_dbm: implausibly high noise floor")
        if self.receiver_sensitivity_dbm >= self.cca_threshold_dbm + 30.0:
            raise ValueError("receiver_sensitivity_dbm: above CCA threshold by >30 dB")


@dataclass(frozen=True)
class InterferenceSample:
    """One overheard interferer frame: received power and time on air."""

    power_mw: float
    frame_bits: float
    rate_bps: float

    @property
    def airtime_s(self) -> float:
        return self.frame_bits / self.rate_bps


@dataclass
class MeasurementWindow:
    """Samples gathered while a STA listens on a candidate's channel."""

    duration_s: float
    samples: list[InterferenceSample] = field(default_factory=list)

    def add(self, sample: InterferenceSample) -> None:
        self.samples.append(sample)


def instantaneous_interference(powers_mw: Iterable[float]) -> float:
    """Sum of concurrently received co-channel powers (mW)."""
    total = 0.0
    for p in powers_mw:
        if p < 0.0:
            raise ValueError("received power cannot be negative")
        total += p
    return total


def windowed_interference(window: MeasurementWindow) -> float:
    """Time-averaged interference power over a listening window (mW).

    Each overheard frame contributes its received power weighted by its
    airtime; the sum is normalized by the window duration. A frame that
    occupies the whole window at power P therefore averages to exactly P.
    """
    if window.duration_s <= 0.0:
        raise ValueError("measurement window duration must be positive")
    energy = 0.0
    for s in window.samples:
        energy += s.power_mw * s.airtime_s
    return energy / window.duration_s


def sinr(received_mw: float, interference_mw: float, noise_mw: float) -> float:
    """Linear signal-to-interference-plus-noise ratio."""
    if received_mw < 0.0 or interference_mw < 0.0:
        raise ValueError("powers cannot be negative")
    denom = interference_mw + noise_mw
    if denom <= 0.0:
        raise ValueError("interference plus noise must be positive")
    return received_mw / denom


def sinr_db(received_mw: float, interference_mw: float, noise_mw: float) -> float:
    value = sinr(received_mw, interference_mw, noise_mw)
    if value <= 0.0:
        return -math.inf
    return 10.0 * math.log10(value)


def rate_for_sinr(sinr_value_db: float) -> Optional[float]:
    """Map a SINR in dB to the supported data rate in Mbps.

    Returns ``None`` when the link cannot sustain any rate (below the lowest
    bracket edge). Edges are inclusive on the low side.
    """
    rate: Optional[float] = None
    for edge_db, mbps in RATE_TABLE:
        if sinr_value_db >= edge_db:
            rate = mbps
        else:
            break
    return rate


def required_sinr_db(rate_mbps: float) -> float:
    """Lower SINR edge (dB) of the bracket that unlocks ``rate_mbps``."""
    for edge_db, mbps in RATE_TABLE:
        if mbps == rate_mbps:
            return edge_db
    raise ValueError(f"unknown rate: {rate_mbps} Mbps")


def senses_busy(sensed_power_mw: float, cca_threshold_dbm: float) -> bool:
    """Energy-detection carrier sense: busy iff strictly above the threshold."""
    if sensed_power_mw < 0.0:
        raise ValueError("sensed power cannot be negative")
    return sensed_power_mw > dbm_to_mw(cca_threshold_dbm)
