"""Node deployment, channel assignment and the propagation model.

Received power follows P_t * G * d^-alpha with an exponentially distributed
power gain G (block fading: one draw per AP-STA link per scenario) and
distances floored at 1 m before the power law is applied. AP-to-AP
propagation uses the mean gain deterministically so that contention domains
and live carrier sensing always agree.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

__all__ = [
    "ConfigError",
    "NetworkConfig",
    "Topology",
    "assign_channels",
    "received_power",
    "in_range",
    "deploy",
    "rx_power_matrix",
    "ap_rx_power_matrix",
    "dump_topology",
    "load_topology",
]

CHANNEL_POLICIES = ("round_robin", "uniform_random")


class ConfigError(ValueError):
    """A configuration field fails validation; the message names the field."""


@dataclass(frozen=True)
class NetworkConfig:
    """Deployment geometry, radio powers and the fading model.

    ``gain_mean`` is the mean of the exponential power gain. The default
    folds a fixed reference loss at 1 m (about -43 dB, a plausible indoor
    2.4 GHz budget with wall penetration) into a mean-1 Rayleigh fading
    power, so received powers carry a realistic link budget; set it to 1.0
    for a bare mean-1 gain.
    """

    area_width_m: float = 1000.0
    area_height_m: float = 1000.0
    num_aps: int = 50
    num_stas: int = 400
    num_channels: int = 3
    ap_tx_power_mw: float = 100.0
    sta_tx_power_mw: float = 15.85
    coverage_radius_m: float = 50.0
    path_loss_exponent: float = 3.0
    gain_mean: float = 5e-5
    channel_policy: str = "round_robin"
    require_channel_balance: bool = False
    rng_seed: int = 1

    def validate(self) -> None:
        if self.area_width_m <= 0.0:
            raise ConfigError("area_width_m: must be positive")
        if self.area_height_m <= 0.0:
            raise ConfigError("area_height_m: must be positive")
        if self.num_aps < 1:
            raise ConfigError("num_aps: must be at least 1")
        if self.num_stas < 0:
            raise ConfigError("num_stas: must be non-negative")
        if self.num_channels < 1:
            raise ConfigError("num_channels: must be at least 1")
        if self.ap_tx_power_mw <= 0.0:
            raise ConfigError("ap_tx_power_mw: must be positive")
        if self.sta_tx_power_mw <= 0.0:
            raise ConfigError("sta_tx_power_mw: must be positive")
        if self.coverage_radius_m <= 0.0:
            raise ConfigError("coverage_radius_m: must be positive")
        if self.path_loss_exponent <= 0.0:
            raise ConfigError("path_loss_exponent: must be positive")
        if self.gain_mean <= 0.0:
            raise ConfigError("gain_mean: must be positive")
        if self.channel_policy not in CHANNEL_POLICIES:
            raise ConfigError(
                f"channel_policy: {self.channel_policy!r} not in {CHANNEL_POLICIES}"
            )
        if (
            self.require_channel_balance
            and self.channel_policy == "round_robin"
            and self.num_channels > self.num_aps
        ):
            raise ConfigError(
                "num_channels: exceeds num_aps with strict channel balance required"
            )


@dataclass
class Topology:
    """A deployed scenario: positions, channels, distances, link gains."""

    ap_positions: np.ndarray  # (M, 2) metres
    sta_positions: np.ndarray  # (N, 2) metres
    ap_channel: np.ndarray  # (M,) ints in [0, num_channels)
    link_distance: np.ndarray  # (N, M) metres
    link_gain: np.ndarray  # (N, M) drawn power gains

    @property
    def num_aps(self) -> int:
        return int(self.ap_positions.shape[0])

    @property
    def num_stas(self) -> int:
        return int(self.sta_positions.shape[0])

    def ap_distance_matrix(self) -> np.ndarray:
        """(M, M) pairwise AP distances in metres."""
        diff = self.ap_positions[:, None, :] - self.ap_positions[None, :, :]
        return np.hypot(diff[..., 0], diff[..., 1])


def assign_channels(
    num_aps: int,
    num_channels: int,
    policy: str = "round_robin",
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Channel index per AP.

    Round-robin keeps per-channel counts within one of each other; the
    uniform-random policy draws independently and needs an rng.
    """
    if policy == "round_robin":
        return np.arange(num_aps, dtype=np.int64) % num_channels
    if policy == "uniform_random":
        if rng is None:
            raise ValueError("uniform_random channel policy requires an rng")
        return rng.integers(0, num_channels, size=num_aps, dtype=np.int64)
    raise ConfigError(f"channel_policy: unknown policy {policy!r}")


def received_power(
    tx_power_mw: float, gain: float, distance_m: float, alpha: float
) -> float:
    """P_t * G * max(d, 1)^-alpha in mW.

    Distances inside 1 m are floored to 1 m so the power law cannot amplify;
    a non-positive distance is a degenerate geometry error.
    """
    if distance_m <= 0.0:
        raise ValueError("distance must be positive")
    if tx_power_mw < 0.0 or gain < 0.0:
        raise ValueError("power and gain cannot be negative")
    d = max(distance_m, 1.0)
    return tx_power_mw * gain * d ** (-alpha)


def in_range(sta: int, ap: int, topology: Topology, config: NetworkConfig) -> bool:
    """True iff the STA sits inside the AP's coverage disk."""
    return bool(topology.link_distance[sta, ap] <= config.coverage_radius_m)


def deploy(config: NetworkConfig, rng: Optional[np.random.Generator] = None) -> Topology:
    """Draw a scenario: uniform positions, channels, block-fading link gains.

    STAs are placed uniformly over the whole area; a STA with no AP inside
    its coverage disk simply ends up unassociated later on, it is not
    redrawn.
    """
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)

    ap_positions = np.column_stack(
        (
            rng.uniform(0.0, config.area_width_m, size=config.num_aps),
            rng.uniform(0.0, config.area_height_m, size=config.num_aps),
        )
    )
    sta_positions = np.column_stack(
        (
            rng.uniform(0.0, config.area_width_m, size=config.num_stas),
            rng.uniform(0.0, config.area_height_m, size=config.num_stas),
        )
    )
    ap_channel = assign_channels(
        config.num_aps, config.num_channels, config.channel_policy, rng
    )
    diff = sta_positions[:, None, :] - ap_positions[None, :, :]
    link_distance = np.hypot(diff[..., 0], diff[..., 1])
    link_gain = rng.exponential(
        scale=config.gain_mean, size=(config.num_stas, config.num_aps)
    )
    return Topology(
        ap_positions=ap_positions,
        sta_positions=sta_positions,
        ap_channel=ap_channel,
        link_distance=link_distance,
        link_gain=link_gain,
    )


def rx_power_matrix(topology: Topology, config: NetworkConfig) -> np.ndarray:
    """(N, M) downlink received power in mW with the drawn link gains."""
    d = np.maximum(topology.link_distance, 1.0)
    return config.ap_tx_power_mw * topology.link_gain * d ** (-config.path_loss_exponent)


def ap_rx_power_matrix(topology: Topology, config: NetworkConfig) -> np.ndarray:
    """(M, M) AP-to-AP received power in mW at the deterministic mean gain.

    The diagonal is zeroed; a node does not sense itself.
    """
    d = np.maximum(topology.ap_distance_matrix(), 1.0)
    power = config.ap_tx_power_mw * config.gain_mean * d ** (-config.path_loss_exponent)
    np.fill_diagonal(power, 0.0)
    return power


def dump_topology(topology: Topology, path: str | Path) -> None:
    """Write a replayable text dump: node records plus link-gain records."""
    lines = ["# apsim topology v1"]
    for j in range(topology.num_aps):
        x, y = topology.ap_positions[j]
        lines.append(f"ap {j} {float(x)!r} {float(y)!r} {int(topology.ap_channel[j])}")
    for i in range(topology.num_stas):
        x, y = topology.sta_positions[i]
        lines.append(f"sta {i} {float(x)!r} {float(y)!r} -")
    for i in range(topology.num_stas):
        for j in range(topology.num_aps):
            lines.append(f"gain {i} {j} {float(topology.link_gain[i, j])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_topology(path: str | Path) -> Topology:
    """Rebuild a Topology from a dump; distances are recomputed exactly."""
    aps: dict[int, tuple[float, float, int]] = {}
    stas: dict[int, tuple[float, float]] = {}
    gains: dict[tuple[int, int], float] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        kind, *rest = line.split()
        if kind == "ap":
            idx, x, y, chan = rest
            aps[int(idx)] = (float(x), float(y), int(chan))
        elif kind == "sta":
            idx, x, y, _ = rest
            stas[int(idx)] = (float(x), float(y))
        elif kind == "gain":
            i, j, g = rest
            gains[(int(i), int(j))] = float(g)
        else:
            raise ValueError(f"unknown record kind {kind!r} in topology dump")
    num_aps, num_stas = len(aps), len(stas)
    ap_positions = np.array([aps[j][:2] for j in range(num_aps)], dtype=float).reshape(
        num_aps, 2
    )
    ap_channel = np.array([aps[j][2] for j in range(num_aps)], dtype=np.int64)
    sta_positions = np.array([stas[i] for i in range(num_stas)], dtype=float).reshape(
        num_stas, 2
    )
    link_gain = np.zeros((num_stas, num_aps), dtype=float)
    for (i, j), g in gains.items():
        link_gain[i, j] = g
    diff = sta_positions[:, None, :] - ap_positions[None, :, :]
    link_distance = np.hypot(diff[..., 0], diff[..., 1])
    return Topology(
        ap_positions=ap_positions,
        sta_positions=sta_positions,
        ap_channel=ap_channel,
        link_distance=link_distance,
        link_gain=link_gain,
    )
