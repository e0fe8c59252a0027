"""AP-selection strategies and the probe measurement campaign.

Four ways to pick a serving AP for each STA:

* ``ssf`` — strongest received beacon power among in-range APs.
* ``mpd`` — minimum mean probe-request/probe-response delay.
* ``dasa`` — maximum measured downlink SINR, estimated from probe responses
  and a windowed interference average collected on the candidate's channel.
* ``opasa`` — benchmark assignment maximizing total per-link efficiency
  under a per-STA SINR floor, solved exactly; it consumes ground-truth
  interference (per-AP busy fractions) instead of the STA's own estimate.

Strategies differ in what they know, and that knowledge also picks the PHY
rate of the resulting link: ssf/mpd rate from the interference-blind SNR,
dasa from its measured SINR, opasa from the ground-truth SINR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import ProbeRaw, ProbeWindow
from .mac import MacConfig
from .phy import RATE_TABLE, PhyConfig, rate_for_sinr
from .solver import (
    UNASSOCIATED,
    AssignmentInstance,
    solve_exact,
)
from .topology import NetworkConfig, Topology, rx_power_matrix

__all__ = [
    "STRATEGIES",
    "LinkBudget",
    "ProbeRecord",
    "AssociationMap",
    "build_link_budget",
    "ssf_select",
    "candidate_set",
    "tx_rate_mbps",
    "measure_dl_sinr",
    "dasa_select",
    "mpd_select",
    "opasa_select",
    "plan_probe_campaign",
    "true_sinr_matrix",
    "build_ssf_map",
    "build_mpd_map",
    "build_dasa_map",
    "build_opasa_map",
]

STRATEGIES = ("ssf", "mpd", "dasa", "opasa")


@dataclass(frozen=True)
class LinkBudget:
    """Static link-level quantities every strategy starts from."""

    rx_mw: np.ndarray  # (N, M) mean received power, AP -> STA
    snr_db: np.ndarray  # (N, M) interference-free SNR
    in_range: np.ndarray  # (N, M) bool, within coverage radius
    candidate: np.ndarray  # (N, M) bool, in range and above sensitivity

    def candidates(self, sta: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.candidate[sta])]


def build_link_budget(
    topology: Topology, net_cfg: NetworkConfig, phy_cfg: PhyConfig
) -> LinkBudget:
    rx = rx_power_matrix(topology, net_cfg)
    with np.errstate(divide="ignore"):
        snr = 10.0 * np.log10(rx / phy_cfg.noise_floor_mw)
    in_range = topology.link_distance <= net_cfg.coverage_radius_m
    cand = in_range & (rx >= phy_cfg.receiver_sensitivity_mw)
    return LinkBudget(rx_mw=rx, snr_db=snr, in_range=in_range, candidate=cand)


def ssf_select(sta: int, budget: LinkBudget) -> int:
    """Strongest in-range beacon; UNASSOCIATED when nothing is in range."""
    mask = budget.in_range[sta]
    if not mask.any():
        return UNASSOCIATED
    rx = np.where(mask, budget.rx_mw[sta], -1.0)
    return int(np.argmax(rx))


def candidate_set(sta: int, budget: LinkBudget) -> list[int]:
    return budget.candidates(sta)


def tx_rate_mbps(sinr_db: Optional[float]) -> float:
    """Rate the link would be configured at for a believed SINR.

    Below the lowest bracket the radio still has to pick something, so it
    falls back to the base rate (those links then fail on the air instead
    of being silently excluded).
    """
    if sinr_db is not None:
        rate = rate_for_sinr(sinr_db)
        if rate is not None:
            return rate
    return RATE_TABLE[0][1]


@dataclass
class ProbeRecord:
    """Audit record of one STA/candidate probe exchange window."""

    sta: int
    ap: int
    probe_sent_time_us: int
    response_times_us: list[int] = field(default_factory=list)
    rx_power_mw: list[float] = field(default_factory=list)
    windowed_interference_mw: float = 0.0
    probe_delay_us: float = float("nan")
    mean_probe_delay_us: float = float("nan")
    missing: bool = True


def measure_dl_sinr(
    sta: int, ap: int, raw: ProbeRaw, phy_cfg: PhyConfig
) -> tuple[Optional[float], ProbeRecord]:
    """Fold one probe window into a measured DL-SINR (dB).

    The interference term is the window-averaged power of overheard
    out-of-domain co-channel transmissions; the signal term is the mean
    received probe-response power. With no response the measurement is
    Missing (None) and the candidate is skipped by the selection rules.
    """
    window_us = raw.window_end_us - raw.window_start_us
    i_win = raw.interference_energy_mw_us / window_us if window_us > 0 else 0.0
    rec = ProbeRecord(
        sta=sta,
        ap=ap,
        probe_sent_time_us=raw.preq_sent_us,
        response_times_us=list(raw.response_times_us),
        rx_power_mw=list(raw.pres_power_mw),
        windowed_interference_mw=i_win,
    )
    if raw.pres_count == 0 or not raw.pres_power_mw:
        return None, rec
    rec.missing = False
    if raw.preq_sent_us >= 0 and raw.first_pres_us >= 0:
        rec.probe_delay_us = float(raw.first_pres_us - raw.preq_sent_us)
    rec.mean_probe_delay_us = raw.mean_delay_us
    signal = sum(raw.pres_power_mw) / len(raw.pres_power_mw)
    sinr_db = 10.0 * math.log10(signal / (i_win + phy_cfg.noise_floor_mw))
    return sinr_db, rec


def dasa_select(
    sta: int, measurements: dict[int, Optional[float]]
) -> Optional[int]:
    """Argmax of measured SINR; None means "retain the current choice".

    Missing candidates are skipped; an all-Missing set or a best candidate
    below the lowest usable bracket both fall back to the caller's SSF
    association.
    """
    best_j = None
    best = -math.inf
    for j in sorted(measurements):
        s = measurements[j]
        if s is None:
            continue
        if s > best:
            best = s
            best_j = j
    if best_j is None:
        return None
    if rate_for_sinr(best) is None:
        return None  # infeasible at every rate: keep the SSF association
    return best_j


def mpd_select(sta: int, records: dict[int, ProbeRecord]) -> Optional[int]:
    """Argmin of mean probe delay; None when every candidate stayed silent."""
    best_j = None
    best = math.inf
    for j in sorted(records):
        rec = records[j]
        if rec.missing or math.isnan(rec.mean_probe_delay_us):
            continue
        if rec.mean_probe_delay_us < best:
            best = rec.mean_probe_delay_us
            best_j = j
    return best_j


def opasa_select(
    candidates: list[list[int]],
    sinr_db: np.ndarray,
    mean_packet_bytes: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Benchmark assignment from per-candidate SINRs.

    Maximizes the summed per-link efficiency (rate over mean frame size)
    subject to one AP per STA and a per-STA floor set to the worst candidate
    SINR, which makes every candidate feasible and the floor constraint
    non-binding by construction. Returns (assignment, gamma_o per STA).
    """
    n, m = sinr_db.shape
    benefit = np.zeros((n, m))
    feasible = np.zeros((n, m), dtype=bool)
    tie = np.full((n, m), -np.inf)
    gamma = np.full(n, np.nan)
    frame_bits = mean_packet_bytes * 8.0
    for i in range(n):
        cands = candidates[i]
        if not cands:
            continue
        gamma[i] = min(sinr_db[i, j] for j in cands)
        for j in cands:
            s = sinr_db[i, j]
            if s >= gamma[i]:
                feasible[i, j] = True
                rate = rate_for_sinr(s)
                benefit[i, j] = (rate or 0.0) * 1e6 / frame_bits
                tie[i, j] = s
    inst = AssignmentInstance(benefit=benefit, feasible=feasible, tie_break=tie)
    sol = solve_exact(inst)
    return sol.assignment, gamma


@dataclass
class AssociationMap:
    """Frozen outcome of one strategy: who serves whom, at which rate."""

    strategy: str
    ap_of: list[int]
    rate_mbps: list[float]
    sinr_db: list[float]  # the SINR figure the strategy believed, NaN if n/a
    candidates: list[list[int]]
    fallback: list[bool]

    def dump(self) -> str:
        lines = ["sta_id ap_id strategy measured_sinr_db"]
        for i, j in enumerate(self.ap_of):
            s = self.sinr_db[i]
            s_txt = "nan" if math.isnan(s) else f"{s:.4f}"
            lines.append(f"{i} {j} {self.strategy} {s_txt}")
        return "\n".join(lines) + "\n"

    def associated(self) -> list[int]:
        return [i for i, j in enumerate(self.ap_of) if j != UNASSOCIATED]


def plan_probe_campaign(
    budget: LinkBudget,
    mac_cfg: MacConfig,
    *,
    warmup_slots: int,
    window_slots: int,
    rng,
    max_concurrent: int = 6,
) -> list[ProbeWindow]:
    """Back-to-back measurement windows per STA, packed into a few lanes.

    Candidates are visited strongest-first. Capping how many STAs probe at
    once keeps the campaign from displacing enough data traffic to skew the
    interference the windows are supposed to observe; a per-STA stagger (up
    to one window) decorrelates the windows that do overlap.
    """
    slot = mac_cfg.slot_time_us
    windows: list[ProbeWindow] = []
    n = budget.rx_mw.shape[0]
    order = [sta for sta in range(n) if budget.candidates(sta)]
    rng.shuffle(order)
    lane_end = [warmup_slots * slot] * max(1, max_concurrent)
    for sta in order:
        cands = budget.candidates(sta)
        cands.sort(key=lambda j: (-budget.rx_mw[sta, j], j))
        lane = min(range(len(lane_end)), key=lane_end.__getitem__)
        start = lane_end[lane] + rng.randrange(window_slots) * slot
        for j in cands:
            end = start + window_slots * slot
            windows.append(ProbeWindow(sta=sta, ap=j, start_us=start, end_us=end))
            start = end
        lane_end[lane] = start
    return windows


def true_sinr_matrix(
    budget: LinkBudget,
    topology: Topology,
    phy_cfg: PhyConfig,
    domains: list[frozenset[int]] | list[set[int]],
    busy_fraction: np.ndarray,
) -> np.ndarray:
    """Ground-truth per-candidate DL-SINR from observed channel occupancy.

    The expected interference at STA i from candidate j's perspective is the
    sum over co-channel APs outside j's contention domain of received power
    times that AP's airtime fraction — what an unboundedly long measurement
    window would converge to.
    """
    n, m = budget.rx_mw.shape
    chan = topology.ap_channel
    out = np.full((n, m), np.nan)
    noise = phy_cfg.noise_floor_mw
    for j in range(m):
        others = [
            z
            for z in range(m)
            if z != j and chan[z] == chan[j] and z not in domains[j]
        ]
        if others:
            i_mw = budget.rx_mw[:, others] @ busy_fraction[others]
        else:
            i_mw = np.zeros(n)
        out[:, j] = 10.0 * np.log10(budget.rx_mw[:, j] / (i_mw + noise))
    return out


def build_ssf_map(budget: LinkBudget) -> AssociationMap:
    n = budget.rx_mw.shape[0]
    ap_of, rates, sinrs, cands = [], [], [], []
    for i in range(n):
        j = ssf_select(i, budget)
        ap_of.append(j)
        cands.append(candidate_set(i, budget))
        if j == UNASSOCIATED:
            rates.append(0.0)
            sinrs.append(float("nan"))
        else:
            s = float(budget.snr_db[i, j])
            rates.append(tx_rate_mbps(s))
            sinrs.append(s)
    return AssociationMap(
        strategy="ssf",
        ap_of=ap_of,
        rate_mbps=rates,
        sinr_db=sinrs,
        candidates=cands,
        fallback=[False] * n,
    )


def build_mpd_map(
    budget: LinkBudget, records: dict[tuple[int, int], ProbeRecord]
) -> AssociationMap:
    base = build_ssf_map(budget)
    n = budget.rx_mw.shape[0]
    ap_of, rates, sinrs, fallback = [], [], [], []
    for i in range(n):
        per_ap = {
            j: records[(i, j)] for j in base.candidates[i] if (i, j) in records
        }
        j = mpd_select(i, per_ap) if per_ap else None
        if j is None:
            ap_of.append(base.ap_of[i])
            rates.append(base.rate_mbps[i])
            sinrs.append(base.sinr_db[i])
            fallback.append(True)
        else:
            s = float(budget.snr_db[i, j])
            ap_of.append(j)
            rates.append(tx_rate_mbps(s))
            sinrs.append(s)
            fallback.append(False)
    return AssociationMap(
        strategy="mpd",
        ap_of=ap_of,
        rate_mbps=rates,
        sinr_db=sinrs,
        candidates=base.candidates,
        fallback=fallback,
    )


def build_dasa_map(
    budget: LinkBudget, measured: dict[tuple[int, int], Optional[float]]
) -> AssociationMap:
    base = build_ssf_map(budget)
    n = budget.rx_mw.shape[0]
    ap_of, rates, sinrs, fallback = [], [], [], []
    for i in range(n):
        per_ap = {
            j: measured.get((i, j)) for j in base.candidates[i] if (i, j) in measured
        }
        j = dasa_select(i, per_ap) if per_ap else None
        if j is None:
            ap_of.append(base.ap_of[i])
            rates.append(base.rate_mbps[i])
            sinrs.append(base.sinr_db[i])
            fallback.append(True)
        else:
            s = per_ap[j]
            ap_of.append(j)
            rates.append(tx_rate_mbps(s))
            sinrs.append(float(s))
            fallback.append(False)
    return AssociationMap(
        strategy="dasa",
        ap_of=ap_of,
        rate_mbps=rates,
        sinr_db=sinrs,
        candidates=base.candidates,
        fallback=fallback,
    )


def build_opasa_map(
    budget: LinkBudget,
    true_sinr: np.ndarray,
    mean_packet_bytes: float,
) -> AssociationMap:
    base = build_ssf_map(budget)
    n = budget.rx_mw.shape[0]
    assignment, _gamma = opasa_select(base.candidates, true_sinr, mean_packet_bytes)
    ap_of, rates, sinrs, fallback = [], [], [], []
    for i in range(n):
        j = int(assignment[i])
        if j == UNASSOCIATED:
            ap_of.append(base.ap_of[i])
            rates.append(base.rate_mbps[i])
            sinrs.append(base.sinr_db[i])
            fallback.append(True)
        else:
            s = float(true_sinr[i, j])
            ap_of.append(j)
            rates.append(tx_rate_mbps(s))
            sinrs.append(s)
            fallback.append(False)
    return AssociationMap(
        strategy="opasa",
        ap_of=ap_of,
        rate_mbps=rates,
        sinr_db=sinrs,
        candidates=base.candidates,
        fallback=fallback,
    )
