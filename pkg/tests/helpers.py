"""Shared builders for the test suite.

Hand-made topologies with pinned gains (so expected powers are exact
arithmetic), plus a driver that reproduces the measurement phase of the
pipeline for tests that need real probe records and association maps.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from apsim.association import (
    AssociationMap,
    ProbeRecord,
    build_dasa_map,
    build_link_budget,
    build_mpd_map,
    build_opasa_map,
    build_ssf_map,
    measure_dl_sinr,
    plan_probe_campaign,
    true_sinr_matrix,
)
from apsim.cli import _sub_seed
from apsim.engine import EngineResult, Simulator
from apsim.mac import MacConfig, build_arrival_schedules, contention_domains
from apsim.phy import PhyConfig
from apsim.topology import NetworkConfig, Topology, deploy

# One pass/fail line per acceptance criterion, printed by the conftest
# terminal-summary hook at the end of the run.
ACCEPTANCE: list[str] = []


def make_topology(ap_xy, sta_xy, channels=None, gain=1.0) -> Topology:
    """Topology with explicit coordinates and a pinned (non-random) gain."""
    ap = np.asarray(ap_xy, dtype=float).reshape(-1, 2)
    sta = np.asarray(sta_xy, dtype=float).reshape(-1, 2)
    if channels is None:
        chan = np.zeros(ap.shape[0], dtype=np.int64)
    else:
        chan = np.asarray(channels, dtype=np.int64)
    diff = sta[:, None, :] - ap[None, :, :]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    if np.isscalar(gain):
        g = np.full((sta.shape[0], ap.shape[0]), float(gain))
    else:
        g = np.asarray(gain, dtype=float)
    return Topology(
        ap_positions=ap,
        sta_positions=sta,
        ap_channel=chan,
        link_distance=dist,
        link_gain=g,
    )


@dataclass
class PhaseA:
    """Everything the measurement phase produces for one scenario."""

    seed: int
    net: NetworkConfig
    phy: PhyConfig
    mac: MacConfig
    topo: Topology
    budget: object
    engine_result: EngineResult
    measured: dict[tuple[int, int], float | None]
    records: dict[tuple[int, int], ProbeRecord]
    busy_frac: np.ndarray
    domains: list
    truth: np.ndarray
    maps: dict[str, AssociationMap] = field(default_factory=dict)


def run_phase_a(
    net: NetworkConfig,
    phy: PhyConfig | None = None,
    mac: MacConfig | None = None,
    *,
    warmup_slots: int = 2000,
    measurement_slots: int = 1000,
    seed: int = 1,
) -> PhaseA:
    """Deploy + SSF warm-up + probe campaign, in the same way the sweep does.

    Mirrors the cell runner's measurement phase, including its seed-stream
    split, so scenarios built here are the ones the pipeline would produce.
    """
    phy = phy or PhyConfig()
    mac = mac or MacConfig()
    slot = mac.slot_time_us

    topo = deploy(net, rng=np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,))))
    budget = build_link_budget(topo, net, phy)
    ssf_map = build_ssf_map(budget)

    plan = plan_probe_campaign(
        budget,
        mac,
        warmup_slots=warmup_slots,
        window_slots=measurement_slots,
        rng=random.Random(_sub_seed(seed, 5)),
    )
    warmup_us = warmup_slots * slot
    phase_a_us = max((w.end_us for w in plan), default=warmup_us)
    phase_a_us = max(phase_a_us, warmup_us + measurement_slots * slot)
    sched = build_arrival_schedules(
        net.num_aps, phase_a_us, mac, np.random.SeedSequence(seed, spawn_key=(1,))
    )
    sim = Simulator(
        topo,
        net,
        phy,
        mac,
        assoc_ap=ssf_map.ap_of,
        link_rate_mbps=ssf_map.rate_mbps,
        duration_us=phase_a_us,
        arrival_schedules=sched,
        sim_seed=_sub_seed(seed, 3),
        probe_plan=plan,
        busy_from_us=warmup_us // 2,
        busy_to_us=warmup_us,
    )
    res = sim.run()

    measured: dict[tuple[int, int], float | None] = {}
    records: dict[tuple[int, int], ProbeRecord] = {}
    for (i, j), raw in res.probes.items():
        s, rec = measure_dl_sinr(i, j, raw, phy)
        measured[(i, j)] = s
        records[(i, j)] = rec
    busy_frac = np.array(res.ap_tx_air_us, dtype=float) / max(res.busy_window_us, 1)
    domains = contention_domains(topo, phy, net)
    truth = true_sinr_matrix(budget, topo, phy, domains, busy_frac)

    maps = {
        "ssf": ssf_map,
        "mpd": build_mpd_map(budget, records),
        "dasa": build_dasa_map(budget, measured),
        "opasa": build_opasa_map(budget, truth, mac.mean_packet_bytes),
    }
    return PhaseA(
        seed=seed,
        net=net,
        phy=phy,
        mac=mac,
        topo=topo,
        budget=budget,
        engine_result=res,
        measured=measured,
        records=records,
        busy_frac=busy_frac,
        domains=domains,
        truth=truth,
        maps=maps,
    )


def run_strategy(
    pa: PhaseA,
    strategy: str,
    run_slots: int,
    *,
    keep_delay_samples: bool = False,
) -> EngineResult:
    """Measured run for one strategy on a PhaseA scenario (paired streams)."""
    amap = pa.maps[strategy]
    run_us = run_slots * pa.mac.slot_time_us
    sched = build_arrival_schedules(
        pa.net.num_aps, run_us, pa.mac, np.random.SeedSequence(pa.seed, spawn_key=(2,))
    )
    sim = Simulator(
        pa.topo,
        pa.net,
        pa.phy,
        pa.mac,
        assoc_ap=amap.ap_of,
        link_rate_mbps=amap.rate_mbps,
        duration_us=run_us,
        arrival_schedules=sched,
        sim_seed=_sub_seed(pa.seed, 4),
        keep_delay_samples=keep_delay_samples,
    )
    return sim.run()
