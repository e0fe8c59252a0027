"""Command-line entry point: single runs and sweeps, CSV outputs.

A scenario cell is one (num_stas, frame_bytes, seed) point. Within a cell
every strategy sees the identical topology, probe phase, and arrival
sequence, so cross-strategy differences are paired. Outputs:

* ``summary.csv`` — one row per (strategy, cell) with aggregate metrics,
* ``links.csv`` — one row per associated STA with its link throughput,
* ``manifest.json`` — config echo, per-cell status, artifact version.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import random
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import __version__
from .association import (
    STRATEGIES,
    build_dasa_map,
    build_link_budget,
    build_mpd_map,
    build_opasa_map,
    build_ssf_map,
    measure_dl_sinr,
    plan_probe_campaign,
    true_sinr_matrix,
)
from .engine import Simulator
from .mac import MacConfig, build_arrival_schedules, contention_domains
from .metrics import ScenarioResult, aggregate_throughput, mean_frame_delay
from .phy import PhyConfig
from .topology import ConfigError, NetworkConfig, deploy

SCHEMA_VERSION = 1

SUMMARY_COLUMNS = [
    "schema_version",
    "strategy",
    "num_stas",
    "num_aps",
    "frame_bytes",
    "seed",
    "aggregate_mbps",
    "mean_delay_ms",
    "drop_rate",
]
LINK_COLUMNS = [
    "strategy",
    "num_stas",
    "frame_bytes",
    "seed",
    "sta_id",
    "ap_id",
    "throughput_mbps",
]


@dataclass(frozen=True)
class ScenarioSpec:
    """Everything a sweep needs; axes empty means "use the config value"."""

    net: NetworkConfig = NetworkConfig()
    phy: PhyConfig = PhyConfig()
    mac: MacConfig = MacConfig()
    strategies: tuple[str, ...] = STRATEGIES
    measurement_slots: int = 1000
    warmup_slots: int = 2000
    run_duration_slots: int = 50_000
    seeds: tuple[int, ...] = (1,)
    num_stas_axis: tuple[int, ...] = ()
    frame_bytes_axis: tuple[int, ...] = ()

    def validate(self) -> None:
        self.net.validate()
        self.phy.validate()
        self.mac.validate()
        if self.measurement_slots < 1:
            raise ConfigError("measurement_slots: must be >= 1")
        if self.run_duration_slots <= self.measurement_slots:
            raise ConfigError("run_duration_slots: must exceed measurement_slots")
        if self.warmup_slots < 0:
            raise ConfigError("warmup_slots: must be >= 0")
        if not self.seeds:
            raise ConfigError("seeds: need at least one seed")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"strategy: unknown strategy {s!r}")
        for n in self.num_stas_axis:
            if n < 1:
                raise ConfigError("num_stas: every swept size must be >= 1")
        for f in self.frame_bytes_axis:
            if f < 1:
                raise ConfigError("frame_bytes: every swept size must be >= 1")


def _sub_seed(seed: int, stream: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(stream,))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class CellResult:
    num_stas: int
    frame_bytes: float
    seed: int
    summary_rows: list[dict]
    link_rows: list[dict]
    scenario_results: dict[str, ScenarioResult]
    error: str = ""


def run_cell(
    spec: ScenarioSpec,
    num_stas: int,
    frame_bytes: int | None,
    seed: int,
    keep_results: bool = False,
) -> CellResult:
    """Run every strategy of one sweep cell on a shared measurement phase."""
    net = replace(spec.net, num_stas=num_stas, rng_seed=seed)
    mac = spec.mac
    if frame_bytes is not None:
        mac = replace(
            mac,
            packet_min_bytes=frame_bytes,
            packet_max_bytes=frame_bytes,
            mean_packet_bytes=float(frame_bytes),
        )
    net.validate()
    mac.validate()
    phy = spec.phy
    slot = mac.slot_time_us

    topo = deploy(net, rng=np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,))))
    budget = build_link_budget(topo, net, phy)
    ssf_map = build_ssf_map(budget)

    plan = plan_probe_campaign(
        budget,
        mac,
        warmup_slots=spec.warmup_slots,
        window_slots=spec.measurement_slots,
        rng=random.Random(_sub_seed(seed, 5)),
    )
    warmup_us = spec.warmup_slots * slot
    phase_a_us = max((w.end_us for w in plan), default=warmup_us)
    phase_a_us = max(phase_a_us, warmup_us + spec.measurement_slots * slot)

    sched_a = build_arrival_schedules(
        net.num_aps, phase_a_us, mac, np.random.SeedSequence(seed, spawn_key=(1,))
    )
    sim_a = Simulator(
        topo,
        net,
        phy,
        mac,
        assoc_ap=ssf_map.ap_of,
        link_rate_mbps=ssf_map.rate_mbps,
        duration_us=phase_a_us,
        arrival_schedules=sched_a,
        sim_seed=_sub_seed(seed, 3),
        probe_plan=plan,
        # Occupancy for the ground-truth SINR matrix comes from the back half
        # of the warmup: probing itself displaces data traffic, so the probe
        # era under-represents the interference the measured run will see.
        busy_from_us=warmup_us // 2,
        busy_to_us=warmup_us,
    )
    res_a = sim_a.run()

    measured: dict[tuple[int, int], float | None] = {}
    records = {}
    for (i, j), raw in res_a.probes.items():
        sinr, rec = measure_dl_sinr(i, j, raw, phy)
        measured[(i, j)] = sinr
        records[(i, j)] = rec
    busy_frac = np.array(res_a.ap_tx_air_us, dtype=float) / max(res_a.busy_window_us, 1)
    domains = contention_domains(topo, phy, net)
    truth = true_sinr_matrix(budget, topo, phy, domains, busy_frac)

    maps = {
        "ssf": ssf_map,
        "mpd": build_mpd_map(budget, records),
        "dasa": build_dasa_map(budget, measured),
        "opasa": build_opasa_map(budget, truth, mac.mean_packet_bytes),
    }

    run_us = spec.run_duration_slots * slot
    sched_b = build_arrival_schedules(
        net.num_aps, run_us, mac, np.random.SeedSequence(seed, spawn_key=(2,))
    )
    sim_seed_b = _sub_seed(seed, 4)

    cell = CellResult(
        num_stas=num_stas,
        frame_bytes=mac.mean_packet_bytes,
        seed=seed,
        summary_rows=[],
        link_rows=[],
        scenario_results={},
    )
    for strat in spec.strategies:
        amap = maps[strat]
        sim = Simulator(
            topo,
            net,
            phy,
            mac,
            assoc_ap=amap.ap_of,
            link_rate_mbps=amap.rate_mbps,
            duration_us=run_us,
            arrival_schedules=sched_b,
            sim_seed=sim_seed_b,
        )
        res = sim.run()
        duration_s = run_us / 1e6
        scen = ScenarioResult(
            strategy=strat,
            seed=seed,
            duration_s=duration_s,
            links=list(res.links.values()),
            arrived=res.arrived,
            buffer_dropped=res.buffer_dropped,
            retry_dropped=res.retry_dropped,
            delivered=res.delivered,
            residual=res.residual,
            exclusivity_violations=res.exclusivity_violations,
            associated_stas=len(amap.associated()),
            unassociated_stas=num_stas - len(amap.associated()),
        )
        if keep_results:
            cell.scenario_results[strat] = scen
        cell.summary_rows.append(
            {
                "schema_version": SCHEMA_VERSION,
                "strategy": strat,
                "num_stas": num_stas,
                "num_aps": net.num_aps,
                "frame_bytes": mac.mean_packet_bytes,
                "seed": seed,
                "aggregate_mbps": aggregate_throughput(scen),
                "mean_delay_ms": mean_frame_delay(scen) * 1e3,
                "drop_rate": scen.drop_rate,
            }
        )
        by_sta = {ls.sta: ls for ls in res.links.values()}
        for i in amap.associated():
            ls = by_sta.get(i)
            put = ls.delivered_bits / duration_s / 1e6 if ls is not None else 0.0
            cell.link_rows.append(
                {
                    "strategy": strat,
                    "num_stas": num_stas,
                    "frame_bytes": mac.mean_packet_bytes,
                    "seed": seed,
                    "sta_id": i,
                    "ap_id": amap.ap_of[i],
                    "throughput_mbps": put,
                }
            )
    return cell


def _cell_worker(args: tuple) -> CellResult:
    spec, num_stas, frame_bytes, seed = args
    try:
        return run_cell(spec, num_stas, frame_bytes, seed)
    except Exception as exc:  # keep the sweep going, record the failure
        return CellResult(
            num_stas=num_stas,
            frame_bytes=float(frame_bytes) if frame_bytes else float("nan"),
            seed=seed,
            summary_rows=[],
            link_rows=[],
            scenario_results={},
            error=f"{type(exc).__name__}: {exc}",
        )


def sweep(spec: ScenarioSpec, out_dir: str, workers: int = 1) -> dict:
    """Cartesian product of sizes x frame sizes x seeds; writes the CSVs."""
    spec.validate()
    sizes = spec.num_stas_axis or (spec.net.num_stas,)
    frames: tuple[int | None, ...] = spec.frame_bytes_axis or (None,)
    jobs = [
        (spec, n, f, s)
        for n in sizes
        for f in frames
        for s in spec.seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_cell_worker, jobs))
    else:
        cells = [_cell_worker(job) for job in jobs]

    strat_order = {s: k for k, s in enumerate(STRATEGIES)}
    summary_rows = [r for c in cells for r in c.summary_rows]
    summary_rows.sort(
        key=lambda r: (
            r["num_stas"],
            r["frame_bytes"],
            r["seed"],
            strat_order[r["strategy"]],
        )
    )
    link_rows = [r for c in cells for r in c.link_rows]
    link_rows.sort(
        key=lambda r: (
            r["num_stas"],
            r["frame_bytes"],
            r["seed"],
            strat_order[r["strategy"]],
            r["sta_id"],
        )
    )

    os.makedirs(out_dir, exist_ok=True)
    _write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_COLUMNS, summary_rows)
    _write_csv(os.path.join(out_dir, "links.csv"), LINK_COLUMNS, link_rows)

    manifest = {
        "artifact_version": __version__,
        "schema_version": SCHEMA_VERSION,
        "config": _spec_as_dict(spec),
        "cells": [
            {
                "num_stas": c.num_stas,
                "frame_bytes": c.frame_bytes,
                "seed": c.seed,
                "status": "ok" if not c.error else f"error: {c.error}",
            }
            for c in cells
        ],
        "complete": all(not c.error for c in cells),
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def _fmt(value) -> str:
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.6f}"
    return str(value)


def _write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _spec_as_dict(spec: ScenarioSpec) -> dict:
    return {
        "net": dataclasses.asdict(spec.net),
        "phy": dataclasses.asdict(spec.phy),
        "mac": dataclasses.asdict(spec.mac),
        "strategies": list(spec.strategies),
        "measurement_slots": spec.measurement_slots,
        "warmup_slots": spec.warmup_slots,
        "run_duration_slots": spec.run_duration_slots,
        "seeds": list(spec.seeds),
        "num_stas_axis": list(spec.num_stas_axis),
        "frame_bytes_axis": list(spec.frame_bytes_axis),
    }


# --------------------------------------------------------------- config file

_NET_KEYS = {f.name for f in dataclasses.fields(NetworkConfig)}
_PHY_KEYS = {f.name for f in dataclasses.fields(PhyConfig)}
_MAC_KEYS = {f.name for f in dataclasses.fields(MacConfig)}
_SPEC_KEYS = {
    "strategy",
    "seeds",
    "num_stas_sweep",
    "frame_bytes_sweep",
    "measurement_slots",
    "warmup_slots",
    "run_duration_slots",
}


def parse_config(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment; blanks ignored."""
    out: dict[str, str] = {}
    for ln, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"config line {ln}: expected 'key = value'")
        key, value = body.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(name: str, value: str, kind: type):
    try:
        if kind is bool:
            if value.lower() in ("true", "1", "yes", "on"):
                return True
            if value.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {value!r} as {kind.__name__}") from None


def _int_list(name: str, value: str) -> tuple[int, ...]:
    try:
        return tuple(int(v.strip()) for v in value.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{name}: expected comma-separated integers") from None


def build_spec(options: dict[str, str]) -> ScenarioSpec:
    net_kw, phy_kw, mac_kw, spec_kw = {}, {}, {}, {}
    for key, value in options.items():
        if key in _NET_KEYS:
            f = {f.name: f for f in dataclasses.fields(NetworkConfig)}[key]
            net_kw[key] = _coerce(key, value, _field_type(f))
        elif key in _PHY_KEYS:
            f = {f.name: f for f in dataclasses.fields(PhyConfig)}[key]
            phy_kw[key] = _coerce(key, value, _field_type(f))
        elif key in _MAC_KEYS:
            f = {f.name: f for f in dataclasses.fields(MacConfig)}[key]
            mac_kw[key] = _coerce(key, value, _field_type(f))
        elif key in _SPEC_KEYS:
            spec_kw[key] = value
        else:
            raise ConfigError(f"unknown config key: {key}")

    kwargs = {}
    if "strategy" in spec_kw:
        names = tuple(
            s.strip().lower() for s in spec_kw["strategy"].split(",") if s.strip()
        )
        kwargs["strategies"] = names
    if "seeds" in spec_kw:
        kwargs["seeds"] = _int_list("seeds", spec_kw["seeds"])
    if "num_stas_sweep" in spec_kw:
        kwargs["num_stas_axis"] = _int_list("num_stas_sweep", spec_kw["num_stas_sweep"])
    if "frame_bytes_sweep" in spec_kw:
        kwargs["frame_bytes_axis"] = _int_list(
            "frame_bytes_sweep", spec_kw["frame_bytes_sweep"]
        )
    for name in ("measurement_slots", "warmup_slots", "run_duration_slots"):
        if name in spec_kw:
            kwargs[name] = _coerce(name, spec_kw[name], int)

    spec = ScenarioSpec(
        net=NetworkConfig(**net_kw),
        phy=PhyConfig(**phy_kw),
        mac=MacConfig(**mac_kw),
        **kwargs,
    )
    spec.validate()
    return spec


def _field_type(f: dataclasses.Field) -> type:
    mapping = {"int": int, "float": float, "bool": bool, "str": str}
    name = f.type if isinstance(f.type, str) else f.type.__name__
    base = name.split("|")[0].strip()
    return mapping.get(base, str)


# ---------------------------------------------------------------------- main

def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="apsim",
        description="Simulate AP-selection strategies in a dense WLAN.",
    )
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("--strategy", help="comma list: ssf,mpd,dasa,opasa")
    parser.add_argument("--stas", help="comma list of network sizes")
    parser.add_argument("--aps", type=int, help="number of APs")
    parser.add_argument("--seed", help="comma list of seeds")
    parser.add_argument("--slots", type=int, help="measured run duration in slots")
    parser.add_argument("--n-measure", type=int, help="probe window size in slots")
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--workers", type=int, default=1, help="parallel cells")
    args = parser.parse_args(argv)

    try:
        options: dict[str, str] = {}
        if args.config:
            with open(args.config) as fh:
                options = parse_config(fh.read())
        if args.strategy:
            options["strategy"] = args.strategy
        if args.stas:
            options["num_stas_sweep"] = args.stas
        if args.aps is not None:
            options["num_aps"] = str(args.aps)
        if args.seed:
            options["seeds"] = args.seed
        if args.slots is not None:
            options["run_duration_slots"] = str(args.slots)
        if args.n_measure is not None:
            options["measurement_slots"] = str(args.n_measure)
        spec = build_spec(options)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    manifest = sweep(spec, args.out, workers=args.workers)
    status = "complete" if manifest["complete"] else "INCOMPLETE"
    print(
        f"{status}: {len(manifest['cells'])} cells -> "
        f"{os.path.join(args.out, 'summary.csv')}"
    )
    return 0 if manifest["complete"] else 1


if __name__ == "__main__":
    raise SystemExit(main())
