"""Event-driven CSMA/CA engine.

Single-threaded discrete-event simulation over integer microsecond ticks.
Each AP runs a DCF state machine (DIFS gate, slotted backoff on a global
20 us grid, RTS/CTS/DATA/ACK exchange with SIFS spacing); reception outcomes
are SINR-based against the Table-of-rates bracket of the frame's PHY rate.
Carrier sensing is energy detection: a node's sensed level is maintained
incrementally as transmissions start and stop, and contention state machines
are poked only when their busy/idle flag flips.

Transmission starts that land on the same tick are committed in seeded-random
order and each start re-checks the medium first, so two APs inside one
contention domain can never overlap; failures therefore come from hidden
(out-of-domain) interference, which is the collision model here.
"""

from __future__ import annotations

import heapq
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mac import (
    ArrivalSchedule,
    Frame,
    MacConfig,
    airtime_us,
    contention_domains,
    draw_backoff,
    next_cw,
)
from .metrics import LinkStats
from .phy import BASIC_RATE_FLOOR_DB, PhyConfig, required_sinr_db
from .topology import NetworkConfig, Topology, ap_rx_power_matrix, rx_power_matrix

__all__ = ["ProbeWindow", "ProbeRaw", "EngineResult", "Simulator"]

# Event kinds.
_EV_TX_END = 0
_EV_RESPOND = 1
_EV_TX_START = 2
_EV_ARRIVAL = 3
_EV_TIMEOUT = 4
_EV_WINDOW_START = 5
_EV_WINDOW_END = 6
_EV_PREQ_RETRY = 7
_EV_PHASE_END = 8

# Event priorities at an equal tick: ends free the medium before responders
# fire, responders before fresh starts sense, bookkeeping afterwards.
_PRIO = {
    _EV_TX_END: 0,
    _EV_RESPOND: 1,
    _EV_TX_START: 2,
    _EV_ARRIVAL: 3,
    _EV_WINDOW_END: 4,  # before WINDOW_START: adjacent windows share a tick
    _EV_WINDOW_START: 5,
    _EV_PREQ_RETRY: 6,
    _EV_TIMEOUT: 7,
    _EV_PHASE_END: 9,
}

# Frame kinds on the air.
_F_RTS = 0
_F_CTS = 1
_F_DATA = 2
_F_ACK = 3
_F_PREQ = 4
_F_PRES = 5

# AP/STA contention states.
_ST_IDLE = 0
_ST_DEFER = 1
_ST_BACKOFF = 2
_ST_TX = 3
_ST_WAIT = 4


class _Tx:
    __slots__ = ("src", "chan", "t0", "t1", "kind", "ap", "sta", "rate_bps", "nav_end")

    def __init__(self, src, chan, t0, t1, kind, ap, sta, rate_bps, nav_end):
        self.src = src
        self.chan = chan
        self.t0 = t0
        self.t1 = t1
        self.kind = kind
        self.ap = ap
        self.sta = sta
        self.rate_bps = rate_bps
        self.nav_end = nav_end


class _Rx:
    __slots__ = (
        "src", "signal", "req_db", "t0", "cur_i", "energy", "last_t", "dead", "data",
    )

    def __init__(self, src, signal, req_db, t0, cur_i, data):
        self.src = src
        self.signal = signal
        self.req_db = req_db
        self.t0 = t0
        self.cur_i = cur_i
        self.energy = 0.0
        self.last_t = t0
        self.dead = False
        self.data = data


class _Listener:
    __slots__ = ("allowed", "cur_i", "energy", "last_t")

    def __init__(self, allowed, cur_i, last_t):
        self.allowed = allowed
        self.cur_i = cur_i
        self.energy = 0.0
        self.last_t = last_t


class _ApState:
    __slots__ = (
        "queue",
        "mgmt",
        "cw",
        "state",
        "epoch",
        "await_epoch",
        "backoff",
        "base_t",
        "cur_kind",
        "cur_sta",
        "arr_ptr",
        "arr_pending",
        "assoc",
    )

    def __init__(self, cw_min: int):
        self.queue: deque[Frame] = deque()
        self.mgmt: deque[tuple[int, int]] = deque()  # (sta, window_end_us)
        self.cw = cw_min
        self.state = _ST_IDLE
        self.epoch = 0
        self.await_epoch = 0
        self.backoff = -1
        self.base_t = 0
        self.cur_kind = -1
        self.cur_sta = -1
        self.arr_ptr = 0
        self.arr_pending = False
        self.assoc: list[int] = []


class _StaProbeState:
    __slots__ = ("state", "epoch", "backoff", "base_t", "attempts", "window", "nav")

    def __init__(self):
        self.state = _ST_IDLE
        self.epoch = 0
        self.backoff = -1
        self.base_t = 0
        self.attempts = 0
        self.window: Optional[ProbeWindow] = None
        self.nav = 0


@dataclass(frozen=True)
class ProbeWindow:
    """One candidate-measurement window in a STA's campaign."""

    sta: int
    ap: int
    start_us: int
    end_us: int


@dataclass
class ProbeRaw:
    """Raw per-(STA, candidate) measurement output of a probe phase.

    Probing runs as a ping-pong loop: each received response immediately
    triggers the next request, so ``delay_pairs`` request/response delay
    samples accumulate over the window. The interference listener integrates
    independently of whether any probe gets through.
    """

    sta: int
    ap: int
    window_start_us: int
    window_end_us: int
    preq_sent_us: int = -1
    last_preq_us: int = -1
    cycle_open: bool = False
    first_pres_us: int = -1
    pres_count: int = 0
    delay_sum_us: int = 0
    delay_pairs: int = 0
    interference_energy_mw_us: float = 0.0
    response_times_us: list[int] = field(default_factory=list)
    pres_power_mw: list[float] = field(default_factory=list)

    @property
    def window_s(self) -> float:
        return (self.window_end_us - self.window_start_us) / 1e6

    @property
    def mean_delay_us(self) -> float:
        return self.delay_sum_us / self.delay_pairs if self.delay_pairs else float("nan")


@dataclass
class EngineResult:
    duration_us: int
    links: dict[tuple[int, int], LinkStats] = field(default_factory=dict)
    arrived: int = 0
    buffer_dropped: int = 0
    retry_dropped: int = 0
    delivered: int = 0
    residual: int = 0
    # Same counters broken down per AP, so frame conservation can be
    # checked queue by queue instead of only in aggregate.
    arrived_by_ap: list[int] = field(default_factory=list)
    buffer_dropped_by_ap: list[int] = field(default_factory=list)
    retry_dropped_by_ap: list[int] = field(default_factory=list)
    delivered_by_ap: list[int] = field(default_factory=list)
    residual_by_ap: list[int] = field(default_factory=list)
    exclusivity_violations: int = 0
    probes: dict[tuple[int, int], ProbeRaw] = field(default_factory=dict)
    ap_tx_air_us: list[int] = field(default_factory=list)
    busy_window_us: int = 0


class Simulator:
    """One simulation phase over a fixed association map.

    ``assoc_ap[i]`` is the serving AP of STA i (or -1), ``link_rate_mbps[i]``
    the PHY rate its data frames use. A probe plan adds management traffic
    and per-candidate interference listening on top of the data traffic.
    """

    def __init__(
        self,
        topology: Topology,
        net_cfg: NetworkConfig,
        phy_cfg: PhyConfig,
        mac_cfg: MacConfig,
        *,
        assoc_ap: list[int],
        link_rate_mbps: list[float],
        duration_us: int,
        arrival_schedules: Optional[list[ArrivalSchedule]],
        sim_seed: int,
        probe_plan: Optional[list[ProbeWindow]] = None,
        busy_from_us: int = 0,
        busy_to_us: int = 0,
        keep_delay_samples: bool = False,
    ):
        mac_cfg.validate()
        self.topo = topology
        self.net = net_cfg
        self.phy = phy_cfg
        self.mac = mac_cfg
        self.M = topology.num_aps
        self.N = topology.num_stas
        self.duration_us = int(duration_us)
        self.rng = random.Random(sim_seed)
        self.keep_delay_samples = keep_delay_samples

        # Power tables as plain lists of floats for hot-loop access.
        dl = rx_power_matrix(topology, net_cfg)  # (N, M)
        self.ap_sta_mw = [list(map(float, dl[:, j])) for j in range(self.M)]
        uplink = dl * (net_cfg.sta_tx_power_mw / net_cfg.ap_tx_power_mw)
        self.sta_ap_mw = [list(map(float, uplink[i, :])) for i in range(self.N)]
        apap = ap_rx_power_matrix(topology, net_cfg)
        self.ap_ap_mw = [list(map(float, apap[j, :])) for j in range(self.M)]

        self.ap_chan = [int(c) for c in topology.ap_channel]
        num_chan = int(topology.ap_channel.max()) + 1 if self.M else 1
        self.aps_on_chan: list[list[int]] = [[] for _ in range(num_chan)]
        for j in range(self.M):
            self.aps_on_chan[self.ap_chan[j]].append(j)

        self.domain = [set(d) for d in contention_domains(topology, phy_cfg, net_cfg)]
        self.cca_mw = phy_cfg.cca_threshold_mw
        self.noise_mw = phy_cfg.noise_floor_mw

        # Per-AP contention bookkeeping.
        self.sensed = [0.0] * self.M
        self.busy = [False] * self.M
        self.idle_since = [0] * self.M
        self.nav = [0] * self.M  # virtual carrier sense from overheard headers
        self.aps = [_ApState(mac_cfg.cw_min) for _ in range(self.M)]

        self.assoc_ap = list(assoc_ap)
        self.rate_bps = [0.0] * self.N
        self.req_db = [0.0] * self.N
        for i, r in enumerate(link_rate_mbps):
            if r and r > 0.0:
                self.rate_bps[i] = r * 1e6
                self.req_db[i] = required_sinr_db(r)
        for i, j in enumerate(self.assoc_ap):
            if j >= 0:
                self.aps[j].assoc.append(i)

        # STA-side state.
        self.serving_chan = [
            self.ap_chan[j] if j >= 0 else -1 for j in self.assoc_ap
        ]
        self.tuned = list(self.serving_chan)
        self.sta_windows: dict[int, list[ProbeWindow]] = {}
        self.sta_probe: dict[int, _StaProbeState] = {}
        self.sta_sensed: dict[int, float] = {}
        self.contending_stas: list[set[int]] = [set() for _ in range(num_chan)]
        self.listeners: list[dict[int, _Listener]] = [{} for _ in range(num_chan)]

        # Channel state.
        self.active: list[dict[int, _Tx]] = [{} for _ in range(num_chan)]
        self.receptions: list[dict[int, _Rx]] = [{} for _ in range(num_chan)]

        self.schedules = arrival_schedules
        self.probe_plan = probe_plan or []
        self.busy_from_us = busy_from_us
        self.busy_to_us = busy_to_us if busy_to_us > 0 else self.duration_us

        # Timing constants (us).
        m = mac_cfg
        self.slot = m.slot_time_us
        self.difs = m.difs_us
        self.sifs = m.sifs_us
        self.rts_air = airtime_us(m.rts_bytes * 8, m.basic_rate_bps)
        self.cts_air = airtime_us(m.cts_bytes * 8, m.basic_rate_bps)
        self.ack_air = airtime_us(m.ack_bytes * 8, m.basic_rate_bps)
        self.preq_air = airtime_us(m.probe_req_bytes * 8, m.basic_rate_bps)
        self.pres_air = airtime_us(m.probe_res_bytes * 8, m.basic_rate_bps)
        self.mean_sinr_model = m.collision_model == "mean_sinr"

        self.result = EngineResult(duration_us=self.duration_us)
        self.result.ap_tx_air_us = [0] * self.M
        self.result.arrived_by_ap = [0] * self.M
        self.result.buffer_dropped_by_ap = [0] * self.M
        self.result.retry_dropped_by_ap = [0] * self.M
        self.result.delivered_by_ap = [0] * self.M
        self.result.residual_by_ap = [0] * self.M
        self._heap: list[tuple] = []
        self._seq = 0
        self._now = 0

    # ---------------------------------------------------------------- events

    def _push(self, t: int, kind: int, a=0, b=0, jitter: float = 0.0) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, _PRIO[kind], jitter, self._seq, kind, a, b))

    def run(self) -> EngineResult:
        for pw in self.probe_plan:
            key = (pw.sta, pw.ap)
            self.result.probes[key] = ProbeRaw(
                sta=pw.sta,
                ap=pw.ap,
                window_start_us=pw.start_us,
                window_end_us=pw.end_us,
            )
            self.sta_windows.setdefault(pw.sta, []).append(pw)
            self._push(pw.start_us, _EV_WINDOW_START, pw.sta, pw.ap)
            self._push(pw.end_us, _EV_WINDOW_END, pw.sta, pw.ap)
        for sta in self.sta_windows:
            self.sta_windows[sta].sort(key=lambda w: w.start_us)
            self.sta_probe[sta] = _StaProbeState()

        if self.schedules is not None:
            for j in range(self.M):
                if self.aps[j].assoc and self.schedules[j].times_us.size:
                    t0 = int(self.schedules[j].times_us[0])
                    if t0 <= self.duration_us:
                        self.aps[j].arr_pending = True
                        self._push(t0, _EV_ARRIVAL, j)
        self._push(self.duration_us, _EV_PHASE_END)

        heap = self._heap
        end = self.duration_us
        while heap:
            t, _prio, _jit, _seq, kind, a, b = heapq.heappop(heap)
            if t > end:
                break
            self._now = t
            if kind == _EV_TX_END:
                self._on_tx_end(a, b)
            elif kind == _EV_RESPOND:
                self._on_respond(a, b)
            elif kind == _EV_TX_START:
                self._on_tx_start(a, b)
            elif kind == _EV_ARRIVAL:
                self._on_arrival(a)
            elif kind == _EV_TIMEOUT:
                self._on_timeout(a, b)
            elif kind == _EV_WINDOW_START:
                self._on_window_start(a, b)
            elif kind == _EV_WINDOW_END:
                self._on_window_end(a, b)
            elif kind == _EV_PREQ_RETRY:
                self._on_preq_retry(a, b)
            else:  # _EV_PHASE_END
                self._finalize()
                break
        return self.result

    # ------------------------------------------------------------- AP DCF

    def _grid(self, t: int) -> int:
        return -(-t // self.slot) * self.slot

    def _plan_ap(self, j: int, now: int) -> None:
        st = self.aps[j]
        if st.state in (_ST_TX, _ST_WAIT):
            return
        if not st.mgmt and not st.queue:
            st.state = _ST_IDLE
            st.backoff = -1
            return
        if not st.mgmt:
            head = st.queue[0]
            if head.first_contention_us < 0:
                head.first_contention_us = now
        if st.backoff < 0:
            st.backoff = draw_backoff(st.cw, self.rng)
        if self.busy[j]:
            st.state = _ST_DEFER
            return
        gate = max(now, self.idle_since[j] + self.difs, self.nav[j] + self.difs)
        base = self._grid(gate)
        st.base_t = base
        st.state = _ST_BACKOFF
        st.epoch += 1
        self._push(
            base + st.backoff * self.slot,
            _EV_TX_START,
            j,
            st.epoch,
            jitter=self.rng.random(),
        )

    def _poke_ap(self, j: int, now: int, now_busy: bool) -> None:
        st = self.aps[j]
        if now_busy:
            if st.state == _ST_BACKOFF:
                consumed = (now - st.base_t) // self.slot
                if consumed > 0:
                    st.backoff = max(0, st.backoff - consumed)
                st.state = _ST_DEFER
                st.epoch += 1
        else:
            self.idle_since[j] = now
            if st.state == _ST_DEFER:
                self._plan_ap(j, now)

    def _on_tx_start(self, key: int, epoch: int) -> None:
        if key < 0:  # negative keys mark STA contenders (probe requests)
            self._on_sta_tx_start(-key - 1, epoch)
            return
        j = key
        st = self.aps[j]
        if epoch != st.epoch or st.state != _ST_BACKOFF:
            return
        if self.busy[j]:
            # A same-tick start won the medium first; keep the expired
            # backoff and re-enter the deferral loop without a CW penalty.
            st.backoff = 0
            st.state = _ST_DEFER
            return
        st.backoff = -1
        if st.mgmt:
            sta, window_end = st.mgmt.popleft()
            st.cur_kind = _F_PRES
            st.cur_sta = sta
            st.state = _ST_TX
            self._commit(
                src=j,
                chan=self.ap_chan[j],
                kind=_F_PRES,
                ap=j,
                sta=sta,
                bits=self.mac.probe_res_bytes * 8,
                rate_bps=self.mac.basic_rate_bps,
                window_end=window_end,
            )
            return
        frame = st.queue[0]
        sta = frame.sta
        st.cur_sta = sta
        st.state = _ST_TX
        if self.mac.use_rts_cts:
            st.cur_kind = _F_RTS
            self._commit(
                src=j,
                chan=self.ap_chan[j],
                kind=_F_RTS,
                ap=j,
                sta=sta,
                bits=self.mac.rts_bytes * 8,
                rate_bps=self.mac.basic_rate_bps,
            )
        else:
            st.cur_kind = _F_DATA
            self._commit(
                src=j,
                chan=self.ap_chan[j],
                kind=_F_DATA,
                ap=j,
                sta=sta,
                bits=frame.frame_bits(self.mac),
                rate_bps=self.rate_bps[sta],
            )

    # ------------------------------------------------------- transmissions

    def _commit(
        self,
        src: int,
        chan: int,
        kind: int,
        ap: int,
        sta: int,
        bits: int,
        rate_bps: float,
        window_end: int = 0,
    ) -> None:
        """Put a frame on the air. ``src`` is a node key: AP j, or M + sta."""
        now = self._now
        dur = airtime_us(bits, rate_bps)
        t1 = now + dur
        # Virtual carrier sense: the header's duration field projects the
        # rest of the exchange, and everyone who hears it defers that long.
        if kind == _F_RTS or kind == _F_CTS:
            head = self.aps[ap].queue[0]
            data_air = airtime_us(head.frame_bits(self.mac), self.rate_bps[sta])
            if kind == _F_RTS:
                nav_end = t1 + 3 * self.sifs + self.cts_air + data_air + self.ack_air
            else:
                nav_end = t1 + 2 * self.sifs + data_air + self.ack_air
        elif kind == _F_DATA:
            nav_end = t1 + self.sifs + self.ack_air
            self._link(ap, sta).attempt_frames += 1
        else:
            nav_end = t1
        tx = _Tx(src, chan, now, t1, kind, ap, sta, rate_bps, nav_end)
        is_ap_src = src < self.M

        if is_ap_src:
            for other in self.active[chan].values():
                if other.src < self.M and other.src in self.domain[src]:
                    self.result.exclusivity_violations += 1
            hi = min(t1, self.busy_to_us)
            lo = max(now, self.busy_from_us)
            if hi > lo:
                self.result.ap_tx_air_us[src] += hi - lo

        self.active[chan][src] = tx

        # Sensing updates at co-channel APs.
        row = self.ap_ap_mw[src] if is_ap_src else self.sta_ap_mw[src - self.M]
        for m in self.aps_on_chan[chan]:
            if m == src:
                continue
            p = row[m]
            if p > self.cca_mw and nav_end > self.nav[m]:
                self.nav[m] = nav_end
            s = self.sensed[m] + p
            self.sensed[m] = s
            if not self.busy[m] and s > self.cca_mw:
                self.busy[m] = True
                self._poke_ap(m, now, True)

        # Contending STAs sense AP energy only.
        if is_ap_src and self.contending_stas[chan]:
            dl_row = self.ap_sta_mw[src]
            for i in list(self.contending_stas[chan]):
                p = dl_row[i]
                if p > self.cca_mw:
                    ps = self.sta_probe[i]
                    if nav_end > ps.nav:
                        ps.nav = nav_end
                s = self.sta_sensed[i] + p
                self.sta_sensed[i] = s
                if s > self.cca_mw:
                    self._poke_sta(i, now, True)

        # Interference piles onto every reception in progress on the channel.
        if self.receptions[chan]:
            for rx_key, rec in self.receptions[chan].items():
                if rx_key == src:
                    rec.dead = True  # half duplex: receiver started talking
                    continue
                if rec.src == src:
                    continue
                p = self._power_at(src, rx_key)
                if p > 0.0:
                    rec.energy += rec.cur_i * (now - rec.last_t)
                    rec.cur_i += p
                    rec.last_t = now
                    if rec.data and not self.mean_sinr_model and not rec.dead:
                        if self._sinr_db(rec.signal, rec.cur_i) < rec.req_db:
                            rec.dead = True

        # Passive interference listeners (probe measurement windows).
        if is_ap_src and self.listeners[chan]:
            dl_row = self.ap_sta_mw[src]
            for i, lst in self.listeners[chan].items():
                if src in lst.allowed:
                    lst.energy += lst.cur_i * (now - lst.last_t)
                    lst.cur_i += dl_row[i]
                    lst.last_t = now

        # Open a reception at the destination when it can actually listen.
        rx_key = self._rx_key_for(tx)
        if rx_key is not None and rx_key not in self.receptions[chan]:
            signal = self._power_at(src, rx_key)
            cur_i = 0.0
            for other_key, other in self.active[chan].items():
                if other_key == src:
                    continue
                cur_i += self._power_at(other_key, rx_key)
            req = (
                self.req_db[sta]
                if kind == _F_DATA
                else BASIC_RATE_FLOOR_DB
            )
            rec = _Rx(src, signal, req, now, cur_i, kind == _F_DATA)
            if rec.data and not self.mean_sinr_model:
                if self._sinr_db(signal, cur_i) < req:
                    rec.dead = True
            self.receptions[chan][rx_key] = rec

        self._push(t1, _EV_TX_END, chan, src)

    def _power_at(self, src_key: int, rx_key: int) -> float:
        """Received power of src's signal at rx (0 for unmodeled pairs)."""
        if src_key < self.M:
            if rx_key < self.M:
                return self.ap_ap_mw[src_key][rx_key]
            return self.ap_sta_mw[src_key][rx_key - self.M]
        if rx_key < self.M:
            return self.sta_ap_mw[src_key - self.M][rx_key]
        return 0.0  # STA-to-STA propagation is out of scope

    def _rx_key_for(self, tx: _Tx) -> Optional[int]:
        """Destination node key if the destination can receive this frame."""
        kind = tx.kind
        if kind in (_F_CTS, _F_ACK, _F_PREQ):
            j = tx.ap
            if self.aps[j].state == _ST_TX:
                return None
            return j
        sta = tx.sta
        if kind == _F_PRES:
            ps = self.sta_probe.get(sta)
            if ps is None or ps.window is None or ps.window.ap != tx.src:
                return None
            if ps.state == _ST_TX:
                return None
            return self.M + sta
        # RTS or DATA toward a STA: it must be on its serving channel and
        # not off scanning a candidate.
        if self.tuned[sta] != tx.chan:
            return None
        ps = self.sta_probe.get(sta)
        if ps is not None and (ps.window is not None or ps.state == _ST_TX):
            return None
        return self.M + sta

    def _sinr_db(self, signal: float, interference: float) -> float:
        denom = interference + self.noise_mw
        if signal <= 0.0:
            return -1e9
        return 10.0 * math.log10(signal / denom)

    def _on_tx_end(self, chan: int, src: int) -> None:
        now = self._now
        tx = self.active[chan].pop(src)
        is_ap_src = src < self.M

        row = self.ap_ap_mw[src] if is_ap_src else self.sta_ap_mw[src - self.M]
        for m in self.aps_on_chan[chan]:
            if m == src:
                continue
            p = row[m]
            if p > 0.0:
                s = self.sensed[m] - p
                self.sensed[m] = 0.0 if s < 1e-300 else s
                if self.busy[m] and self.sensed[m] <= self.cca_mw:
                    self.busy[m] = False
                    self._poke_ap(m, now, False)

        if is_ap_src and self.contending_stas[chan]:
            dl_row = self.ap_sta_mw[src]
            for i in list(self.contending_stas[chan]):
                s = self.sta_sensed[i] - dl_row[i]
                self.sta_sensed[i] = 0.0 if s < 1e-300 else s
                if s <= self.cca_mw:
                    self._poke_sta(i, now, False)

        if self.receptions[chan]:
            for rx_key, rec in self.receptions[chan].items():
                if rec.src == src:
                    continue
                p = self._power_at(src, rx_key)
                if p > 0.0:
                    rec.energy += rec.cur_i * (now - rec.last_t)
                    rec.cur_i = max(0.0, rec.cur_i - p)
                    rec.last_t = now

        if is_ap_src and self.listeners[chan]:
            dl_row = self.ap_sta_mw[src]
            for i, lst in self.listeners[chan].items():
                if src in lst.allowed:
                    lst.energy += lst.cur_i * (now - lst.last_t)
                    lst.cur_i = max(0.0, lst.cur_i - dl_row[i])
                    lst.last_t = now

        # Resolve the reception for this frame, if one was opened.
        dst = self._dst_key(tx)
        rec = self.receptions[chan].pop(dst, None) if dst is not None else None
        ok = False
        signal = 0.0
        if rec is not None and rec.src == src:
            signal = rec.signal
            rec.energy += rec.cur_i * (now - rec.last_t)
            rec.last_t = now
            if not rec.dead:
                if self.mean_sinr_model or not rec.data:
                    mean_i = rec.energy / (now - rec.t0) if now > rec.t0 else rec.cur_i
                    ok = self._sinr_db(rec.signal, mean_i) >= rec.req_db
                else:
                    ok = True  # min-SINR model: survived every dip
        elif rec is not None:
            # Someone else's reception was keyed here; put it back.
            self.receptions[chan][dst] = rec

        self._after_frame(tx, ok, signal)

    def _dst_key(self, tx: _Tx) -> Optional[int]:
        if tx.kind in (_F_CTS, _F_ACK, _F_PREQ):
            return tx.ap
        return self.M + tx.sta

    # -------------------------------------------------- frame-chain logic

    def _after_frame(self, tx: _Tx, ok: bool, signal_mw: float) -> None:
        now = self._now
        kind = tx.kind
        j = tx.ap
        sta = tx.sta
        st = self.aps[j]

        if kind == _F_RTS:
            if ok:
                self._push(now + self.sifs, _EV_RESPOND, _F_CTS, self._pack(j, sta))
            st.state = _ST_WAIT
            self._push(
                now + self.sifs + self.cts_air + 1, _EV_TIMEOUT, j, st.await_epoch
            )
        elif kind == _F_CTS:
            if st.state != _ST_WAIT:
                return
            st.await_epoch += 1
            if ok:
                self._push(now + self.sifs, _EV_RESPOND, _F_DATA, self._pack(j, sta))
            else:
                self._fail_data(j, now)
        elif kind == _F_DATA:
            if ok:
                self._push(now + self.sifs, _EV_RESPOND, _F_ACK, self._pack(j, sta))
            st.state = _ST_WAIT
            self._push(
                now + self.sifs + self.ack_air + 1, _EV_TIMEOUT, j, st.await_epoch
            )
        elif kind == _F_ACK:
            if st.state != _ST_WAIT:
                return
            st.await_epoch += 1
            if ok:
                self._deliver(j, now)
            else:
                self._fail_data(j, now)
        elif kind == _F_PRES:
            st.state = _ST_IDLE
            if ok:
                raw = self.result.probes.get((sta, j))
                ps = self.sta_probe.get(sta)
                if raw is not None:
                    raw.pres_count += 1
                    raw.response_times_us.append(now)
                    raw.pres_power_mw.append(signal_mw)
                    if raw.first_pres_us < 0:
                        raw.first_pres_us = now
                    if raw.cycle_open and raw.last_preq_us >= 0:
                        raw.delay_sum_us += now - raw.last_preq_us
                        raw.delay_pairs += 1
                        raw.cycle_open = False
                        # Ping-pong: kick off the next probe cycle while the
                        # window has room for a full request/response pass.
                        if (
                            ps is not None
                            and ps.window is not None
                            and ps.window.ap == j
                            and ps.state == _ST_IDLE
                            and now + 2 * self.difs + self.preq_air + self.pres_air
                            < ps.window.end_us
                        ):
                            ps.attempts = 0
                            ps.backoff = -1
                            self._plan_sta(sta, now)
            self._plan_ap(j, now)
        elif kind == _F_PREQ:
            i = sta
            ps = self.sta_probe[i]
            ps.state = _ST_IDLE
            if ok and ps.window is not None and ps.window.ap == j:
                self.aps[j].mgmt.append((i, ps.window.end_us))
                self._plan_ap(j, now)

    def _pack(self, j: int, sta: int) -> int:
        return j * (self.N + 1) + sta

    def _unpack(self, packed: int) -> tuple[int, int]:
        return packed // (self.N + 1), packed % (self.N + 1)

    def _on_respond(self, kind: int, packed: int) -> None:
        j, sta = self._unpack(packed)
        chan = self.ap_chan[j]
        if kind in (_F_CTS, _F_ACK):
            # The STA answers only if it is still on this channel and not
            # occupied by a probe of its own; otherwise the AP times out.
            if self.tuned[sta] != chan or (self.M + sta) in self.active[chan]:
                return
            ps = self.sta_probe.get(sta)
            if ps is not None and (ps.window is not None or ps.state != _ST_IDLE):
                return
            self._commit(
                src=self.M + sta,
                chan=chan,
                kind=kind,
                ap=j,
                sta=sta,
                bits=(self.mac.cts_bytes if kind == _F_CTS else self.mac.ack_bytes) * 8,
                rate_bps=self.mac.basic_rate_bps,
            )
        else:  # DATA
            st = self.aps[j]
            if not st.queue:
                return
            frame = st.queue[0]
            st.state = _ST_TX
            st.cur_kind = _F_DATA
            self._commit(
                src=j,
                chan=chan,
                kind=_F_DATA,
                ap=j,
                sta=sta,
                bits=frame.frame_bits(self.mac),
                rate_bps=self.rate_bps[sta],
            )

    def _on_timeout(self, j: int, epoch: int) -> None:
        st = self.aps[j]
        if st.state == _ST_WAIT and epoch == st.await_epoch:
            st.await_epoch += 1
            self._fail_data(j, self._now)

    def _fail_data(self, j: int, now: int) -> None:
        st = self.aps[j]
        frame = st.queue[0]
        frame.retries += 1
        if frame.retries > self.mac.retry_limit:
            st.queue.popleft()
            self.result.retry_dropped += 1
            self.result.retry_dropped_by_ap[j] += 1
            link = self._link(j, frame.sta)
            link.retry_dropped += 1
            st.cw = self.mac.cw_min
            self._free_space(j, now)
        else:
            st.cw = next_cw(st.cw, False, self.mac)
        st.state = _ST_IDLE
        st.backoff = -1
        self._plan_ap(j, now)

    def _deliver(self, j: int, now: int) -> None:
        st = self.aps[j]
        frame = st.queue.popleft()
        self.result.delivered += 1
        self.result.delivered_by_ap[j] += 1
        link = self._link(j, frame.sta)
        link.delivered_frames += 1
        link.delivered_bits += frame.payload_bytes * 8
        delay_s = (now - frame.first_contention_us) / 1e6
        link.delay_sum_s += delay_s
        if self.keep_delay_samples:
            link.delays_s.append(delay_s)
        st.cw = self.mac.cw_min
        st.state = _ST_IDLE
        st.backoff = -1
        self._free_space(j, now)
        self._plan_ap(j, now)

    def _link(self, j: int, sta: int) -> LinkStats:
        key = (j, sta)
        link = self.result.links.get(key)
        if link is None:
            rate = self.rate_bps[sta] / 1e6
            link = LinkStats(ap=j, sta=sta, rate_mbps=rate)
            self.result.links[key] = link
        return link

    # ------------------------------------------------------------ arrivals

    def _on_arrival(self, j: int) -> None:
        st = self.aps[j]
        st.arr_pending = False
        sched = self.schedules[j]
        if st.arr_ptr >= sched.times_us.size:
            return
        idx = st.arr_ptr
        st.arr_ptr += 1
        size = int(sched.sizes[idx])
        pick = min(int(sched.dest_u[idx] * len(st.assoc)), len(st.assoc) - 1)
        dest = st.assoc[pick]
        frame = Frame(
            sta=dest, payload_bytes=size, arrival_us=int(sched.times_us[idx])
        )
        st.queue.append(frame)
        if len(st.queue) < self.mac.buffer_size:
            self._schedule_next_arrival(j)
        if st.state == _ST_IDLE:
            self._plan_ap(j, self._now)

    def _schedule_next_arrival(self, j: int) -> None:
        st = self.aps[j]
        if st.arr_pending:
            return
        sched = self.schedules[j]
        if st.arr_ptr >= sched.times_us.size:
            return
        t = int(sched.times_us[st.arr_ptr])
        if t > self.duration_us:
            return
        st.arr_pending = True
        self._push(t, _EV_ARRIVAL, j)

    def _free_space(self, j: int, now: int) -> None:
        """A queue slot opened: bulk-account the arrivals we skipped."""
        if self.schedules is None or not self.aps[j].assoc:
            return
        st = self.aps[j]
        if st.arr_pending:
            return
        sched = self.schedules[j]
        k = sched.count_until(now)
        if k > st.arr_ptr:
            self.result.buffer_dropped += k - st.arr_ptr
            self.result.buffer_dropped_by_ap[j] += k - st.arr_ptr
            st.arr_ptr = k
        self._schedule_next_arrival(j)

    # ---------------------------------------------------------- probe STAs

    def _plan_sta(self, i: int, now: int) -> None:
        ps = self.sta_probe[i]
        if ps.window is None or ps.state == _ST_TX:
            return
        chan = self.ap_chan[ps.window.ap]
        if i not in self.sta_sensed:
            level = 0.0
            for src_key, tx in self.active[chan].items():
                if src_key < self.M:
                    p = self.ap_sta_mw[src_key][i]
                    level += p
                    if p > self.cca_mw and tx.nav_end > ps.nav:
                        ps.nav = tx.nav_end
            self.sta_sensed[i] = level
            self.contending_stas[chan].add(i)
        if ps.backoff < 0:
            ps.backoff = draw_backoff(self.mac.cw_min, self.rng)
        if self.sta_sensed[i] > self.cca_mw:
            ps.state = _ST_DEFER
            return
        base = self._grid(max(now, ps.nav) + self.difs)
        ps.base_t = base
        ps.state = _ST_BACKOFF
        ps.epoch += 1
        self._push(
            base + ps.backoff * self.slot,
            _EV_TX_START,
            -(i + 1),
            ps.epoch,
            jitter=self.rng.random(),
        )

    def _poke_sta(self, i: int, now: int, now_busy: bool) -> None:
        ps = self.sta_probe.get(i)
        if ps is None:
            return
        if now_busy:
            if ps.state == _ST_BACKOFF:
                consumed = (now - ps.base_t) // self.slot
                if consumed > 0:
                    ps.backoff = max(0, ps.backoff - consumed)
                ps.state = _ST_DEFER
                ps.epoch += 1
        else:
            if ps.state == _ST_DEFER:
                self._plan_sta(i, now)

    def _deregister_contender(self, i: int) -> None:
        self.sta_sensed.pop(i, None)
        for chan_set in self.contending_stas:
            chan_set.discard(i)

    def _on_window_start(self, sta: int, ap: int) -> None:
        now = self._now
        ps = self.sta_probe[sta]
        pw = None
        for w in self.sta_windows[sta]:
            if w.ap == ap and w.start_us == now:
                pw = w
                break
        if pw is None:
            return
        ps.window = pw
        ps.attempts = 0
        ps.backoff = -1
        ps.state = _ST_IDLE
        chan = self.ap_chan[ap]
        old_chan = self.tuned[sta]
        if old_chan >= 0 and old_chan != chan:
            rec = self.receptions[old_chan].get(self.M + sta)
            if rec is not None:
                rec.dead = True  # retuning mid-frame kills the reception
        self.tuned[sta] = chan
        # Start the passive interference listener for this candidate.
        allowed = set(self.aps_on_chan[chan]) - {ap} - self.domain[ap]
        cur = 0.0
        for src_key in self.active[chan]:
            if src_key in allowed:
                cur += self.ap_sta_mw[src_key][sta]
        self.listeners[chan][sta] = _Listener(allowed, cur, now)
        leftover = self.active[chan].get(self.M + sta)
        if leftover is not None:
            # A frame of ours from the previous window is still on the air
            # (same-channel adjacent windows); contend once it has ended.
            self._push(leftover.t1, _EV_PREQ_RETRY, sta, pw.start_us)
        else:
            self._plan_sta(sta, now)
        span = pw.end_us - pw.start_us
        for quarter in (1, 2, 3):  # stall-recovery checks inside the window
            self._push(pw.start_us + span * quarter // 4, _EV_PREQ_RETRY, sta, pw.start_us)

    def _on_window_end(self, sta: int, ap: int) -> None:
        now = self._now
        ps = self.sta_probe[sta]
        chan = self.ap_chan[ap]
        lst = self.listeners[chan].pop(sta, None)
        if lst is not None:
            lst.energy += lst.cur_i * (now - lst.last_t)
            raw = self.result.probes[(sta, ap)]
            raw.interference_energy_mw_us = lst.energy
        if ps.window is not None and ps.window.ap == ap:
            ps.window = None
            ps.state = _ST_IDLE
            ps.epoch += 1
            self._deregister_contender(sta)
        if self.serving_chan[sta] != chan:
            rec = self.receptions[chan].get(self.M + sta)
            if rec is not None:
                rec.dead = True
        self.tuned[sta] = self.serving_chan[sta]

    def _on_preq_retry(self, sta: int, window_start: int) -> None:
        ps = self.sta_probe[sta]
        if ps.window is None or ps.window.start_us != window_start:
            return
        raw = self.result.probes[(sta, ps.window.ap)]
        if not raw.cycle_open and raw.last_preq_us >= 0:
            return  # last cycle answered; ping-pong is self-sustaining
        if ps.state in (_ST_BACKOFF, _ST_DEFER, _ST_TX):
            return
        if ps.attempts >= 3:
            return
        ps.backoff = -1
        self._plan_sta(sta, self._now)

    def _on_sta_tx_start(self, i: int, epoch: int) -> None:
        ps = self.sta_probe[i]
        if epoch != ps.epoch or ps.state != _ST_BACKOFF or ps.window is None:
            return
        chan = self.ap_chan[ps.window.ap]
        if self.sta_sensed.get(i, 0.0) > self.cca_mw or (self.M + i) in self.active[chan]:
            # Busy medium, or our previous frame (carried over from an
            # adjacent window on the same channel) is still on the air.
            ps.backoff = 0
            ps.state = _ST_DEFER
            return
        ap = ps.window.ap
        ps.state = _ST_TX
        ps.attempts += 1
        ps.backoff = -1
        self._deregister_contender(i)
        raw = self.result.probes[(i, ap)]
        if raw.preq_sent_us < 0:
            raw.preq_sent_us = self._now
        raw.last_preq_us = self._now
        raw.cycle_open = True
        self._commit(
            src=self.M + i,
            chan=self.ap_chan[ap],
            kind=_F_PREQ,
            ap=ap,
            sta=i,
            bits=self.mac.probe_req_bytes * 8,
            rate_bps=self.mac.basic_rate_bps,
        )

    # ----------------------------------------------------------- finish up

    def _finalize(self) -> None:
        res = self.result
        end = self.duration_us
        res.busy_window_us = min(end, self.busy_to_us) - self.busy_from_us
        if self.schedules is not None:
            for j in range(self.M):
                st = self.aps[j]
                if not st.assoc:
                    continue
                total = self.schedules[j].count_until(end)
                res.arrived += total
                res.arrived_by_ap[j] = total
                if total > st.arr_ptr:
                    res.buffer_dropped += total - st.arr_ptr
                    res.buffer_dropped_by_ap[j] += total - st.arr_ptr
                    st.arr_ptr = total
                res.residual += len(st.queue)
                res.residual_by_ap[j] = len(st.queue)
        for ps in self.sta_probe.values():
            ps.window = None
