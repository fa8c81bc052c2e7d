"""Monte-Carlo highway: Poisson traffic in both directions, cluster forwarding,
opportunistic bridging through westbound clusters, retransmissions every tau.

Everything runs in the eastbound co-moving frame: eastbound cars are static
and westbound cars drift west at ``2 v``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import channel
from .channel import RangeModel
from .numerics import DomainError, NumericError, RngStream


@dataclass(frozen=True)
class SimConfig:
    range_model: RangeModel
    lambda_e: float
    lambda_w: float
    v: float
    tau: float = 0.01
    road_length: float = 50_000.0
    warmup_margin: float = 1_000.0
    mode: Literal["deterministic", "channel"] = "deterministic"
    seed: int = 0
    time_cap: float | None = None
    # a westbound cluster relays along its own length, not only from a point
    extent_bridging: bool = True
    # a lone car sends with the single-transmitter law
    singleton_tx_law: bool = True
    # outage forced to zero, every attempt succeeds (deterministic mode only)
    zero_outage: bool = False

    def __post_init__(self):
        if not (self.lambda_e > 0 and self.lambda_w >= 0 and self.v > 0 and self.tau > 0):
            raise DomainError("intensities, speed and tau must be positive")
        if self.mode not in ("deterministic", "channel"):
            raise DomainError(f"unknown mode {self.mode!r}")
        if self.road_length * self.lambda_e < 1000:
            raise DomainError("road must hold at least 1000 mean gaps")
        if not 0 <= self.warmup_margin < self.road_length / 2:
            raise DomainError("warmup margin must leave a route")

    @property
    def source(self) -> float:
        return self.warmup_margin

    @property
    def dest(self) -> float:
        return self.road_length - self.warmup_margin

    def expected_hops(self) -> float:
        r = self.range_model.r
        return (self.dest - self.source) * self.lambda_e * math.exp(-self.lambda_e * r)

    def resolved_time_cap(self) -> float:
        if self.time_cap is not None:
            return self.time_cap
        return max(1e4 * self.tau * self.expected_hops(), 10 * (self.dest - self.source) / (2 * self.v))


@dataclass
class HighwaySnapshot:
    east_positions: np.ndarray
    west_positions: np.ndarray
    time: float = 0.0

    def advance(self, dt: float, v: float) -> "HighwaySnapshot":
        """The same traffic ``dt`` seconds later; only the westbound lane moves."""
        return HighwaySnapshot(self.east_positions, self.west_positions - 2 * v * dt, self.time + dt)


@dataclass
class Cluster:
    start: int
    stop: int  # exclusive
    lo: float
    hi: float
    mimo_range: float

    @property
    def size(self) -> int:
        return self.stop - self.start


@dataclass
class GapRecord:
    length: float
    n_tx: int
    n_rx: int
    wait: float
    tx_time: float
    hops: int
    bridged: bool  # crossed without waiting
    start_time: float
    frontier: float


@dataclass
class PacketTrace:
    source_pos: float
    dest_pos: float
    events: list = field(default_factory=list)  # (time, frontier, kind)
    gaps: list = field(default_factory=list)
    cluster_sizes: list = field(default_factory=list)
    vehicles_passed: int = 0
    arrival_time: float = math.nan
    censored: bool = False


def _poisson_line(rng: RngStream, lam: float, lo: float, hi: float) -> np.ndarray:
    n = rng.generator.poisson(lam * (hi - lo))
    return np.sort(rng.generator.uniform(lo, hi, n))


def generate_highway(cfg: SimConfig, rng: RngStream) -> HighwaySnapshot:
    """Independent Poisson lanes. The westbound lane extends far enough east
    to feed the route for the whole time cap."""
    east = _poisson_line(rng, cfg.lambda_e, 0.0, cfg.road_length)
    reach = cfg.road_length + 2 * cfg.v * cfg.resolved_time_cap()
    west = _poisson_line(rng, cfg.lambda_w, 0.0, reach) if cfg.lambda_w > 0 else np.empty(0)
    return HighwaySnapshot(east, west, 0.0)


def partition_clusters(positions, r: float, model: RangeModel | None = None,
                       singleton_tx_law: bool = True) -> list[Cluster]:
    """Maximal runs of cars with consecutive gaps no larger than ``r``.

    With a model each cluster carries ``r F(size)``; lone cars use the
    single-transmitter law when ``singleton_tx_law`` is set.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(pos) > r) + 1
    starts = np.concatenate([[0], breaks])
    stops = np.concatenate([breaks, [pos.size]])
    out = []
    for a, b in zip(starts.tolist(), stops.tolist()):
        size = b - a
        if model is None:
            rng_m = math.nan
        elif size == 1 and singleton_tx_law:
            rng_m = model.r * float(model.single_tx_table[1])
        else:
            rng_m = model.r * float(model.F(size))
        out.append(Cluster(a, b, float(pos[a]), float(pos[b - 1]), rng_m))
    return out


def _cluster_arrays(pos: np.ndarray, r: float):
    if pos.size == 0:
        e = np.empty(0)
        return e, e, np.empty(0, dtype=int)
    breaks = np.flatnonzero(np.diff(pos) > r) + 1
    starts = np.concatenate([[0], breaks])
    stops = np.concatenate([breaks, [pos.size]])
    return pos[starts], pos[stops - 1], (stops - starts)


class _Radio:
    """Per-attempt success draws for a link of given distance and sizes."""

    def __init__(self, cfg: SimConfig, rng: RngStream):
        self.cfg = cfg
        self.model = cfg.range_model
        self.rng = rng
        self.ch = self.model.config

    def gain(self, n_tx: int, n_rx: int) -> float:
        m = self.model
        n_rx = min(n_rx, m.cap)
        if n_tx == 1 and self.cfg.singleton_tx_law:
            return float(m.single_tx_table[n_rx])
        return float(m.gain_table[n_rx])

    def law(self, n_tx: int) -> int:
        if not self.model.cooperative:
            return 1
        return 1 if (n_tx == 1 and self.cfg.singleton_tx_law) else 2

    def outage(self, d: float, n_tx: int, n_rx: int) -> float:
        if not self.model.cooperative:
            return channel.analytic_outage(self.ch, d, 1, 1)
        return channel.analytic_outage(self.ch, d, n_rx, self.law(n_tx))

    def attempts(self, d: float, n_tx: int, n_rx: int) -> int:
        if self.cfg.zero_outage:
            return 1
        if self.cfg.mode == "deterministic":
            p = self.outage(d, n_tx, n_rx)
            return int(self.rng.generator.geometric(1.0 - p)) if p > 0 else 1
        # draw channels until the strongest receiver clears P_min
        law = self.law(n_tx)
        n_eff = n_rx if self.model.cooperative else 1
        thr = self.ch.P_min * d**self.ch.delta / (self.ch.P_0 * self.ch.sigma_sq)
        from .numerics import sample_noncentral_chisq
        n = 0
        while True:
            x = sample_noncentral_chisq(self.rng, 2 * law, law / self.ch.sigma_sq, (8, n_eff))
            ok = np.flatnonzero(x.max(axis=1) >= thr)
            if ok.size:
                return n + int(ok[0]) + 1
            n += 8


def propagate(cfg: SimConfig, snapshot: HighwaySnapshot, rng: RngStream) -> PacketTrace:
    """Carry one packet from the source cluster until its frontier passes the destination."""
    model = cfg.range_model
    r = model.r
    radio = _Radio(cfg, rng)
    e_lo, e_hi, e_n = _cluster_arrays(snapshot.east_positions, r)
    w_lo, w_hi, w_n = _cluster_arrays(snapshot.west_positions, r)
    if not cfg.extent_bridging:
        w_hi = w_lo
    e_lo_l, e_hi_l, e_n_l = e_lo.tolist(), e_hi.tolist(), e_n.tolist()
    two_v = 2.0 * cfg.v
    cap_t = cfg.resolved_time_cap()
    tau = cfg.tau
    quantize = cfg.mode == "channel"
    trace = PacketTrace(cfg.source, cfg.dest)

    i = bisect.bisect_left(e_hi_l, cfg.source)
    if i >= len(e_lo_l):
        raise NumericError("no eastbound car beyond the source")
    trace.source_pos = max(cfg.source, e_lo_l[i])
    t = 0.0
    # per-size gain lookups for westbound clusters
    w_n_c = np.minimum(w_n, model.cap)

    def hop(d: float, n_tx: int, n_rx: int) -> float:
        k = radio.attempts(d, n_tx, n_rx)
        for j in range(k - 1):
            trace.events.append((t + (j + 1) * tau, frontier, "retransmit"))
        return k * tau

    frontier = e_hi_l[i]
    trace.cluster_sizes.append(e_n_l[i])
    n_cl = len(e_lo_l)
    while frontier < cfg.dest:
        j = i + 1
        if j >= n_cl:
            trace.censored = True
            break
        x = e_lo_l[j] - e_hi_l[i]
        n_tx, n_rx = e_n_l[i], e_n_l[j]
        if x <= r * radio.gain(n_tx, n_rx):
            dt = hop(x, n_tx, n_rx)
            trace.gaps.append(GapRecord(x, n_tx, n_rx, 0.0, dt, 1, True, t, frontier))
            t += dt
        else:
            tb, d1, d2, nw = _find_bridge(cfg, radio, t, e_lo_l[i], e_hi_l[i], e_lo_l[j], e_hi_l[j],
                                          n_tx, n_rx, w_lo, w_hi, w_n_c, two_v, r, cap_t)
            if tb is None:
                trace.events.append((t, frontier, "block-start"))
                trace.censored = True
                break
            if quantize and tb > t:
                tb = t + math.ceil((tb - t) / tau - 1e-9) * tau
            wait = tb - t
            if wait > 0:
                trace.events.append((t, frontier, "block-start"))
                trace.events.append((tb, frontier, "block-end"))
            t = tb
            dt1 = hop(d1, n_tx, nw)
            t += dt1
            dt2 = hop(d2, nw, n_rx)
            t += dt2
            trace.gaps.append(GapRecord(x, n_tx, n_rx, wait, dt1 + dt2, 2, wait == 0, tb - wait, frontier))
        trace.vehicles_passed += e_n_l[i]
        i = j
        frontier = e_hi_l[i]
        trace.cluster_sizes.append(e_n_l[i])
        trace.events.append((t, frontier, "hop"))
        if t > cap_t:
            trace.censored = True
            break
    if not trace.censored:
        trace.arrival_time = t
    return trace


def _find_bridge(cfg, radio, t, tx_lo, tx_hi, rx_lo, rx_hi, n_tx, n_rx,
                 w_lo, w_hi, w_n, two_v, r, cap_t):
    """Earliest time ``>= t`` a westbound cluster links the two eastbound clusters.

    Returns ``(time, hop1 distance, hop2 distance, westbound size)`` or
    ``(None, ...)`` when nothing arrives before the time cap.
    """
    model = radio.model
    if w_lo.size == 0:
        return None, 0.0, 0.0, 0
    single = cfg.singleton_tx_law and model.cooperative
    g_to_w = model.single_tx_table if (n_tx == 1 and single) else model.gain_table
    r1_max = r * float(g_to_w[-1])
    r2_max = r * float(max(model.gain_table[min(n_rx, model.cap)],
                           model.single_tx_table[min(n_rx, model.cap)]))
    # clusters whose tail already passed the transmitter side cannot help
    first = int(np.searchsorted(w_hi - two_v * t, tx_lo - r1_max, side="left"))
    # the latest useful arrival is bounded by the time cap
    last = int(np.searchsorted(w_lo, tx_hi + r1_max + two_v * cap_t, side="right"))
    best = None
    chunk = 256
    k = first
    while k < last:
        sl = slice(k, min(k + chunk, last))
        a0, b0, nw = w_lo[sl], w_hi[sl], w_n[sl]
        R1 = r * g_to_w[nw]
        g_from_w = np.where((nw == 1) & single, model.single_tx_table[min(n_rx, model.cap)],
                            model.gain_table[min(n_rx, model.cap)])
        R2 = r * g_from_w
        lower = np.maximum.reduce([np.full(nw.shape, t),
                                   (a0 - tx_hi - R1) / two_v,
                                   (a0 - rx_hi - R2) / two_v])
        upper = np.minimum((b0 - tx_lo + R1) / two_v, (b0 - rx_lo + R2) / two_v)
        ok = np.flatnonzero(lower <= upper)
        if ok.size:
            m = ok[np.argmin(lower[ok])]
            cand = float(lower[m])
            if best is None or cand < best[0]:
                best = (cand, k + int(m))
        if best is not None:
            # later clusters start further east; stop once they cannot beat the best
            next_a = w_lo[min(k + chunk, last - 1)] if k + chunk < last else math.inf
            if (next_a - tx_hi - r1_max) / two_v > best[0]:
                break
        k += chunk
    if best is None or best[0] > cap_t:
        return None, 0.0, 0.0, 0
    tb, m = best
    a, b, nw = w_lo[m] - two_v * tb, w_hi[m] - two_v * tb, int(w_n[m])
    d1 = max(0.0, a - tx_hi, tx_lo - b)
    d2 = max(0.0, rx_lo - b, a - rx_hi)
    return tb, d1, d2, nw


@dataclass
class IpsEstimate:
    mean: float
    std_error: float
    censoring_rate: float
    speeds: np.ndarray
    censored: int
    traces: list = field(default_factory=list, repr=False)


def run_replicate(cfg: SimConfig, index: int) -> PacketTrace:
    rng = RngStream(cfg.seed, index)
    snap = generate_highway(cfg, rng)
    return propagate(cfg, snap, rng)


def measure_ips(cfg: SimConfig, replicates: int, keep_traces: bool = False) -> IpsEstimate:
    """Mean co-moving speed ``(dest - source) / arrival`` over independent replicates."""
    if replicates < 1:
        raise DomainError("need at least one replicate")
    speeds = []
    traces = []
    censored = 0
    for k in range(replicates):
        tr = run_replicate(cfg, k)
        if keep_traces:
            traces.append(tr)
        if tr.censored:
            censored += 1
            continue
        speeds.append((tr.dest_pos - tr.source_pos) / tr.arrival_time)
    if not speeds:
        raise NumericError("every replicate was censored", partial=0.0)
    s = np.asarray(speeds)
    se = float(s.std(ddof=1) / math.sqrt(s.size)) if s.size > 1 else math.nan
    return IpsEstimate(float(s.mean()), se, censored / replicates, s, censored, traces)


@dataclass
class HarvestedStats:
    cluster_sizes: np.ndarray
    unbridged_gaps: np.ndarray
    blocking_durations: np.ndarray
    cycle_distances: np.ndarray
    cycle_wait_times: np.ndarray
    cycle_tx_times: np.ndarray
    crossing_tx_times: np.ndarray
    vehicle_gaps: int
    blocked_gaps: int

    @property
    def bridged_fraction(self) -> float:
        """Share of inter-vehicle gaps crossed without waiting."""
        return 1.0 - self.blocked_gaps / self.vehicle_gaps

    @property
    def cycles(self) -> int:
        return len(self.cycle_distances)


def harvest_statistics(traces: list[PacketTrace]) -> HarvestedStats:
    """Empirical counterparts of the closed-form quantities.

    A cycle opens at a block and runs to the next block; partial cycles at
    either end of a trace are dropped.
    """
    if not traces:
        raise DomainError("no traces to harvest")
    sizes, unbridged, waits = [], [], []
    c_dist, c_wait, c_tx, crossing = [], [], [], []
    veh = blocked = 0
    for tr in traces:
        sizes.extend(tr.cluster_sizes[:-1] if tr.censored else tr.cluster_sizes)
        veh += tr.vehicles_passed
        open_at = None
        for g in tr.gaps:
            crossing.append(g.tx_time)
            if g.wait > 0:
                blocked += 1
                unbridged.append(g.length)
                waits.append(g.wait)
                if open_at is not None:
                    c_dist.append(g.frontier - open_at[0])
                    c_wait.append(open_at[1])
                    c_tx.append(acc_tx)
                open_at = (g.frontier, g.wait)
                acc_tx = 0.0
            if open_at is not None:
                acc_tx += g.tx_time
    f = np.asarray
    return HarvestedStats(f(sizes), f(unbridged), f(waits), f(c_dist), f(c_wait), f(c_tx),
                          f(crossing), veh, blocked)
