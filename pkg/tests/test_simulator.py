import math
import pickle

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from highway_ips.channel import analytic_outage
from highway_ips.numerics import DomainError, NumericError, RngStream
from highway_ips.simulator import (HighwaySnapshot, SimConfig, _find_bridge, _Radio,
                                   generate_highway, harvest_statistics, measure_ips,
                                   partition_clusters, propagate, run_replicate)


def cfg_for(model, **kw):
    base = dict(lambda_e=1.0, lambda_w=1.0, v=30.0, road_length=2000.0, warmup_margin=100.0)
    base.update(kw)
    return SimConfig(model, **base)


def lane(*clusters):
    return np.array(sorted(x for c in clusters for x in c), dtype=float)


# ---------------------------------------------------------------------------
# traffic and clusters


def test_highway_counts_and_gaps(model25):
    cfg = SimConfig(model25, 0.05, 0.05, 30.0, road_length=1e5)
    snap = generate_highway(cfg, RngStream(2))
    n = snap.east_positions.size
    assert abs(n - 5000) < 5 * math.sqrt(5000)
    assert abs(np.count_nonzero(snap.west_positions < 1e5) - 5000) < 5 * math.sqrt(5000)
    assert np.all(np.diff(snap.east_positions) >= 0)
    gaps = np.diff(snap.east_positions)
    assert stats.kstest(gaps, stats.expon(scale=20).cdf).pvalue > 0.01


def test_highway_reproducible(model25):
    cfg = SimConfig(model25, 0.05, 0.05, 30.0, road_length=30_000)
    a = generate_highway(cfg, RngStream(5, 3))
    b = generate_highway(cfg, RngStream(5, 3))
    assert a.east_positions.tobytes() == b.east_positions.tobytes()
    assert a.west_positions.tobytes() == b.west_positions.tobytes()


def test_snapshot_advance_keeps_order(model25):
    snap = generate_highway(SimConfig(model25, 0.05, 0.05, 30.0, road_length=20_000), RngStream(1))
    later = snap.advance(3.0, 30.0)
    assert later.time == 3.0
    assert np.array_equal(later.east_positions, snap.east_positions)
    assert np.allclose(later.west_positions, snap.west_positions - 180.0)
    assert np.all(np.diff(later.west_positions) >= 0)


def test_partition_examples(model25):
    cl = partition_clusters([0, 10, 30], 15)
    assert [(c.start, c.stop) for c in cl] == [(0, 2), (2, 3)]
    assert (cl[0].lo, cl[0].hi) == (0, 10)
    assert partition_clusters([], 15) == []
    cl = partition_clusters([0, 10, 20, 100], model25.r, model25)
    assert cl[0].mimo_range == pytest.approx(model25.r * model25.F(3))
    # a lone car sends with the single-transmitter law
    assert cl[1].mimo_range == pytest.approx(model25.r)
    cl = partition_clusters([100.0], model25.r, model25, singleton_tx_law=False)
    assert cl[0].mimo_range == pytest.approx(model25.r * model25.F(1))


def quadratic_partition(pos, r):
    n = len(pos)
    big = np.concatenate([[0], np.cumsum(np.diff(pos) > r)])
    # i and j share a cluster iff no long gap lies between them
    same = big[None, :] == big[:, None]
    labels = np.argmax(same, axis=1)
    out, i = [], 0
    while i < n:
        j = i
        while j < n and labels[j] == labels[i]:
            j += 1
        out.append((i, j))
        i = j
    return out


@given(st.lists(st.floats(0, 2000, allow_nan=False), max_size=80), st.floats(1.0, 100.0))
def test_partition_matches_quadratic_reference(xs, r):
    pos = np.sort(np.array(xs))
    assert [(c.start, c.stop) for c in partition_clusters(pos, r)] == quadratic_partition(pos, r)


def test_partition_large_reference_and_idempotence():
    pos = np.sort(np.random.default_rng(0).uniform(0, 20_000, 1000))
    cl = partition_clusters(pos, 25.0)
    assert [(c.start, c.stop) for c in cl] == quadratic_partition(pos, 25.0)
    for c in cl[:50]:
        again = partition_clusters(pos[c.start:c.stop], 25.0)
        assert len(again) == 1 and again[0].size == c.size


# ---------------------------------------------------------------------------
# forwarding


def test_fully_connected_lane_advances_one_cluster_per_attempt(model25):
    east = lane(*[(40.0 * j, 40.0 * j + 10) for j in range(52)])
    cfg = cfg_for(model25, zero_outage=True)
    tr = propagate(cfg, HighwaySnapshot(east, np.empty(0)), RngStream(0))
    hops = [(t, f) for t, f, kind in tr.events if kind == "hop"]
    assert not tr.censored
    assert np.allclose(np.diff([f for _, f in hops]), 40.0)
    assert np.allclose([t for t, _ in hops], 0.01 * np.arange(1, len(hops) + 1))
    assert tr.arrival_time == pytest.approx(0.01 * len(hops))


def test_hop_delay_follows_retransmission_law(model25):
    east = lane(*[(70.0 * j, 70.0 * j + 10) for j in range(3000)])
    cfg = cfg_for(model25, road_length=210_000.0, warmup_margin=1000.0)
    tr = propagate(cfg, HighwaySnapshot(east, np.empty(0)), RngStream(4))
    p_o = analytic_outage(model25.config, 60.0, 2, 2)
    dt = np.array([g.tx_time for g in tr.gaps])
    assert dt.mean() == pytest.approx(0.01 / (1 - p_o), abs=4 * dt.std() / math.sqrt(dt.size))


def bridged_layout(model):
    """Two eastbound pairs 140 m apart and one westbound pair arriving from the east."""
    east = lane((490.0, 500.0), (640.0, 650.0))
    west = lane((2000.0, 2010.0))
    return HighwaySnapshot(east, west)


def test_hand_built_bridge(model25):
    cfg = cfg_for(model25, road_length=1000.0, warmup_margin=499.0, lambda_e=1.5, zero_outage=True, time_cap=100.0)
    tr = propagate(cfg, bridged_layout(model25), RngStream(0))
    R = model25.r * model25.F(2)
    # both relay hops just fit: the westbound head is R from the transmitter tail
    tb = max((2000 - 500 - R) / 60, (2000 - 650 - R) / 60)
    assert [k for _, _, k in tr.events] == ["block-start", "block-end", "hop"]
    assert tr.events[0][:2] == (0.0, 500.0)
    assert tr.events[1][0] == pytest.approx(tb, abs=1e-12)
    assert tr.events[2][0] == pytest.approx(tb + 0.02, abs=1e-12)
    assert tr.events[2][1] == 650.0
    g = tr.gaps[0]
    assert (g.length, g.hops, g.bridged) == (140.0, 2, False)
    assert g.wait == pytest.approx(tb)
    assert tr.arrival_time == pytest.approx(tb + 0.02)
    h = harvest_statistics([tr])
    assert (h.blocked_gaps, h.vehicle_gaps, h.cycles) == (1, 2, 0)
    assert h.bridged_fraction == 0.5
    assert h.unbridged_gaps.tolist() == [140.0]


def test_point_bridging_needs_a_larger_cluster(model25):
    # treated as a point the westbound pair cannot cover 140 m
    cfg = cfg_for(model25, road_length=1000.0, warmup_margin=499.0, lambda_e=1.5,
                  zero_outage=True, extent_bridging=False, time_cap=100.0)
    assert propagate(cfg, bridged_layout(model25), RngStream(0)).censored


def test_small_tau_leaves_only_the_wait(model25):
    cfg = cfg_for(model25, road_length=1000.0, warmup_margin=499.0, lambda_e=1.5,
                  zero_outage=True, tau=1e-9, time_cap=100.0)
    tr = propagate(cfg, bridged_layout(model25), RngStream(0))
    assert tr.arrival_time == pytest.approx(tr.gaps[0].wait, rel=1e-9)


def test_empty_westbound_lane_censors(model25):
    cfg = cfg_for(model25, lambda_w=0.0)
    tr = propagate(cfg, HighwaySnapshot(lane((100.0, 110.0), (700.0,), (1990.0,)), np.empty(0)),
                   RngStream(0))
    assert tr.censored and math.isnan(tr.arrival_time)
    assert tr.events[-1][2] == "block-start"


def reference_alignment(cfg, model, t0, tx, rx, n_tx, n_rx, west, step):
    """First time on a fine grid at which one westbound cluster reaches both sides."""
    two_v = 2 * cfg.v
    best = math.inf
    for c in partition_clusters(west, model.r):
        n_w = c.size
        R1 = model.r * float(model.F_tx(n_tx, n_w))
        R2 = model.r * float(model.F_tx(n_w, n_rx))
        t_lo = max(t0, (c.lo - rx[1] - 400) / two_v)
        t_hi = (c.hi - tx[0] + 400) / two_v
        if t_hi < t_lo:
            continue
        t = t0 + step * np.arange(math.floor((t_lo - t0) / step), math.ceil((t_hi - t0) / step) + 1)
        a, b = c.lo - two_v * t, c.hi - two_v * t
        d1 = np.maximum.reduce([np.zeros_like(a), a - tx[1], tx[0] - b])
        d2 = np.maximum.reduce([np.zeros_like(a), rx[0] - b, a - rx[1]])
        ok = np.flatnonzero((d1 <= R1) & (d2 <= R2) & (t >= t0))
        if ok.size:
            best = min(best, t[ok[0]])
    return best


@pytest.mark.parametrize("seed", range(6))
def test_alignment_matches_fine_time_steps(model25, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(80, 220)
    n_tx, n_rx = int(rng.integers(1, 4)), int(rng.integers(1, 4))
    tx = (0.0, 10.0 * (n_tx - 1))
    rx = (tx[1] + x, tx[1] + x + 10.0 * (n_rx - 1))
    west = np.sort(rng.uniform(0, 4000, rng.poisson(0.05 * 4000)))
    cfg = cfg_for(model25)
    w_lo, w_hi, w_n = (np.array(v) for v in zip(*[(c.lo, c.hi, c.size)
                                                   for c in partition_clusters(west, model25.r)]))
    t0 = float(rng.uniform(0, 5))
    tb, *_ = _find_bridge(cfg, _Radio(cfg, RngStream(0)), t0, tx[0], tx[1], rx[0], rx[1], n_tx, n_rx,
                          w_lo, w_hi, w_n, 60.0, model25.r, 1e6)
    ref = reference_alignment(cfg, model25, t0, tx, rx, n_tx, n_rx, west, cfg.tau / 100)
    if tb is None:
        assert math.isinf(ref)
    else:
        assert abs(tb - ref) <= cfg.tau


# ---------------------------------------------------------------------------
# replicates


@pytest.fixture(scope="module")
def traces(model25):
    cfg = SimConfig(model25, 0.05, 0.05, 30.0, road_length=20_000)
    return [run_replicate(cfg, k) for k in range(6)]


def test_trace_invariants(traces):
    for tr in traces:
        fronts = [f for _, f, _ in tr.events]
        assert all(b >= a for a, b in zip(fronts, fronts[1:]))
        times = [t for t, _, _ in tr.events]
        assert all(b >= a - 1e-12 for a, b in zip(times, times[1:]))
        kinds = [k for _, _, k in tr.events if k.startswith("block")]
        assert all(k == ("block-start" if i % 2 == 0 else "block-end") for i, k in enumerate(kinds))


def test_replicates_are_byte_reproducible(model25, traces):
    cfg = SimConfig(model25, 0.05, 0.05, 30.0, road_length=20_000)
    again = run_replicate(cfg, 3)
    assert pickle.dumps((again.events, again.gaps)) == pickle.dumps((traces[3].events, traces[3].gaps))


def test_harvest_cycles_tile_the_route(traces):
    for tr in traces:
        h = harvest_statistics([tr])
        blocks = [g for g in tr.gaps if g.wait > 0]
        if len(blocks) > 1:
            assert h.cycle_distances.sum() == pytest.approx(blocks[-1].frontier - blocks[0].frontier)
            assert h.cycles == len(blocks) - 1
        assert h.blocking_durations.size == len(blocks)
        assert 0 <= h.bridged_fraction <= 1
    with pytest.raises(DomainError):
        harvest_statistics([])


def test_measure_ips_basics(model25):
    cfg = SimConfig(model25, 0.05, 0.05, 30.0, road_length=20_000)
    est = measure_ips(cfg, 4, keep_traces=True)
    assert len(est.traces) == 4 and est.censoring_rate == 0.0
    want = [(t.dest_pos - t.source_pos) / t.arrival_time for t in est.traces]
    assert est.mean == pytest.approx(np.mean(want))
    with pytest.raises(DomainError):
        measure_ips(cfg, 0)
    with pytest.raises(NumericError):
        measure_ips(SimConfig(model25, 0.05, 0.0, 30.0, road_length=20_000), 2)


def test_channel_mode_runs(model25):
    cfg = SimConfig(model25, 0.05, 0.05, 30.0, road_length=20_000, mode="channel")
    tr = run_replicate(cfg, 0)
    assert not tr.censored
    # channel mode quantises every delay on the retransmission grid
    assert all(abs(g.tx_time / 0.01 - round(g.tx_time / 0.01)) < 1e-6 for g in tr.gaps)


def test_faster_sparse_traffic_spreads_faster(model25):
    slow = measure_ips(SimConfig(model25, 0.025, 0.025, 15.0), 20)
    fast = measure_ips(SimConfig(model25, 0.025, 0.025, 30.0), 20)
    assert fast.mean > slow.mean


def test_config_validation(model25):
    with pytest.raises(DomainError):
        SimConfig(model25, 0.05, 0.05, 30.0, road_length=1000)
    with pytest.raises(DomainError):
        SimConfig(model25, 0.05, 0.05, 0.0)
    with pytest.raises(DomainError):
        SimConfig(model25, 0.05, 0.05, 30.0, mode="exact")
    cfg = SimConfig(model25, 0.05, 0.05, 30.0)
    assert cfg.resolved_time_cap() >= 10 * (cfg.dest - cfg.source) / 60
