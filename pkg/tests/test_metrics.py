import random

import pytest
from hypothesis import given, strategies as st

from tsnsim.metrics import (
    LatencyRecord,
    LatencySummary,
    OccupancySampler,
    bound_breaches,
    cdf,
    cdf_csv,
    cdf_distance,
    latency_csv,
    occupancy_csv,
    quantile,
    record_occupancy,
)

W = 100_000_000


def brute_integral(trace, start, end):
    """Segment-by-segment integral of the step function defined by ``trace``."""
    total = 0
    level = 0
    points = [(t, lv) for t, lv in trace if t < end]
    cursor = start
    for t, lv in points:
        if t > cursor:
            total += level * (t - cursor)
            cursor = t
        level = lv
    total += level * (end - cursor)
    return total


def random_trace(rng, length, cap=64):
    t, level, out = 0, 0, []
    for _ in range(rng.randint(1, 200)):
        t += rng.randint(0, length // 50)
        if t >= length:
            break
        level = max(0, min(cap, level + rng.choice((-1, 1, 1))))
        out.append((t, level))
    return out


def test_constant_level():
    s = OccupancySampler([0], W)
    record_occupancy(s, 0, 5, 0)
    (w,) = s.finalize(W)
    assert w.avg_level == 5.0 and w.max_level == 5


def test_half_empty_half_full():
    s = OccupancySampler([0], W)
    s.record(0, 64, W // 2)
    (w,) = s.finalize(W)
    assert w.avg_level == 32.0 and w.max_level == 64


def test_level_above_capacity_rejected():
    s = OccupancySampler([0], W, capacity=64)
    with pytest.raises(ValueError):
        s.record(0, 65, 0)


def test_matches_brute_force_integration():
    rng = random.Random(77)
    for _ in range(100):
        win = rng.choice((1_000, 10_000, 33_333))
        end = win * rng.randint(1, 6) + rng.randint(0, win - 1)
        trace = random_trace(rng, end)
        s = OccupancySampler([0], win)
        for t, lv in trace:
            s.record(0, lv, t)
        windows = s.finalize(end)
        for w in windows:
            oracle = brute_integral(trace, w.window_start_ns, w.window_start_ns + w.window_len_ns)
            assert w.area == oracle
            assert w.avg_level == pytest.approx(oracle / w.window_len_ns, rel=1e-9, abs=0)
            assert 0 <= w.avg_level <= w.max_level <= 64
        assert sum(w.area for w in windows) == brute_integral(trace, 0, end)
        assert sum(w.window_len_ns for w in windows) == end


def test_window_merge_consistency():
    rng = random.Random(5)
    trace = random_trace(rng, 10 * W)
    fine, coarse = OccupancySampler([0], W), OccupancySampler([0], 5 * W)
    for t, lv in trace:
        fine.record(0, lv, t)
        coarse.record(0, lv, t)
    f = fine.finalize(10 * W)
    c = coarse.finalize(10 * W)
    for k, big in enumerate(c):
        parts = f[5 * k:5 * k + 5]
        merged = sum(p.avg_level * p.window_len_ns for p in parts) / big.window_len_ns
        assert merged == pytest.approx(big.avg_level, rel=1e-12)
        assert max(p.max_level for p in parts) == big.max_level


def test_cdf_examples():
    assert cdf([5, 5, 5]) == [(5, 1.0)]
    assert cdf([1, 2, 3, 4]) == [(1, .25), (2, .5), (3, .75), (4, 1.0)]


def test_cdf_empty_is_flagged(caplog):
    assert cdf([]) == []
    assert "empty" in caplog.text


@given(st.lists(st.integers(1, 10**6), min_size=1, max_size=300))
def test_cdf_monotone_and_terminal(values):
    out = cdf(values)
    fr = [f for _, f in out]
    xs = [x for x, _ in out]
    assert fr == sorted(fr) and fr[-1] == 1.0
    assert xs == sorted(set(values))


def test_quantiles_against_sort_oracle():
    rng = random.Random(10_000)
    values = [rng.randrange(1, 10**7) for _ in range(10_000)]
    ordered = sorted(values)
    curve = cdf(values)
    for p in (0.01, 0.1, 0.5, 0.9, 0.99, 1.0):
        q = quantile(ordered, p)
        # nearest rank: smallest value whose cumulative fraction reaches p
        assert q == next(x for x, f in curve if f >= p - 1e-12)
        assert sum(v <= q for v in values) >= p * len(values) > sum(v < q for v in values)


def test_breaches():
    recs = [LatencyRecord("st", "ST", i, 0, lat) for i, lat in enumerate([10, 30_000, 30_001, 5])]
    assert bound_breaches(recs, 30_000) == (1, [2])
    assert bound_breaches(recs[:2], 30_000) == (0, [])
    with pytest.raises(ValueError):
        bound_breaches(recs, 0)


def test_cdf_distance():
    assert cdf_distance([1, 2, 3], [1, 2, 3]) == 0.0
    assert cdf_distance([1, 1], [2, 2]) == 1.0
    assert cdf_distance([1, 2, 3, 4], [3, 4, 5, 6]) == 0.5


def test_summary_and_csvs():
    recs = [LatencyRecord("st", "ST", i, 10 * i, 10 * i + 100 + i) for i in range(100)]
    s = LatencySummary.of(recs)
    assert (s.count, s.min_ns, s.median_ns, s.p99_ns, s.max_ns) == (100, 100, 149, 198, 199)
    assert LatencySummary.of([]) is None
    lat = latency_csv(recs[:1])
    assert lat == "flow_id,class,seq,tx_ns,rx_ns,latency_ns\nst,ST,0,0,100,100\n"
    c = cdf_csv(recs[:2])
    assert c == "class,latency_ns,cum_fraction\nST,100,0.500000000\nST,101,1.000000000\n"
    s2 = OccupancySampler([0, 1], W)
    s2.record(0, 1, W // 4)
    occ = occupancy_csv(s2.finalize(W))
    assert occ.splitlines() == [
        "queue_id,window_start_ms,avg_level,max_level",
        "0,0.000000000,0.750000000,1",
        "1,0.000000000,0.000000000,0",
    ]
