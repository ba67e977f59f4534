import random

import pytest
from hypothesis import given, strategies as st

from tsnsim.gcl import CycleConfig, GateControlList, GclEntry, build_two_flow_gcl
from tsnsim.netmodel import BoundedQueue, Packet
from tsnsim.schedulers import (
    ConfigurationError,
    JitterModel,
    SchedulerPolicy,
    ShaperState,
    TokenBucket,
    initial_shaper,
    on_slot_boundary,
    pick_next,
)

MS = 1_000_000


def queues(*levels, length=1000):
    out = []
    for qid, n in enumerate(levels):
        q = BoundedQueue(qid)
        for i in range(n):
            q.push(Packet(f"f{qid}", 100 + qid, i, length))
        out.append(q)
    return out


def gcl10():
    return build_two_flow_gcl(CycleConfig.from_cycle(10 * MS), 0.7)


def gcl5():
    return build_two_flow_gcl(CycleConfig.from_cycle(5 * MS), 0.7)


class FixedLognormal:
    """Stands in for an RNG; lognormal draws come from a fixed list."""

    def __init__(self, values):
        self.values = list(values)

    def lognormvariate(self, mu, sigma):
        return self.values.pop(0)


def test_rr_alternates():
    pol = SchedulerPolicy("rr", rr_cursor=0)
    qs = queues(10, 10)
    picks = []
    for _ in range(6):
        q = pick_next(pol, qs, 0)
        qs[q].pop()
        picks.append(q)
    assert picks == [1, 0, 1, 0, 1, 0]


def test_rr_peek_does_not_move_cursor():
    pol = SchedulerPolicy("rr", rr_cursor=0)
    qs = queues(3, 3)
    assert pick_next(pol, qs, 0, commit=False) == 1
    assert pick_next(pol, qs, 0, commit=False) == 1
    assert pol.rr_cursor == 0


def test_rr_skips_empty():
    pol = SchedulerPolicy("rr", rr_cursor=0)
    assert pick_next(pol, queues(4, 0), 0) == 0
    assert pick_next(pol, queues(0, 0), 0) is None


@given(n0=st.integers(50, 200), n1=st.integers(50, 200), steps=st.integers(1, 100))
def test_rr_fair_while_backlogged(n0, n1, steps):
    pol = SchedulerPolicy("rr")
    qs = queues(n0, n1)
    served = [0, 0]
    for _ in range(steps):
        q = pick_next(pol, qs, 0)
        qs[q].pop()
        served[q] += 1
    assert abs(served[0] - served[1]) <= 1


@given(levels=st.tuples(st.integers(0, 3), st.integers(0, 3)))
def test_sp_prefers_st(levels):
    q = pick_next(SchedulerPolicy("sp"), queues(*levels), 0)
    if levels[0]:
        assert q == 0
    elif levels[1]:
        assert q == 1
    else:
        assert q is None


def test_busy_port_picks_nothing():
    assert pick_next(SchedulerPolicy("sp"), queues(1, 1), 0, port_free=False) is None


def test_utas_worked_example():
    pol = SchedulerPolicy("utas", gcl10())
    qs = queues(1, 1, length=64)
    assert pick_next(pol, qs, 3 * MS) == 0
    assert pick_next(pol, qs, 8 * MS) == 1
    assert pick_next(pol, qs, 13 * MS) == 0  # next cycle


def test_utas_guard_band_blocks_overrun():
    pol = SchedulerPolicy("utas", gcl5())
    qs = queues(1, 0)
    assert 3_100_000 + 533_334 > 3_500_000
    assert pick_next(pol, qs, 3_100_000, egress_cap_bps=15_000_000) is None
    assert pick_next(pol, qs, 2_966_665, egress_cap_bps=15_000_000) == 0
    assert pick_next(pol, qs, 2_966_666, egress_cap_bps=15_000_000) is None


def test_utas_closed_gate_nonempty_queue():
    pol = SchedulerPolicy("utas", gcl10())
    assert pick_next(pol, queues(5, 0), 8 * MS) is None


def test_gated_policy_requires_valid_gcl():
    with pytest.raises(ConfigurationError):
        SchedulerPolicy("utas")
    bad = GateControlList(CycleConfig.from_cycle(10 * MS), (GclEntry(0, 0, 6 * MS), GclEntry(1, 5 * MS, 10 * MS)))
    with pytest.raises(ConfigurationError):
        SchedulerPolicy("taprio", bad)
    with pytest.raises(ConfigurationError):
        SchedulerPolicy("sp", jitter_model=JitterModel())


def test_slot_boundary_flips():
    pol = SchedulerPolicy("utas", gcl10())
    start = initial_shaper(pol, 2, 0)
    assert start.full == (True, False)
    at7, delay = on_slot_boundary(pol, start, 7 * MS)
    assert at7.full == (False, True) and delay == 0
    at10, _ = on_slot_boundary(pol, at7, 10 * MS)
    assert at10.full == (True, False)


def test_taprio_flip_delay_is_the_sample():
    pol = SchedulerPolicy("taprio", gcl10())
    target, delay = on_slot_boundary(pol, ShaperState.only(0, 2), 7 * MS, FixedLognormal([180_000]))
    assert target.full == (False, True)
    assert 7 * MS + delay == 7_180_000


def test_taprio_late_transition_keeps_stale_queue():
    pol = SchedulerPolicy("taprio", gcl10())
    qs = queues(3, 3)
    stale = ShaperState.only(0, 2)
    # nominally BE's slot, but the flip has not happened yet
    assert pick_next(pol, qs, 7 * MS + 10, shaper=stale) == 0
    assert pick_next(pol, qs, 7 * MS + 10) == 1


def test_jitter_model_truncates_and_centres():
    m = JitterModel()
    rng = random.Random(8)
    xs = sorted(m.sample(rng) for _ in range(20_000))
    assert max(xs) <= 2_000_000 and min(xs) > 0
    median = xs[len(xs) // 2]
    assert 140_000 < median < 160_000


def test_zero_jitter_model_consumes_nothing():
    rng = random.Random(1)
    state = rng.getstate()
    assert JitterModel(median_ns=0).sample(rng) == 0
    assert rng.getstate() == state


def test_token_bucket_refills_at_rate():
    tb = TokenBucket(15_000_000, 8000 * 8)
    bits = 8000
    for _ in range(8):
        assert tb.wait_ns(0, bits) == 0
        tb.consume(0, bits)
    # empty: 8000 bits at 15 Mb/s takes 533 333.3 ns
    assert tb.wait_ns(0, bits) == 533_334
    assert tb.wait_ns(533_334, bits) == 0


def test_inactive_bucket_does_not_fill():
    tb = TokenBucket(15_000_000, 8000, active=False)
    tb.consume(0, 8000)
    assert tb.wait_ns(10**9, 8000) is None
    tb.set_active(10**9, True)
    assert tb.wait_ns(10**9, 8000) == 533_334
