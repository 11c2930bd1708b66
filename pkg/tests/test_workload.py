import math

import numpy as np
import pytest

from conftest import run_text
from olapsim.config import ValidationError, parse
from olapsim.engine import DistributionSpec, RandomStream, StreamId, sample
from olapsim.topology import build_paper_topology
from olapsim.workload import (
    Infeasible,
    PageModel,
    ProfileConfig,
    Session,
    TransactionModel,
    WorkloadStreams,
    assign_partition,
    calibrate_duty_cycle,
    partition_cdf,
    round_half_up,
    session_tick,
    sessions_per_lan,
    spawn_sessions,
)


def streams(seed=1):
    return WorkloadStreams(*(RandomStream(seed, s) for s in range(1, 8)))


class TestSpawn:
    def test_full_population(self):
        sessions = spawn_sessions(ProfileConfig(), build_paper_topology(), RandomStream(1, StreamId.SESSION_START))
        assert len(sessions) == 3000
        starts = np.array([s.start_time for s in sessions])
        assert starts.min() >= 55 and starts.max() < 65

    def test_round_robin_destinations(self):
        sessions = spawn_sessions(ProfileConfig(), build_paper_topology(), RandomStream(1, 0))
        lan0 = [s.olap for s in sessions if s.lan == 0]
        assert lan0[:8] == [0, 1, 2, 3, 0, 1, 2, 3]
        assert np.bincount([s.olap for s in sessions]).tolist() == [750] * 4

    def test_calibrated_population(self):
        duty = 320 / 3000
        sessions = spawn_sessions(ProfileConfig(), build_paper_topology(), RandomStream(1, 0), duty)
        assert sessions_per_lan(500, duty) == 53
        assert len(sessions) == 6 * 53

    def test_rounding_is_half_up(self):
        assert round_half_up(2.5) == 3 and round_half_up(3.5) == 4 and round_half_up(2.49) == 2

    def test_zero_duty_rejected(self):
        with pytest.raises(ValueError):
            spawn_sessions(ProfileConfig(), build_paper_topology(), RandomStream(1, 0), 0.0)
        with pytest.raises(ValidationError):
            parse("[workload]\nduty_cycle = 0\n")


class TestCalibrate:
    def test_reference_target(self):
        assert math.isclose(calibrate_duty_cycle(320, 3000, TransactionModel()), 0.10667, abs_tol=5e-6)

    def test_boundary(self):
        assert calibrate_duty_cycle(3000, 3000, TransactionModel()) == 1.0

    def test_infeasible(self):
        with pytest.raises(Infeasible):
            calibrate_duty_cycle(3200, 3000, TransactionModel())

    def test_faster_sessions_need_less_duty(self):
        txn = TransactionModel(interarrival=DistributionSpec.constant(0.5))
        assert math.isclose(calibrate_duty_cycle(320, 3000, txn), 320 / 6000)


class TestPartitions:
    def test_single_partition(self):
        s = RandomStream(1, StreamId.PARTITION)
        assert {assign_partition(1, s) for _ in range(100)} == {0}
        assert s._pos == 0

    def test_uniform_shares(self):
        s = RandomStream(1, StreamId.PARTITION)
        counts = np.bincount([assign_partition(8, s) for _ in range(1_000_000)], minlength=8)
        assert np.all(np.abs(counts / 1e6 - 0.125) <= 0.005)

    def test_zipf_favours_partition_zero(self):
        s = RandomStream(1, StreamId.PARTITION)
        cdf = partition_cdf(8, 1.0)
        counts = np.bincount([assign_partition(8, s, cdf) for _ in range(100_000)], minlength=8)
        assert counts.argmax() == 0
        assert np.all(np.diff(counts) < 0)

    def test_zero_skew_cdf_is_uniform(self):
        assert np.allclose(partition_cdf(4, 0.0), [0.25, 0.5, 0.75, 1.0])


class TestSessionTick:
    def _drive(self, chain, horizon=60.0):
        sess = Session(0, 0, 0, 0.0, active=True)
        st, page, txn = streams(), PageModel(), TransactionModel()
        t, ticks = 0.0, []
        while t < horizon:
            tick = session_tick(sess, chain, t, page, txn, st)
            ticks.append((t, tick))
            t = tick.next_time
        return sess, ticks

    def test_sixty_dispatches_per_minute(self):
        _, ticks = self._drive("dispatch")
        assert len(ticks) == 60
        assert all(tick.query_size == 10240 for _, tick in ticks)

    def test_six_page_redraws_per_minute(self):
        sess, ticks = self._drive("page")
        assert len(ticks) == 6
        assert 7 * 5120 <= sess.page_bytes <= 10 * 10240

    def test_object_refresh_carries_page_bytes(self):
        sess = Session(0, 0, 0, 0.0, active=True, page_bytes=1234.0)
        tick = session_tick(sess, "object", 3.0, PageModel(), TransactionModel(), streams())
        assert tick.downloaded == 1234.0 and tick.next_time == 4.0

    def test_expired_session_stops_chain(self):
        sess = Session(0, 0, 0, 0.0, active=True, active_until=5.0, dispatch_on=True)
        tick = session_tick(sess, "dispatch", 5.0, PageModel(), TransactionModel(), streams())
        assert tick.next_time is None and not sess.dispatch_on and not sess.active

    def test_heavier_size_variant_in_bounds(self):
        s = RandomStream(9, StreamId.QUERY_SIZE)
        d = DistributionSpec.uniform(10240, 12288)
        xs = [sample(d, s) for _ in range(100_000)]
        assert min(xs) >= 10240 and max(xs) < 12288


class TestPageModel:
    def test_refresh_must_divide(self):
        assert PageModel(object_refresh=3, page_refresh=10).problems()
        assert PageModel().problems() == []


class TestSimulatedWorkload:
    @pytest.fixture(scope="class")
    @staticmethod
    def traced():
        return run_text("[run]\nend_time = 300\n", trace=True)

    def test_offered_load_identity(self, traced):
        d = traced.dispatch_times()
        n = np.count_nonzero((d >= 100) & (d < 300))
        assert abs(n / 200 - 318) <= 0.02 * 318

    def test_no_dispatch_before_first_start(self, traced):
        assert traced.dispatch_times().min() >= 55

    def test_on_off_sessions_idle_then_repeat(self):
        r = run_text("[workload]\nmode = on_off\non_duration = constant(20)\n"
                     "inter_repetition = constant(100)\n[run]\nend_time = 200\nwarmup = 0\n", trace=True)
        d = r.dispatch_times()
        assert not np.any((d > 86) & (d < 155))  # every session idle between bursts
        assert np.any(d >= 155)
        assert r.events_by_kind[1] == 318  # each session repeated once
