import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import run_text
from olapsim.engine import RandomStream, SimulationError
from olapsim.metrics import summarize
from olapsim.routing import (
    NonConvergence,
    Policy,
    PolicyKind,
    PolicyState,
    observe_completion,
    pick,
    steady_share,
)

ALL = list(PolicyKind)


def state(n=8, flow=None):
    return PolicyState(list(flow) if flow is not None else [1.0 / n] * n)


class TestPick:
    @pytest.mark.parametrize("kind", ALL)
    def test_single_eligible(self, kind):
        s = RandomStream(1, 100)
        assert all(pick(Policy(kind), state(), [6], s) == 6 for _ in range(10))
        assert s._pos == 0

    def test_flow_weighted_even(self):
        s, st_ = RandomStream(1, 100), state()
        counts = Counter(pick(Policy(PolicyKind.FLOW_WEIGHTED), st_, range(8), s) for _ in range(100_000))
        assert all(abs(counts[i] / 1e5 - 0.125) <= 0.01 for i in range(8))

    def test_flow_weighted_renormalises_over_eligible(self):
        s, st_ = RandomStream(2, 100), state(flow=[0.5, 0.25, 0.25, 0.0])
        counts = Counter(pick(Policy(PolicyKind.FLOW_WEIGHTED), st_, [1, 2, 3], s) for _ in range(20_000))
        assert counts[3] == 0 and abs(counts[1] / 20_000 - 0.5) < 0.02

    def test_zero_weight_fallback_is_uniform(self):
        s, st_ = RandomStream(2, 100), state(flow=[1.0, 0.0, 0.0])
        counts = Counter(pick(Policy(PolicyKind.FLOW_WEIGHTED), st_, [1, 2], s) for _ in range(10_000))
        assert set(counts) == {1, 2}

    def test_least_outstanding(self):
        st_ = state(3)
        st_.outstanding[:] = [3, 1, 2]
        assert pick(Policy(PolicyKind.LEAST_OUTSTANDING), st_, [0, 1, 2], RandomStream(1, 100)) == 1

    def test_least_outstanding_ties_lowest_id(self):
        st_ = state(4)
        st_.outstanding[:] = [2, 1, 5, 1]
        assert pick(Policy(PolicyKind.LEAST_OUTSTANDING), st_, [0, 1, 2, 3], RandomStream(1, 100)) == 1

    def test_response_time_prefers_fast(self):
        st_ = state(2)
        st_.ewma[:] = [0.01, 0.04]
        rs = RandomStream(1, 100)
        counts = Counter(pick(Policy(PolicyKind.RESPONSE_TIME_WEIGHTED), st_, [0, 1], rs) for _ in range(20_000))
        assert abs(counts[0] / 20_000 - 0.8) < 0.02

    def test_uninitialised_gets_mean_weight(self):
        st_ = state(3)
        st_.ewma[:] = [0.01, 0.02, 0.0]  # weights 100, 50 -> fill 75
        rs = RandomStream(3, 100)
        counts = Counter(pick(Policy(PolicyKind.RESPONSE_TIME_WEIGHTED), st_, [0, 1, 2], rs) for _ in range(30_000))
        assert abs(counts[2] / 30_000 - 75 / 225) < 0.02

    @settings(max_examples=200)
    @given(
        st.sampled_from(ALL),
        st.lists(st.integers(0, 15), min_size=1, max_size=16, unique=True),
        st.lists(st.floats(0, 1), min_size=16, max_size=16),
        st.integers(0, 2**32),
    )
    def test_pick_respects_eligibility(self, kind, eligible, weights, seed):
        eligible = sorted(eligible)
        st_ = state(16, flow=weights)
        st_.ewma[:] = [w / 10 for w in weights]
        st_.outstanding[:] = [int(w * 5) for w in weights]
        s = RandomStream(seed, 100)
        for _ in range(5):
            assert pick(Policy(kind), st_, eligible, s) in eligible

    @given(st.lists(st.integers(0, 31), min_size=1, max_size=12, unique=True), st.integers(1, 6))
    def test_round_robin_fairness(self, eligible, k):
        eligible = sorted(eligible)
        st_ = state(32)
        rs = RandomStream(1, 100)
        counts = Counter(pick(Policy(PolicyKind.ROUND_ROBIN), st_, eligible, rs) for _ in range(k * len(eligible)))
        assert all(counts[s] == k for s in eligible)


class TestObserve:
    def test_first_observation_exact(self):
        st_ = state(2)
        st_.record_dispatch(0)
        observe_completion(st_, 0, 0.02, 0.1)
        assert st_.ewma[0] == 0.02 and st_.outstanding[0] == 0

    def test_alpha_one_tracks_last(self):
        st_ = state(1)
        for x in (0.05, 0.01, 0.07):
            st_.record_dispatch(0)
            observe_completion(st_, 0, x, 1.0)
            assert st_.ewma[0] == x

    def test_ewma_arithmetic(self):
        st_ = state(1)
        st_.ewma[0] = 0.02
        st_.record_dispatch(0)
        observe_completion(st_, 0, 0.04, 0.1)
        assert math.isclose(st_.ewma[0], 0.022)

    def test_negative_outstanding_is_fatal(self):
        with pytest.raises(SimulationError):
            observe_completion(state(1), 0, 0.02, 0.1)

    @pytest.mark.parametrize("alpha", [0.0, -0.1, 1.5])
    def test_alpha_range(self, alpha):
        assert Policy(PolicyKind.RESPONSE_TIME_WEIGHTED, alpha).problems()


class TestSteadyShare:
    rtw = Policy(PolicyKind.RESPONSE_TIME_WEIGHTED)

    def test_equal_speeds_uniform(self):
        assert np.allclose(steady_share(self.rtw, [1.0] * 4, total_rate=100), 0.25)

    def test_light_load_proportional_to_speed(self):
        assert np.allclose(steady_share(self.rtw, [1.0, 2.0]), [1 / 3, 2 / 3], atol=1e-8)

    def test_flow_identity(self):
        assert steady_share(Policy(PolicyKind.FLOW_WEIGHTED), [1, 1], flow=[0.5, 0.5]) == [0.5, 0.5]

    def test_load_shifts_share_further_to_fast(self):
        light = steady_share(self.rtw, [1.0, 2.0], total_rate=1.0)
        heavy = steady_share(self.rtw, [1.0, 2.0], total_rate=100.0)
        assert heavy[1] > light[1]

    def test_saturation(self):
        with pytest.raises(NonConvergence):
            steady_share(self.rtw, [1.0, 1.0], total_rate=1000.0)

    def test_iteration_budget(self):
        with pytest.raises(NonConvergence):
            steady_share(self.rtw, [1.0, 2.0], total_rate=50.0, max_iter=1)

    def test_unsupported_policy(self):
        with pytest.raises(ValueError):
            steady_share(Policy(PolicyKind.ROUND_ROBIN), [1.0])


TWO_SERVERS = """
[topology]
lans = 1
users_per_lan = {users}
gateways = 1
olap_servers = 1
rdbms_servers = 2
[workload]
duty_cycle = 1
interarrival = exponential(1)
partitions = 1
[servers]
speed_factors = [1, 2]
[routing]
policy = {policy}
[run]
end_time = 2100
warmup = 100
"""


class TestSimulatedRouting:
    def test_light_load_matches_steady_share(self):
        r = run_text(TWO_SERVERS.format(users=10, policy="response_time_weighted"))
        s = summarize(r)
        share = np.array([x.arrivals for x in s.servers], dtype=float)
        share /= share.sum()
        assert max(x.utilization for x in s.servers) < 0.3
        assert np.allclose(share, [1 / 3, 2 / 3], atol=0.03)

    def test_fast_server_completes_more_at_moderate_load(self):
        r = run_text(TWO_SERVERS.format(users=60, policy="response_time_weighted"))
        done = r.completions.sum(axis=0)
        assert done[1] > done[0]

    def test_policy_isolation_of_dispatch_trace(self):
        base = "[servers]\nspeed_factors = [1,1,1,1,0.5,0.5,0.5,0.5]\n[workload]\ntarget_aggregate = 160\n"
        base += "[run]\nend_time = 200\n[routing]\npolicy = "
        traces = [run_text(base + k.value, trace=True).dispatch_times() for k in PolicyKind]
        assert all(np.array_equal(traces[0], t) for t in traces[1:])
