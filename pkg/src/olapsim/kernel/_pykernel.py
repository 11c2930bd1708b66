"""Pure-Python simulation kernel.

Built directly from the engine, workload, cluster, routing and metrics
operations.  It is the reference for the compiled kernel: for the same plan
both produce identical results, draw for draw.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from ..cluster import OlapServer, RdbmsServer, complete, forward, serve
from ..engine import EventKind, EventQueue, RandomStream, StreamId, sample
from ..metrics import Reservoir, SeriesSet, bucket_of, record_arrival, record_processing
from ..plan import InvariantViolation, KernelPlan, KernelResult
from ..routing import PolicyState, observe_completion
from ..topology import transfer_delay
from ..workload import Query, WorkloadStreams, assign_partition, session_tick

BACKEND = "python"

_K = EventKind


class _Simulation:
    def __init__(self, plan: KernelPlan):
        self.plan = plan
        seed = plan.seed
        self.sessions = [dataclasses.replace(s) for s in plan.sessions]
        self.streams = WorkloadStreams(
            object_count=RandomStream(seed, StreamId.OBJECT_COUNT),
            object_size=RandomStream(seed, StreamId.OBJECT_SIZE),
            inter_repetition=RandomStream(seed, StreamId.INTER_REPETITION),
            on_duration=RandomStream(seed, StreamId.ON_DURATION),
            interarrival=RandomStream(seed, StreamId.INTERARRIVAL),
            query_size=RandomStream(seed, StreamId.QUERY_SIZE),
            partition=RandomStream(seed, StreamId.PARTITION),
        )
        self.noise_stream = RandomStream(seed, StreamId.SERVICE_NOISE)
        self.res_stream = RandomStream(seed, StreamId.RESERVOIR)
        self.route_streams = [RandomStream(seed, StreamId.ROUTING_BASE + o) for o in range(plan.n_olap)]

        pm = plan.partition_map
        self.servers = [
            RdbmsServer(
                index=r,
                speed_factor=plan.speed_factors[r],
                base_service_time=plan.base_service_time,
                hosted=frozenset(pm.hosted_by(r)),
                reference_size=plan.reference_size,
            )
            for r in range(plan.n_rdbms)
        ]
        self.olaps = [OlapServer(o, PolicyState(list(plan.flow[o]))) for o in range(plan.n_olap)]
        for s in self.sessions:
            self.olaps[s.olap].sessions.add(s.id)

        S = plan.n_rdbms
        k = plan.reservoir_size
        self.series = SeriesSet(S, plan.bucket_width)
        self.reservoirs = [Reservoir(k) for _ in range(S)]
        self.global_res = Reservoir(k)
        self.n_post = [0] * S
        self.sum_proc = [0.0] * S
        self.sum_wait = [0.0] * S
        self.sum_service = [0.0] * S
        self.max_proc = [0.0] * S

        self.dispatched = 0
        self.arrived = 0
        self.completed = 0
        self.n_waited = 0
        self.max_wait = 0.0
        self.http_bytes = 0.0
        self.http_delay_sum = 0.0
        self.http_downloads = 0

        self.noise = None
        if plan.service_noise > 0:
            amp = plan.service_noise
            ns = self.noise_stream
            self.noise = lambda: 1.0 + amp * (2.0 * ns.uniform() - 1.0)

        self.q = EventQueue()
        self.handlers = [None] * len(EventKind)
        self.handlers[_K.SESSION_START] = self.on_session_start
        self.handlers[_K.SESSION_REPETITION] = self.on_repetition
        self.handlers[_K.PAGE_REFRESH] = self.on_page
        self.handlers[_K.OBJECT_REFRESH] = self.on_object
        self.handlers[_K.QUERY_DISPATCH] = self.on_dispatch
        self.handlers[_K.QUERY_ARRIVAL] = self.on_arrival
        self.handlers[_K.SERVICE_COMPLETE] = self.on_complete
        self.handlers[_K.METRIC_TICK] = self.on_tick

    # -- handlers -----------------------------------------------------------

    def handle(self, ev) -> None:
        self.handlers[ev[2]](ev[0], ev[3])

    def _start_chains(self, s, now: float) -> None:
        sched = self.q.schedule
        if not s.page_on:
            s.page_on = True
            sched(now, _K.PAGE_REFRESH, s.id)
        if not s.object_on:
            s.object_on = True
            sched(now, _K.OBJECT_REFRESH, s.id)
        if not s.dispatch_on:
            s.dispatch_on = True
            sched(now, _K.QUERY_DISPATCH, s.id)

    def on_session_start(self, now: float, i: int) -> None:
        plan = self.plan
        s = self.sessions[i]
        s.active = True
        if plan.always_on:
            s.active_until = math.inf
        else:
            s.active_until = now + sample(plan.profile.on_duration, self.streams.on_duration)
        self._start_chains(s, now)
        if not plan.always_on and plan.profile.repetitions_unlimited:
            gap = sample(plan.profile.inter_repetition, self.streams.inter_repetition)
            self.q.schedule(now + gap, _K.SESSION_REPETITION, i)

    def on_repetition(self, now: float, i: int) -> None:
        profile = self.plan.profile
        s = self.sessions[i]
        until = now + sample(profile.on_duration, self.streams.on_duration)
        if until > s.active_until:
            s.active_until = until
        s.active = True
        self._start_chains(s, now)
        gap = sample(profile.inter_repetition, self.streams.inter_repetition)
        self.q.schedule(now + gap, _K.SESSION_REPETITION, i)

    def on_page(self, now: float, i: int) -> None:
        plan = self.plan
        tick = session_tick(self.sessions[i], "page", now, plan.page, plan.txn, self.streams)
        if tick.next_time is not None:
            self.q.schedule(tick.next_time, _K.PAGE_REFRESH, i)

    def on_object(self, now: float, i: int) -> None:
        plan = self.plan
        s = self.sessions[i]
        tick = session_tick(s, "object", now, plan.page, plan.txn, self.streams)
        if tick.next_time is None:
            return
        self.http_bytes += tick.downloaded
        self.http_delay_sum += transfer_delay(plan.download_links[s.olap][s.lan], tick.downloaded)
        self.http_downloads += 1
        self.q.schedule(tick.next_time, _K.OBJECT_REFRESH, i)

    def on_dispatch(self, now: float, i: int) -> None:
        plan = self.plan
        s = self.sessions[i]
        tick = session_tick(s, "dispatch", now, plan.page, plan.txn, self.streams)
        if tick.next_time is None:
            return
        part = assign_partition(plan.partition_map.partitions, self.streams.partition, plan.partition_cdf)
        query = Query(self.dispatched, now, tick.query_size, s.olap, part)
        self.dispatched += 1
        _, arrival = forward(
            self.olaps[s.olap],
            query,
            plan.policy,
            plan.partition_map,
            self.route_streams[s.olap],
            plan.route_links[s.olap],
            now,
        )
        self.q.schedule(arrival, _K.QUERY_ARRIVAL, query)
        self.q.schedule(tick.next_time, _K.QUERY_DISPATCH, i)

    def on_arrival(self, now: float, query: Query) -> None:
        self.arrived += 1
        record_arrival(self.series, query.server, now)
        done_at = serve(self.servers[query.server], query, now, self.noise)
        if done_at is not None:
            self.q.schedule(done_at, _K.SERVICE_COMPLETE, query)

    def on_complete(self, now: float, query: Query) -> None:
        plan = self.plan
        r = query.server
        server = self.servers[r]
        done, next_at = complete(server, now, self.noise)
        if done is not query:
            raise InvariantViolation(f"server {r}: completion for a query not in service")
        if query.fifo_no != server.completions - 1:
            raise InvariantViolation(f"server {r}: FIFO order broken at query {query.id}")
        if query.target_partition not in server.hosted:
            raise InvariantViolation(
                f"server {r} served partition {query.target_partition} it does not host"
            )
        self.completed += 1
        proc = now - query.arrived_at
        wait = query.service_start - query.arrived_at
        self.series.add_busy(r, query.service_start, now)
        record_processing(self.series, r, proc, now)
        if wait > 0.0:
            self.n_waited += 1
            if wait > self.max_wait:
                self.max_wait = wait
        if now >= plan.warmup:
            self.n_post[r] += 1
            self.sum_proc[r] += proc
            self.sum_wait[r] += wait
            self.sum_service[r] += now - query.service_start
            if proc > self.max_proc[r]:
                self.max_proc[r] = proc
            self.reservoirs[r].add(proc, self.res_stream)
            self.global_res.add(proc, self.res_stream)
        observe_completion(self.olaps[query.source].state, r, proc, plan.policy.ewma_alpha)
        if next_at is not None:
            self.q.schedule(next_at, _K.SERVICE_COMPLETE, server.current)

    def on_tick(self, now: float, k: int) -> None:
        b = bucket_of(now, self.series.width)
        self.series.ensure(b)
        row = self.series.qlen[b]
        for r, server in enumerate(self.servers):
            row[r] = server.in_system
        self.check_conservation()
        if len(self.q):
            self.q.schedule((k + 1) * self.plan.bucket_width, _K.METRIC_TICK, k + 1)

    def check_conservation(self) -> None:
        in_system = sum(s.in_system for s in self.servers)
        if self.arrived != self.completed + in_system or self.arrived > self.dispatched:
            raise InvariantViolation(
                f"conservation broken: dispatched={self.dispatched} arrived={self.arrived} "
                f"completed={self.completed} in_system={in_system}"
            )

    # -- driver -------------------------------------------------------------

    def run(self, trace: bool) -> KernelResult:
        plan = self.plan
        if self.sessions:
            self.q.schedule(0.0, _K.METRIC_TICK, 0)
            for s in self.sessions:
                self.q.schedule(s.start_time, _K.SESSION_START, s.id)
        trace_list = [] if trace else None
        summary = self.q.run(
            self.handle,
            max_events=plan.max_events,
            end_time=plan.end_time,
            trace=trace_list,
        )
        self.check_conservation()
        t_end = plan.end_time if summary.stopped_by == "end_time" else summary.final_clock
        for r, server in enumerate(self.servers):
            if server.current is not None and t_end > server.current.service_start:
                self.series.add_busy(r, server.current.service_start, t_end)
        n_buckets = bucket_of(t_end, plan.bucket_width) + 1 if summary.total_events else 0
        arrays = self.series.to_arrays(n_buckets)

        S, k = plan.n_rdbms, plan.reservoir_size
        res = np.full((S, k), np.nan)
        for r, rv in enumerate(self.reservoirs):
            res[r, : len(rv.values)] = rv.values
        gres = np.full(k, np.nan)
        gres[: len(self.global_res.values)] = self.global_res.values

        if trace_list:
            times = np.array([t for t, _ in trace_list], dtype=np.float64)
            kinds = np.array([kd for _, kd in trace_list], dtype=np.uint8)
        elif trace:
            times, kinds = np.zeros(0), np.zeros(0, dtype=np.uint8)
        else:
            times = kinds = None

        return KernelResult(
            backend=BACKEND,
            bucket_width=plan.bucket_width,
            warmup=plan.warmup,
            events_by_kind=list(summary.events_by_kind),
            final_clock=summary.final_clock,
            t_end=t_end,
            stopped_by=summary.stopped_by,
            n_post=np.array(self.n_post, dtype=np.int64),
            sum_proc=np.array(self.sum_proc),
            sum_wait=np.array(self.sum_wait),
            sum_service=np.array(self.sum_service),
            max_proc=np.array(self.max_proc),
            reservoirs=res,
            res_seen=np.array([rv.seen for rv in self.reservoirs], dtype=np.int64),
            global_reservoir=gres,
            global_seen=self.global_res.seen,
            dispatched=self.dispatched,
            arrived=self.arrived,
            completed=self.completed,
            queued=sum(len(s.queue) for s in self.servers),
            in_service=sum(s.current is not None for s in self.servers),
            n_waited=self.n_waited,
            max_wait=self.max_wait,
            http_bytes=self.http_bytes,
            http_delay_sum=self.http_delay_sum,
            http_downloads=self.http_downloads,
            trace_times=times,
            trace_kinds=kinds,
            **arrays,
        )


def simulate(plan: KernelPlan, *, trace: bool = False) -> KernelResult:
    return _Simulation(plan).run(trace)
