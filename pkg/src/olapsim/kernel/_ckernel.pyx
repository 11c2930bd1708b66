# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled simulation kernel.

Mirrors ``_pykernel`` step for step: same event order, same random draws
from the same PCG64 streams, same floating-point expression order.  Any
behavioural change must be made in both kernels; ``tests/test_backends.py``
compares their results bit for bit.
"""

import math

import numpy as np

cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport INFINITY, floor, log, nextafter
from libc.stdint cimport int64_t, uint8_t
from libc.stdlib cimport free, malloc, realloc
from numpy.random cimport bitgen_t

from ..engine import EventKind, SimulationError, StreamId, make_bit_generator
from ..plan import InvariantViolation, KernelResult

cnp.import_array()

BACKEND = "cython"

# event kinds (must match engine.EventKind)
DEF K_SESSION_START = 0
DEF K_SESSION_REPETITION = 1
DEF K_PAGE_REFRESH = 2
DEF K_OBJECT_REFRESH = 3
DEF K_QUERY_DISPATCH = 4
DEF K_QUERY_ARRIVAL = 5
DEF K_SERVICE_COMPLETE = 7
DEF K_METRIC_TICK = 8
DEF N_KINDS = 10

# policy codes (order of routing.PolicyKind)
DEF P_FLOW = 0
DEF P_ROUND_ROBIN = 1
DEF P_LEAST_OUTSTANDING = 2
DEF P_RESPONSE_TIME = 3

# stream slots
DEF S_OBJECT_COUNT = 0
DEF S_OBJECT_SIZE = 1
DEF S_INTER_REPETITION = 2
DEF S_ON_DURATION = 3
DEF S_INTERARRIVAL = 4
DEF S_QUERY_SIZE = 5
DEF S_PARTITION = 6
DEF S_NOISE = 7
DEF S_RESERVOIR = 8
DEF N_FIXED_STREAMS = 9


cdef struct Ev:
    double t
    int64_t seq
    int kind
    int payload


cdef struct Query:
    double size
    double arrived
    double start
    int64_t fifo_no
    int source
    int partition
    int server
    int next


cdef struct Dist:
    int kind
    double a
    double b


cdef inline double next_u(bitgen_t* bg) noexcept nogil:
    return bg.next_double(bg.state)


cdef double draw(Dist* d, bitgen_t* bg) noexcept nogil:
    cdef double x, u
    cdef long lo, n, i
    if d.kind == 0:
        return d.a
    if d.kind == 1:
        x = d.a + (d.b - d.a) * next_u(bg)
        if x >= d.b and d.b > d.a:
            x = nextafter(d.b, d.a)
        return x
    if d.kind == 2:
        u = next_u(bg)
        while u == 0.0:
            u = next_u(bg)
        return -d.a * log(u)
    lo = <long>d.a
    n = <long>d.b - lo + 1
    i = <long>(next_u(bg) * n)
    if i >= n:
        i = n - 1
    return <double>(lo + i)


cdef inline long bucket_of(double t, double w) noexcept nogil:
    return <long>floor(t / w)


cdef Dist make_dist(spec):
    cdef Dist d
    k, a, b = spec.as_tuple()
    d.kind = k
    d.a = a
    d.b = b
    return d


cdef class _Sim:
    # heap
    cdef Ev* heap
    cdef int64_t heap_n, heap_cap, seq
    cdef double now

    # queries (pool + free list)
    cdef Query* qs
    cdef int q_cap, q_free

    # streams
    cdef list _bitgens
    cdef bitgen_t** bg
    cdef int n_streams

    # sessions
    cdef int n_sessions
    cdef double[::1] s_start, s_until, s_page_bytes
    cdef int[::1] s_lan, s_olap
    cdef uint8_t[::1] s_page_on, s_obj_on, s_disp_on

    # models
    cdef bint always_on, repeat
    cdef Dist d_on, d_rep, d_objs, d_objsize, d_inter, d_size
    cdef double object_refresh, page_refresh

    # partitions and routing
    cdef int n_part, n_olap, n_rdbms, n_lans, policy
    cdef bint has_cdf
    cdef double[::1] cdf
    cdef int[::1] host_off, host_srv
    cdef uint8_t[::1] hosted
    cdef double[::1] flow, ewma
    cdef int64_t[::1] outstanding
    cdef int[::1] cursor
    cdef double alpha
    cdef int[::1] route_off, dl_off
    cdef double[::1] route_lat, route_bw, dl_lat, dl_bw
    cdef double[::1] wbuf

    # servers
    cdef double[::1] speed
    cdef double base, ref_size, noise
    cdef int[::1] current, q_head, q_tail
    cdef int64_t[::1] q_len, srv_arrivals, srv_completions

    # run limits
    cdef int64_t max_events
    cdef double end_time, warmup, width
    cdef int res_k

    # series
    cdef object a_arr, a_comp, a_proc, a_busy, a_qlen
    cdef int64_t[:, ::1] arrivals, completions, qlen
    cdef double[:, ::1] proc_sum, busy
    cdef long series_cap, series_rows

    # accumulators
    cdef int64_t[::1] n_post, res_seen
    cdef double[::1] sum_proc, sum_wait, sum_service, max_proc
    cdef double[:, ::1] res
    cdef double[::1] gres
    cdef int64_t gseen
    cdef int64_t dispatched, arrived, completed, n_waited, http_downloads
    cdef double max_wait, http_bytes, http_delay_sum
    cdef int64_t counts[N_KINDS]

    # trace
    cdef bint tracing
    cdef double* tr_t
    cdef uint8_t* tr_k
    cdef int64_t tr_n, tr_cap

    def __cinit__(self):
        self.heap = NULL
        self.qs = NULL
        self.bg = NULL
        self.tr_t = NULL
        self.tr_k = NULL

    def __dealloc__(self):
        free(self.heap)
        free(self.qs)
        free(self.bg)
        free(self.tr_t)
        free(self.tr_k)

    def __init__(self, plan, bint trace):
        cdef int i, r, p, k
        self.now = 0.0
        self.seq = 0
        self.heap_cap = 1024
        self.heap_n = 0
        self.heap = <Ev*>malloc(self.heap_cap * sizeof(Ev))
        self.q_cap = 1024
        self.qs = <Query*>malloc(self.q_cap * sizeof(Query))
        if self.heap == NULL or self.qs == NULL:
            raise MemoryError()
        for i in range(self.q_cap):
            self.qs[i].next = i + 1 if i + 1 < self.q_cap else -1
        self.q_free = 0

        seed = plan.seed
        self.n_olap = plan.n_olap
        self.n_rdbms = plan.n_rdbms
        self.n_lans = plan.n_lans
        ids = [StreamId.OBJECT_COUNT, StreamId.OBJECT_SIZE, StreamId.INTER_REPETITION,
               StreamId.ON_DURATION, StreamId.INTERARRIVAL, StreamId.QUERY_SIZE,
               StreamId.PARTITION, StreamId.SERVICE_NOISE, StreamId.RESERVOIR]
        ids += [StreamId.ROUTING_BASE + o for o in range(self.n_olap)]
        self._bitgens = [make_bit_generator(seed, sid) for sid in ids]
        self.n_streams = len(ids)
        self.bg = <bitgen_t**>malloc(self.n_streams * sizeof(bitgen_t*))
        for i in range(self.n_streams):
            self.bg[i] = <bitgen_t*>PyCapsule_GetPointer(self._bitgens[i].capsule, "BitGenerator")

        sessions = plan.sessions
        self.n_sessions = len(sessions)
        n = self.n_sessions
        self.s_start = np.array([s.start_time for s in sessions], dtype=np.float64)
        self.s_until = np.full(n, INFINITY)
        self.s_page_bytes = np.zeros(n)
        self.s_lan = np.array([s.lan for s in sessions], dtype=np.intc)
        self.s_olap = np.array([s.olap for s in sessions], dtype=np.intc)
        self.s_page_on = np.zeros(n, dtype=np.uint8)
        self.s_obj_on = np.zeros(n, dtype=np.uint8)
        self.s_disp_on = np.zeros(n, dtype=np.uint8)

        self.always_on = plan.always_on
        self.repeat = plan.profile.repetitions_unlimited
        self.d_on = make_dist(plan.profile.on_duration)
        self.d_rep = make_dist(plan.profile.inter_repetition)
        self.d_objs = make_dist(plan.page.objects_per_page)
        self.d_objsize = make_dist(plan.page.object_size)
        self.d_inter = make_dist(plan.txn.interarrival)
        self.d_size = make_dist(plan.txn.size)
        self.object_refresh = plan.page.object_refresh
        self.page_refresh = plan.page.page_refresh

        pm = plan.partition_map
        self.n_part = pm.partitions
        self.has_cdf = plan.partition_cdf is not None
        self.cdf = np.array(plan.partition_cdf if self.has_cdf else [1.0], dtype=np.float64)
        off = [0]
        srv = []
        for h in pm.hosts:
            srv.extend(h)
            off.append(len(srv))
        self.host_off = np.array(off, dtype=np.intc)
        self.host_srv = np.array(srv, dtype=np.intc)
        hosted = np.zeros(self.n_rdbms * self.n_part, dtype=np.uint8)
        for p, h in enumerate(pm.hosts):
            for r in h:
                hosted[r * self.n_part + p] = 1
        self.hosted = hosted

        self.policy = plan.policy.kind.code
        self.alpha = plan.policy.ewma_alpha
        self.flow = np.array([w for row in plan.flow for w in row], dtype=np.float64)
        self.ewma = np.zeros(self.n_olap * self.n_rdbms)
        self.outstanding = np.zeros(self.n_olap * self.n_rdbms, dtype=np.int64)
        self.cursor = np.full(self.n_olap, -1, dtype=np.intc)
        self.wbuf = np.zeros(max(self.n_rdbms, 1))

        self.route_off, self.route_lat, self.route_bw = _csr(plan.route_links)
        self.dl_off, self.dl_lat, self.dl_bw = _csr(plan.download_links)

        self.speed = np.array(plan.speed_factors, dtype=np.float64)
        self.base = plan.base_service_time
        self.ref_size = plan.reference_size
        self.noise = plan.service_noise
        R = self.n_rdbms
        self.current = np.full(R, -1, dtype=np.intc)
        self.q_head = np.full(R, -1, dtype=np.intc)
        self.q_tail = np.full(R, -1, dtype=np.intc)
        self.q_len = np.zeros(R, dtype=np.int64)
        self.srv_arrivals = np.zeros(R, dtype=np.int64)
        self.srv_completions = np.zeros(R, dtype=np.int64)

        self.max_events = plan.max_events
        self.end_time = plan.end_time
        self.warmup = plan.warmup
        self.width = plan.bucket_width
        self.res_k = plan.reservoir_size

        self.series_rows = 0
        self.series_cap = 0
        self._grow_series(1024)

        self.n_post = np.zeros(R, dtype=np.int64)
        self.res_seen = np.zeros(R, dtype=np.int64)
        self.sum_proc = np.zeros(R)
        self.sum_wait = np.zeros(R)
        self.sum_service = np.zeros(R)
        self.max_proc = np.zeros(R)
        self.res = np.full((R, self.res_k), np.nan)
        self.gres = np.full(self.res_k, np.nan)
        self.gseen = 0
        self.dispatched = 0
        self.arrived = 0
        self.completed = 0
        self.n_waited = 0
        self.http_downloads = 0
        self.max_wait = 0.0
        self.http_bytes = 0.0
        self.http_delay_sum = 0.0
        for k in range(N_KINDS):
            self.counts[k] = 0

        self.tracing = trace
        self.tr_n = 0
        self.tr_cap = 0
        if trace:
            self.tr_cap = 4096
            self.tr_t = <double*>malloc(self.tr_cap * sizeof(double))
            self.tr_k = <uint8_t*>malloc(self.tr_cap * sizeof(uint8_t))
            if self.tr_t == NULL or self.tr_k == NULL:
                raise MemoryError()

    # -- storage ------------------------------------------------------------

    cdef int _grow_series(self, long need) except -1:
        cdef long cap = self.series_cap if self.series_cap > 0 else 1024
        while cap < need:
            cap *= 2
        R = self.n_rdbms
        new = [np.zeros((cap, R), dtype=np.int64), np.zeros((cap, R), dtype=np.int64),
               np.zeros((cap, R)), np.zeros((cap, R)), np.zeros((cap, R), dtype=np.int64)]
        if self.series_cap > 0:
            for dst, src in zip(new, (self.a_arr, self.a_comp, self.a_proc, self.a_busy, self.a_qlen)):
                dst[: self.series_cap] = src
        self.a_arr, self.a_comp, self.a_proc, self.a_busy, self.a_qlen = new
        self.arrivals = self.a_arr
        self.completions = self.a_comp
        self.proc_sum = self.a_proc
        self.busy = self.a_busy
        self.qlen = self.a_qlen
        self.series_cap = cap
        return 0

    cdef inline int _ensure(self, long b) except -1:
        if b >= self.series_cap:
            self._grow_series(b + 1)
        if b >= self.series_rows:
            self.series_rows = b + 1
        return 0

    cdef int _alloc_query(self) except -1:
        cdef int i, old
        cdef Query* grown
        if self.q_free == -1:
            old = self.q_cap
            grown = <Query*>realloc(self.qs, 2 * old * sizeof(Query))
            if grown == NULL:
                raise MemoryError()
            self.qs = grown
            self.q_cap = 2 * old
            for i in range(old, self.q_cap):
                self.qs[i].next = i + 1 if i + 1 < self.q_cap else -1
            self.q_free = old
        i = self.q_free
        self.q_free = self.qs[i].next
        self.qs[i].next = -1
        return i

    cdef inline void _free_query(self, int i) noexcept:
        self.qs[i].next = self.q_free
        self.q_free = i

    # -- heap ---------------------------------------------------------------

    cdef int schedule(self, double t, int kind, int payload) except -1:
        cdef Ev* grown
        cdef int64_t i, parent
        cdef Ev ev
        if t < self.now:
            raise SimulationError(
                f"event {EventKind(kind).name} scheduled at t={t!r} before clock {self.now!r}")
        if self.heap_n == self.heap_cap:
            grown = <Ev*>realloc(self.heap, 2 * self.heap_cap * sizeof(Ev))
            if grown == NULL:
                raise MemoryError()
            self.heap = grown
            self.heap_cap *= 2
        ev.t = t
        ev.seq = self.seq
        ev.kind = kind
        ev.payload = payload
        self.seq += 1
        i = self.heap_n
        self.heap_n += 1
        while i > 0:
            parent = (i - 1) >> 1
            if ev.t < self.heap[parent].t or (ev.t == self.heap[parent].t and ev.seq < self.heap[parent].seq):
                self.heap[i] = self.heap[parent]
                i = parent
            else:
                break
        self.heap[i] = ev
        return 0

    cdef Ev pop(self) noexcept:
        cdef Ev top = self.heap[0]
        cdef Ev last
        cdef int64_t i = 0, child, n
        self.heap_n -= 1
        n = self.heap_n
        if n > 0:
            last = self.heap[n]
            while True:
                child = 2 * i + 1
                if child >= n:
                    break
                if child + 1 < n and (self.heap[child + 1].t < self.heap[child].t or (
                        self.heap[child + 1].t == self.heap[child].t and self.heap[child + 1].seq < self.heap[child].seq)):
                    child += 1
                if self.heap[child].t < last.t or (self.heap[child].t == last.t and self.heap[child].seq < last.seq):
                    self.heap[i] = self.heap[child]
                    i = child
                else:
                    break
            self.heap[i] = last
        return top

    # -- helpers ------------------------------------------------------------

    cdef inline double path_delay(self, int[::1] off, double[::1] lat, double[::1] bw, int pair, double size) noexcept:
        cdef double d = 0.0
        cdef int k
        for k in range(off[pair], off[pair + 1]):
            d += lat[k] + size * 8.0 / bw[k]
        return d

    cdef int assign_partition(self) noexcept:
        cdef double u
        cdef int p
        if self.n_part == 1:
            return 0
        u = next_u(self.bg[S_PARTITION])
        if not self.has_cdf:
            p = <int>(u * self.n_part)
            return p if p < self.n_part else self.n_part - 1
        for p in range(self.n_part):
            if u < self.cdf[p]:
                return p
        return self.n_part - 1

    cdef int weighted(self, int lo, int n, double u) noexcept:
        cdef double total = 0.0, target, acc
        cdef int i
        for i in range(n):
            total += self.wbuf[i]
        if not total > 0:
            i = <int>(u * n)
            return self.host_srv[lo + (i if i < n else n - 1)]
        target = u * total
        acc = 0.0
        for i in range(n):
            acc += self.wbuf[i]
            if target < acc:
                return self.host_srv[lo + i]
        return self.host_srv[lo + n - 1]

    cdef int pick(self, int o, int part) noexcept:
        cdef int lo = self.host_off[part]
        cdef int n = self.host_off[part + 1] - lo
        cdef int i, s, best, n_known
        cdef int base = o * self.n_rdbms
        cdef double known, fill, e
        if n == 1:
            return self.host_srv[lo]
        if self.policy == P_FLOW:
            for i in range(n):
                self.wbuf[i] = self.flow[base + self.host_srv[lo + i]]
            return self.weighted(lo, n, next_u(self.bg[N_FIXED_STREAMS + o]))
        if self.policy == P_ROUND_ROBIN:
            for i in range(n):
                s = self.host_srv[lo + i]
                if s > self.cursor[o]:
                    self.cursor[o] = s
                    return s
            self.cursor[o] = self.host_srv[lo]
            return self.host_srv[lo]
        if self.policy == P_LEAST_OUTSTANDING:
            best = self.host_srv[lo]
            for i in range(n):
                s = self.host_srv[lo + i]
                if self.outstanding[base + s] < self.outstanding[base + best]:
                    best = s
            return best
        known = 0.0
        n_known = 0
        for i in range(n):
            e = self.ewma[base + self.host_srv[lo + i]]
            if e > 0.0:
                known += 1.0 / e
                n_known += 1
        fill = known / n_known if n_known else 1.0
        for i in range(n):
            e = self.ewma[base + self.host_srv[lo + i]]
            self.wbuf[i] = 1.0 / e if e > 0.0 else fill
        return self.weighted(lo, n, next_u(self.bg[N_FIXED_STREAMS + o]))

    cdef double start_service(self, int r, int q) noexcept:
        cdef double d, factor = 1.0
        self.current[r] = q
        self.qs[q].start = self.now
        if self.noise > 0:
            factor = 1.0 + self.noise * (2.0 * next_u(self.bg[S_NOISE]) - 1.0)
        d = self.base * (self.qs[q].size / self.ref_size) / self.speed[r]
        if factor != 1.0:
            d = d * factor
        return self.now + d

    cdef int add_busy(self, int r, double start, double end) except -1:
        cdef double w = self.width, lo, hi
        cdef long k = bucket_of(start, w)
        cdef long last = bucket_of(end, w)
        self._ensure(last)
        while k <= last:
            lo = start if start > k * w else k * w
            hi = end if end < (k + 1) * w else (k + 1) * w
            if hi > lo:
                self.busy[k, r] += hi - lo
            k += 1
        return 0

    cdef inline void reservoir_add(self, double[:] res, int64_t seen, double x) noexcept:
        cdef int64_t j
        if seen < self.res_k:
            res[seen] = x
        else:
            j = <int64_t>(next_u(self.bg[S_RESERVOIR]) * (seen + 1))
            if j < self.res_k:
                res[j] = x

    cdef int check_conservation(self) except -1:
        cdef int64_t in_system = 0
        cdef int r
        for r in range(self.n_rdbms):
            in_system += self.q_len[r] + (self.current[r] != -1)
        if self.arrived != self.completed + in_system or self.arrived > self.dispatched:
            raise InvariantViolation(
                f"conservation broken: dispatched={self.dispatched} arrived={self.arrived} "
                f"completed={self.completed} in_system={in_system}")
        return 0

    cdef int start_chains(self, int i) except -1:
        if not self.s_page_on[i]:
            self.s_page_on[i] = 1
            self.schedule(self.now, K_PAGE_REFRESH, i)
        if not self.s_obj_on[i]:
            self.s_obj_on[i] = 1
            self.schedule(self.now, K_OBJECT_REFRESH, i)
        if not self.s_disp_on[i]:
            self.s_disp_on[i] = 1
            self.schedule(self.now, K_QUERY_DISPATCH, i)
        return 0

    # -- handlers -----------------------------------------------------------

    cdef int on_session_start(self, int i) except -1:
        if self.always_on:
            self.s_until[i] = INFINITY
        else:
            self.s_until[i] = self.now + draw(&self.d_on, self.bg[S_ON_DURATION])
        self.start_chains(i)
        if not self.always_on and self.repeat:
            self.schedule(self.now + draw(&self.d_rep, self.bg[S_INTER_REPETITION]),
                          K_SESSION_REPETITION, i)
        return 0

    cdef int on_repetition(self, int i) except -1:
        cdef double until = self.now + draw(&self.d_on, self.bg[S_ON_DURATION])
        if until > self.s_until[i]:
            self.s_until[i] = until
        self.start_chains(i)
        self.schedule(self.now + draw(&self.d_rep, self.bg[S_INTER_REPETITION]),
                      K_SESSION_REPETITION, i)
        return 0

    cdef int on_page(self, int i) except -1:
        cdef int n, k
        cdef double total = 0.0
        if self.now >= self.s_until[i]:
            self.s_page_on[i] = 0
            return 0
        n = <int>draw(&self.d_objs, self.bg[S_OBJECT_COUNT])
        for k in range(n):
            total += draw(&self.d_objsize, self.bg[S_OBJECT_SIZE])
        self.s_page_bytes[i] = total
        self.schedule(self.now + self.page_refresh, K_PAGE_REFRESH, i)
        return 0

    cdef int on_object(self, int i) except -1:
        cdef double down
        if self.now >= self.s_until[i]:
            self.s_obj_on[i] = 0
            return 0
        down = self.s_page_bytes[i]
        self.http_bytes += down
        self.http_delay_sum += self.path_delay(
            self.dl_off, self.dl_lat, self.dl_bw, self.s_olap[i] * self.n_lans + self.s_lan[i], down)
        self.http_downloads += 1
        self.schedule(self.now + self.object_refresh, K_OBJECT_REFRESH, i)
        return 0

    cdef int on_dispatch(self, int i) except -1:
        cdef double size, nxt, arrival
        cdef int q, o, part, r
        if self.now >= self.s_until[i]:
            self.s_disp_on[i] = 0
            return 0
        size = draw(&self.d_size, self.bg[S_QUERY_SIZE])
        nxt = self.now + draw(&self.d_inter, self.bg[S_INTERARRIVAL])
        part = self.assign_partition()
        o = self.s_olap[i]
        self.dispatched += 1
        if self.host_off[part + 1] == self.host_off[part]:
            raise InvariantViolation(f"partition {part} has no hosting server")
        r = self.pick(o, part)
        self.outstanding[o * self.n_rdbms + r] += 1
        q = self._alloc_query()
        self.qs[q].size = size
        self.qs[q].source = o
        self.qs[q].partition = part
        self.qs[q].server = r
        arrival = self.now + self.path_delay(
            self.route_off, self.route_lat, self.route_bw, o * self.n_rdbms + r, size)
        self.schedule(arrival, K_QUERY_ARRIVAL, q)
        self.schedule(nxt, K_QUERY_DISPATCH, i)
        return 0

    cdef int on_arrival(self, int q) except -1:
        cdef int r = self.qs[q].server
        cdef long b = bucket_of(self.now, self.width)
        self.arrived += 1
        self._ensure(b)
        self.arrivals[b, r] += 1
        self.qs[q].arrived = self.now
        self.qs[q].fifo_no = self.srv_arrivals[r]
        self.srv_arrivals[r] += 1
        if self.current[r] == -1:
            self.schedule(self.start_service(r, q), K_SERVICE_COMPLETE, q)
        else:
            if self.q_tail[r] == -1:
                self.q_head[r] = q
            else:
                self.qs[self.q_tail[r]].next = q
            self.q_tail[r] = q
            self.qs[q].next = -1
            self.q_len[r] += 1
        return 0

    cdef int on_complete(self, int q) except -1:
        cdef int r = self.qs[q].server
        cdef int nq = -1, o, idx
        cdef double next_at = -1.0, proc, wait, start
        cdef long b
        if self.current[r] != q:
            raise InvariantViolation(f"server {r}: completion for a query not in service")
        self.srv_completions[r] += 1
        self.current[r] = -1
        if self.q_head[r] != -1:
            nq = self.q_head[r]
            self.q_head[r] = self.qs[nq].next
            if self.q_head[r] == -1:
                self.q_tail[r] = -1
            self.q_len[r] -= 1
            next_at = self.start_service(r, nq)
        if self.qs[q].fifo_no != self.srv_completions[r] - 1:
            raise InvariantViolation(f"server {r}: FIFO order broken")
        if not self.hosted[r * self.n_part + self.qs[q].partition]:
            raise InvariantViolation(
                f"server {r} served partition {self.qs[q].partition} it does not host")
        self.completed += 1
        start = self.qs[q].start
        proc = self.now - self.qs[q].arrived
        wait = start - self.qs[q].arrived
        self.add_busy(r, start, self.now)
        if not proc > 0:
            raise InvariantViolation("non-positive processing time")
        b = bucket_of(self.now, self.width)
        self._ensure(b)
        self.completions[b, r] += 1
        self.proc_sum[b, r] += proc
        if wait > 0.0:
            self.n_waited += 1
            if wait > self.max_wait:
                self.max_wait = wait
        if self.now >= self.warmup:
            self.n_post[r] += 1
            self.sum_proc[r] += proc
            self.sum_wait[r] += wait
            self.sum_service[r] += self.now - start
            if proc > self.max_proc[r]:
                self.max_proc[r] = proc
            self.reservoir_add(self.res[r], self.res_seen[r], proc)
            self.res_seen[r] += 1
            self.reservoir_add(self.gres, self.gseen, proc)
            self.gseen += 1
        o = self.qs[q].source
        idx = o * self.n_rdbms + r
        if self.outstanding[idx] <= 0:
            raise SimulationError(f"outstanding count for server {r} would go negative")
        self.outstanding[idx] -= 1
        if self.ewma[idx] == 0.0:
            self.ewma[idx] = proc
        else:
            self.ewma[idx] = self.alpha * proc + (1.0 - self.alpha) * self.ewma[idx]
        self._free_query(q)
        if nq != -1:
            self.schedule(next_at, K_SERVICE_COMPLETE, nq)
        return 0

    cdef int on_tick(self, int k) except -1:
        cdef long b = bucket_of(self.now, self.width)
        cdef int r
        self._ensure(b)
        for r in range(self.n_rdbms):
            self.qlen[b, r] = self.q_len[r] + (self.current[r] != -1)
        self.check_conservation()
        if self.heap_n > 0:
            self.schedule((k + 1) * self.width, K_METRIC_TICK, k + 1)
        return 0

    # -- driver -------------------------------------------------------------

    cdef int loop(self) except -1:
        cdef Ev ev
        cdef int64_t n = 0
        cdef int stopped = 0
        cdef double* tt
        cdef uint8_t* tk
        while self.heap_n > 0:
            if n >= self.max_events:
                stopped = 1
                break
            if self.heap[0].t > self.end_time:
                stopped = 2
                break
            ev = self.pop()
            self.now = ev.t
            self.counts[ev.kind] += 1
            n += 1
            if self.tracing:
                if self.tr_n == self.tr_cap:
                    tt = <double*>realloc(self.tr_t, 2 * self.tr_cap * sizeof(double))
                    if tt == NULL:
                        raise MemoryError()
                    self.tr_t = tt
                    tk = <uint8_t*>realloc(self.tr_k, 2 * self.tr_cap * sizeof(uint8_t))
                    if tk == NULL:
                        raise MemoryError()
                    self.tr_k = tk
                    self.tr_cap *= 2
                self.tr_t[self.tr_n] = ev.t
                self.tr_k[self.tr_n] = <uint8_t>ev.kind
                self.tr_n += 1
            if ev.kind == K_QUERY_DISPATCH:
                self.on_dispatch(ev.payload)
            elif ev.kind == K_QUERY_ARRIVAL:
                self.on_arrival(ev.payload)
            elif ev.kind == K_SERVICE_COMPLETE:
                self.on_complete(ev.payload)
            elif ev.kind == K_OBJECT_REFRESH:
                self.on_object(ev.payload)
            elif ev.kind == K_PAGE_REFRESH:
                self.on_page(ev.payload)
            elif ev.kind == K_METRIC_TICK:
                self.on_tick(ev.payload)
            elif ev.kind == K_SESSION_START:
                self.on_session_start(ev.payload)
            elif ev.kind == K_SESSION_REPETITION:
                self.on_repetition(ev.payload)
        return stopped

    def run(self):
        cdef int i, r, stopped
        cdef double t_end
        cdef long n_buckets
        if self.n_sessions > 0:
            self.schedule(0.0, K_METRIC_TICK, 0)
            for i in range(self.n_sessions):
                self.schedule(self.s_start[i], K_SESSION_START, i)
        stopped = self.loop()
        self.check_conservation()
        stopped_by = ("empty", "max_events", "end_time")[stopped]
        t_end = self.end_time if stopped == 2 else self.now
        for r in range(self.n_rdbms):
            if self.current[r] != -1 and t_end > self.qs[self.current[r]].start:
                self.add_busy(r, self.qs[self.current[r]].start, t_end)
        total = sum(self.counts[i] for i in range(N_KINDS))
        n_buckets = bucket_of(t_end, self.width) + 1 if total else 0
        self._ensure(n_buckets - 1)

        queued = 0
        in_service = 0
        for r in range(self.n_rdbms):
            queued += self.q_len[r]
            in_service += self.current[r] != -1

        if self.tracing:
            times = np.array(<double[:self.tr_n]>self.tr_t, dtype=np.float64) if self.tr_n else np.zeros(0)
            kinds = np.array(<uint8_t[:self.tr_n]>self.tr_k, dtype=np.uint8) if self.tr_n else np.zeros(0, dtype=np.uint8)
        else:
            times = kinds = None

        return KernelResult(
            backend=BACKEND,
            bucket_width=self.width,
            warmup=self.warmup,
            events_by_kind=[int(self.counts[i]) for i in range(N_KINDS)],
            final_clock=self.now,
            t_end=t_end,
            stopped_by=stopped_by,
            arrivals=self.a_arr[:n_buckets].copy(),
            completions=self.a_comp[:n_buckets].copy(),
            proc_sum=self.a_proc[:n_buckets].copy(),
            busy=self.a_busy[:n_buckets].copy(),
            qlen=self.a_qlen[:n_buckets].copy(),
            n_post=np.asarray(self.n_post).copy(),
            sum_proc=np.asarray(self.sum_proc).copy(),
            sum_wait=np.asarray(self.sum_wait).copy(),
            sum_service=np.asarray(self.sum_service).copy(),
            max_proc=np.asarray(self.max_proc).copy(),
            reservoirs=np.asarray(self.res).copy(),
            res_seen=np.asarray(self.res_seen).copy(),
            global_reservoir=np.asarray(self.gres).copy(),
            global_seen=int(self.gseen),
            dispatched=int(self.dispatched),
            arrived=int(self.arrived),
            completed=int(self.completed),
            queued=int(queued),
            in_service=int(in_service),
            n_waited=int(self.n_waited),
            max_wait=self.max_wait,
            http_bytes=self.http_bytes,
            http_delay_sum=self.http_delay_sum,
            http_downloads=int(self.http_downloads),
            trace_times=times,
            trace_kinds=kinds,
        )


def _csr(links_2d):
    off = [0]
    lat = []
    bw = []
    for row in links_2d:
        for links in row:
            for link in links:
                lat.append(link.latency)
                bw.append(link.bandwidth)
            off.append(len(lat))
    if not lat:
        lat, bw = [0.0], [1.0]
    return (np.array(off, dtype=np.intc), np.array(lat, dtype=np.float64),
            np.array(bw, dtype=np.float64))


def simulate(plan, *, bint trace=False):
    return _Sim(plan, trace).run()
