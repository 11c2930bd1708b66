"""Discrete-event core: ordered event queue, virtual clock, seeded streams.

Randomness comes from numpy's PCG64, one generator per named stream. A
stream is keyed by ``SeedSequence(seed, spawn_key=(stream_id,))`` so the
same (seed, stream) pair yields the same doubles on every platform.  All
distribution sampling goes through :func:`sample`, which is written in
terms of a single uniform double per draw so that the compiled kernel can
reproduce it exactly from the raw bit generator.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Any, Callable, NamedTuple

import numpy as np


class SimulationError(RuntimeError):
    """Fatal logic error inside a run (e.g. scheduling into the past)."""


class EventKind(IntEnum):
    SESSION_START = 0
    SESSION_REPETITION = 1
    PAGE_REFRESH = 2
    OBJECT_REFRESH = 3
    QUERY_DISPATCH = 4
    QUERY_ARRIVAL = 5
    SERVICE_START = 6
    SERVICE_COMPLETE = 7
    METRIC_TICK = 8
    SIM_END = 9


N_EVENT_KINDS = len(EventKind)


class Event(NamedTuple):
    time: float
    seq: int
    kind: int
    payload: Any = None


class StreamId(IntEnum):
    """Named random streams, one per stochastic concern."""

    SESSION_START = 0
    OBJECT_COUNT = 1
    OBJECT_SIZE = 2
    INTER_REPETITION = 3
    ON_DURATION = 4
    INTERARRIVAL = 5
    QUERY_SIZE = 6
    PARTITION = 7
    SERVICE_NOISE = 8
    RESERVOIR = 9
    # routing streams are ROUTING_BASE + olap index
    ROUTING_BASE = 100


# ---------------------------------------------------------------------------
# distributions


class DistKind(IntEnum):
    CONSTANT = 0
    UNIFORM = 1
    EXPONENTIAL = 2
    UNIFORM_INT = 3


@dataclass(frozen=True)
class DistributionSpec:
    kind: DistKind
    a: float
    b: float = 0.0

    @classmethod
    def constant(cls, c: float) -> DistributionSpec:
        return cls(DistKind.CONSTANT, float(c))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> DistributionSpec:
        return cls(DistKind.UNIFORM, float(lo), float(hi))

    @classmethod
    def exponential(cls, mean: float) -> DistributionSpec:
        return cls(DistKind.EXPONENTIAL, float(mean))

    @classmethod
    def uniform_int(cls, lo: int, hi: int) -> DistributionSpec:
        return cls(DistKind.UNIFORM_INT, float(lo), float(hi))

    def problems(self) -> list[str]:
        """Parameter violations; empty when the spec is usable."""
        k, a, b = self.kind, self.a, self.b
        if not all(math.isfinite(x) for x in (a, b)):
            return ["parameters must be finite"]
        if k == DistKind.CONSTANT and a < 0:
            return [f"constant({a:g}) must be >= 0"]
        if k == DistKind.UNIFORM and not a <= b:
            return [f"uniform({a:g}, {b:g}) needs lo <= hi"]
        if k == DistKind.EXPONENTIAL and not a > 0:
            return [f"exponential({a:g}) needs mean > 0"]
        if k == DistKind.UNIFORM_INT:
            if a != int(a) or b != int(b):
                return ["uniform_int bounds must be integers"]
            if not a <= b:
                return [f"uniform_int({a:g}, {b:g}) needs lo <= hi"]
        return []

    @property
    def mean(self) -> float:
        if self.kind == DistKind.CONSTANT:
            return self.a
        if self.kind == DistKind.EXPONENTIAL:
            return self.a
        return (self.a + self.b) / 2.0

    @property
    def is_random(self) -> bool:
        return self.kind != DistKind.CONSTANT

    def as_tuple(self) -> tuple[int, float, float]:
        return int(self.kind), self.a, self.b

    def __str__(self) -> str:
        name = self.kind.name.lower()
        if self.kind in (DistKind.CONSTANT, DistKind.EXPONENTIAL):
            return f"{name}({self.a!r})"
        if self.kind == DistKind.UNIFORM_INT:
            return f"{name}({int(self.a)}, {int(self.b)})"
        return f"{name}({self.a!r}, {self.b!r})"


class RandomStream:
    """Buffered uniform doubles from one named PCG64 stream.

    ``uniform()`` returns exactly the sequence ``bitgen.next_double`` would,
    so a compiled consumer holding a fresh generator for the same key sees
    identical draws.
    """

    _BLOCK = 1024

    def __init__(self, seed: int, stream_id: int):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._gen = make_generator(seed, stream_id)
        self._buf: list[float] = []
        self._pos = 0

    def uniform(self) -> float:
        if self._pos == len(self._buf):
            self._buf = self._gen.random(self._BLOCK).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u


def make_bit_generator(seed: int, stream_id: int) -> np.random.PCG64:
    return np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),)))


def make_generator(seed: int, stream_id: int) -> np.random.Generator:
    return np.random.Generator(make_bit_generator(seed, stream_id))


def sample(dist: DistributionSpec, stream: RandomStream) -> float:
    """Draw one value. Constant specs consume no randomness."""
    kind = dist.kind
    if kind == DistKind.CONSTANT:
        return dist.a
    if kind == DistKind.UNIFORM:
        lo, hi = dist.a, dist.b
        x = lo + (hi - lo) * stream.uniform()
        if x >= hi and hi > lo:
            # rounding can land on hi; keep the interval half-open
            x = math.nextafter(hi, lo)
        return x
    if kind == DistKind.EXPONENTIAL:
        u = stream.uniform()
        while u == 0.0:
            u = stream.uniform()
        return -dist.a * math.log(u)
    lo, hi = int(dist.a), int(dist.b)
    n = hi - lo + 1
    i = int(stream.uniform() * n)
    if i >= n:
        i = n - 1
    return float(lo + i)


# ---------------------------------------------------------------------------
# event queue


@dataclass
class RunSummary:
    events_by_kind: list[int] = field(default_factory=lambda: [0] * N_EVENT_KINDS)
    final_clock: float = 0.0
    stopped_by: str = "empty"

    @property
    def total_events(self) -> int:
        return sum(self.events_by_kind)

    def counts(self) -> dict[str, int]:
        return {k.name: self.events_by_kind[k] for k in EventKind}


class EventQueue:
    """Binary heap of events ordered by (time, seq)."""

    def __init__(self) -> None:
        self._heap: list[Event] = []
        self._seq = 0
        self._now = 0.0

    def __len__(self) -> int:
        return len(self._heap)

    @property
    def now(self) -> float:
        return self._now

    def schedule(self, time: float, kind: int, payload: Any = None) -> Event:
        if time < self._now:
            raise SimulationError(
                f"event {EventKind(kind).name} scheduled at t={time!r} before clock {self._now!r}"
            )
        ev = Event(time, self._seq, kind, payload)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def peek_time(self) -> float:
        return self._heap[0][0] if self._heap else math.inf

    def pop(self) -> Event:
        ev = heapq.heappop(self._heap)
        self._now = ev[0]
        return ev

    def run(
        self,
        handler: Callable[[Event], None],
        *,
        max_events: int | None = None,
        end_time: float = math.inf,
        trace: list | None = None,
    ) -> RunSummary:
        """Dispatch events to ``handler`` until a limit is reached.

        Events stamped exactly ``end_time`` are processed.  When ``trace`` is
        a list, (time, kind) pairs are appended to it.
        """
        summary = RunSummary()
        counts = summary.events_by_kind
        heap = self._heap
        pop = heapq.heappop
        limit = math.inf if max_events is None else max_events
        n = 0
        stopped = "empty"
        while heap:
            if n >= limit:
                stopped = "max_events"
                break
            if heap[0][0] > end_time:
                stopped = "end_time"
                break
            ev = pop(heap)
            self._now = ev[0]
            counts[ev[2]] += 1
            n += 1
            if trace is not None:
                trace.append((ev[0], ev[2]))
            handler(ev)
        summary.final_clock = self._now
        summary.stopped_by = stopped
        return summary


def schedule(queue: EventQueue, time: float, kind: int, payload: Any = None) -> Event:
    return queue.schedule(time, kind, payload)


def run(queue: EventQueue, handler: Callable[[Event], None], **limits: Any) -> RunSummary:
    return queue.run(handler, **limits)


def now(queue: EventQueue) -> float:
    return queue.now
