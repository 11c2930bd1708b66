"""OLAP forwarders, FIFO RDBMS stations and the partition placement map."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

from .engine import RandomStream
from .routing import Policy, PolicyState, pick
from .topology import Link, transfer_delay
from .workload import REFERENCE_QUERY_SIZE, Query


class ShapeMismatch(ValueError):
    pass


class NoEligibleServer(LookupError):
    pass


class Placement(str, Enum):
    ONE_PER_SERVER = "one_per_server"
    REPLICATED_ALL = "replicated_all"
    CUSTOM = "custom"


@dataclass(frozen=True)
class PartitionMap:
    # hosts[p]: ascending server indices holding partition p
    hosts: tuple[tuple[int, ...], ...]
    servers: int

    @property
    def partitions(self) -> int:
        return len(self.hosts)

    def problems(self) -> list[str]:
        out = []
        for p, h in enumerate(self.hosts):
            if not h:
                out.append(f"partition {p} has no hosting server")
            for s in h:
                if not 0 <= s < self.servers:
                    out.append(f"partition {p}: server index {s} out of range")
        used = {s for h in self.hosts for s in h}
        for s in range(self.servers):
            if s not in used:
                out.append(f"server {s} hosts no partition")
        return out

    def hosted_by(self, server: int) -> set[int]:
        return {p for p, h in enumerate(self.hosts) if server in h}


def make_partition_map(
    strategy: Placement | str,
    servers: int,
    partitions: int,
    custom: Sequence[Sequence[int]] | None = None,
) -> PartitionMap:
    strategy = Placement(strategy)
    if servers < 1 or partitions < 1:
        raise ValueError("need at least one server and one partition")
    if strategy == Placement.ONE_PER_SERVER:
        if servers != partitions:
            raise ShapeMismatch(
                f"one_per_server needs equal counts, got {servers} servers / {partitions} partitions"
            )
        return PartitionMap(tuple((i,) for i in range(servers)), servers)
    if strategy == Placement.REPLICATED_ALL:
        return PartitionMap(tuple(tuple(range(servers)) for _ in range(partitions)), servers)
    if custom is None or len(custom) != partitions:
        raise ShapeMismatch(f"custom placement needs one host list per partition ({partitions})")
    return PartitionMap(tuple(tuple(sorted(set(int(s) for s in h))) for h in custom), servers)


@dataclass
class RdbmsServer:
    index: int
    speed_factor: float = 1.0
    base_service_time: float = 0.02
    hosted: frozenset[int] = frozenset()
    reference_size: float = REFERENCE_QUERY_SIZE
    queue: deque = field(default_factory=deque)
    current: Query | None = None
    busy_time: float = 0.0
    arrivals: int = 0
    completions: int = 0

    @property
    def in_system(self) -> int:
        return len(self.queue) + (self.current is not None)

    def service_duration(self, size: float, factor: float = 1.0) -> float:
        d = self.base_service_time * (size / self.reference_size) / self.speed_factor
        if factor != 1.0:
            d = d * factor
        return d


NoiseFn = Callable[[], float]


def _start(server: RdbmsServer, query: Query, now: float, noise: NoiseFn | None) -> float:
    server.current = query
    query.service_start = now
    return now + server.service_duration(query.size, noise() if noise else 1.0)


def serve(server: RdbmsServer, query: Query, now: float, noise: NoiseFn | None = None) -> float | None:
    """Accept an arriving query; returns its completion time if service starts now."""
    query.arrived_at = now
    query.fifo_no = server.arrivals
    server.arrivals += 1
    if server.current is None:
        return _start(server, query, now, noise)
    server.queue.append(query)
    return None


def complete(
    server: RdbmsServer, now: float, noise: NoiseFn | None = None
) -> tuple[Query, float | None]:
    """Finish the query in service; start the next queued one if any."""
    done = server.current
    done.completed_at = now
    server.busy_time += now - done.service_start
    server.completions += 1
    server.current = None
    if server.queue:
        return done, _start(server, server.queue.popleft(), now, noise)
    return done, None


def utilization(server: RdbmsServer, window: float) -> float:
    """Busy fraction of ``window`` seconds; ``busy_time`` must cover that window."""
    if not window > 0:
        raise ValueError("window must be > 0")
    return min(1.0, max(0.0, server.busy_time / window))


@dataclass
class OlapServer:
    index: int
    state: PolicyState
    sessions: set[int] = field(default_factory=set)


def forward(
    olap: OlapServer,
    query: Query,
    policy: Policy,
    partition_map: PartitionMap,
    stream: RandomStream,
    links: Sequence[Sequence[Link]],
    now: float,
) -> tuple[int, float]:
    """Pick the serving RDBMS server and compute the query's arrival time there.

    ``links[r]`` is the path from this OLAP server to RDBMS server ``r``.
    """
    try:
        eligible = partition_map.hosts[query.target_partition]
    except IndexError:
        eligible = ()
    if not eligible:
        raise NoEligibleServer(f"partition {query.target_partition} has no hosting server")
    server = pick(policy, olap.state, eligible, stream)
    olap.state.record_dispatch(server)
    query.server = server
    query.dispatched_at = now
    return server, now + transfer_delay(links[server], query.size)
