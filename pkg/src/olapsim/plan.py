"""Inputs and outputs of a simulation kernel run.

A :class:`KernelPlan` is everything a kernel needs, already resolved from a
scenario (sessions placed, paths computed, placement fixed).  Both kernel
backends consume the same plan and fill the same :class:`KernelResult`.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .cluster import PartitionMap
from .engine import EventKind
from .routing import Policy
from .topology import Link
from .workload import REFERENCE_QUERY_SIZE, PageModel, ProfileConfig, Session, SessionMode, TransactionModel


class InvariantViolation(RuntimeError):
    """A kernel consistency check failed (accounting bug, not a config error)."""


@dataclass
class KernelPlan:
    seed: int
    sessions: list[Session]
    n_lans: int
    profile: ProfileConfig
    page: PageModel
    txn: TransactionModel
    partition_map: PartitionMap
    partition_cdf: list[float] | None
    flow: list[list[float]]
    # route_links[o][r]: OLAP o -> RDBMS r; download_links[o][l]: OLAP o -> LAN l
    route_links: list[list[list[Link]]]
    download_links: list[list[list[Link]]]
    speed_factors: list[float]
    policy: Policy = field(default_factory=Policy)
    base_service_time: float = 0.02
    reference_size: float = REFERENCE_QUERY_SIZE
    service_noise: float = 0.0
    max_events: int = 50_000_000
    end_time: float = math.inf
    warmup: float = 100.0
    bucket_width: float = 1.0
    reservoir_size: int = 10_000

    @property
    def n_olap(self) -> int:
        return len(self.flow)

    @property
    def n_rdbms(self) -> int:
        return len(self.speed_factors)

    @property
    def always_on(self) -> bool:
        return self.profile.mode == SessionMode.ALWAYS_ON


@dataclass
class KernelResult:
    backend: str
    bucket_width: float
    warmup: float
    events_by_kind: list[int]
    final_clock: float
    t_end: float
    stopped_by: str
    # (buckets, servers)
    arrivals: np.ndarray
    completions: np.ndarray
    proc_sum: np.ndarray
    busy: np.ndarray
    qlen: np.ndarray
    # post-warmup per-server accumulators
    n_post: np.ndarray
    sum_proc: np.ndarray
    sum_wait: np.ndarray
    sum_service: np.ndarray
    max_proc: np.ndarray
    reservoirs: np.ndarray
    res_seen: np.ndarray
    global_reservoir: np.ndarray
    global_seen: int
    # conservation counters at the end of the run
    dispatched: int
    arrived: int
    completed: int
    queued: int
    in_service: int
    n_waited: int
    max_wait: float
    http_bytes: float
    http_delay_sum: float
    http_downloads: int
    trace_times: np.ndarray | None = None
    trace_kinds: np.ndarray | None = None

    @property
    def total_events(self) -> int:
        return int(sum(self.events_by_kind))

    @property
    def in_flight(self) -> int:
        return self.dispatched - self.arrived

    def event_counts(self) -> dict[str, int]:
        return {k.name: int(self.events_by_kind[k]) for k in EventKind}

    def conserved(self) -> bool:
        return self.dispatched == self.completed + self.queued + self.in_service + self.in_flight

    def trace_digest(self) -> str:
        if self.trace_times is None:
            raise ValueError("run was not traced")
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.trace_times, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.trace_kinds, dtype="u1").tobytes())
        return h.hexdigest()

    def dispatch_times(self) -> np.ndarray:
        if self.trace_times is None:
            raise ValueError("run was not traced")
        return self.trace_times[self.trace_kinds == EventKind.QUERY_DISPATCH]

