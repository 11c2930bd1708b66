"""OLAP session lifecycle, dashboard page traffic and RDBMS transactions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .engine import DistKind, DistributionSpec, RandomStream, sample
from .topology import Topology

REFERENCE_QUERY_SIZE = 10240.0


class Infeasible(ValueError):
    pass


class SessionMode(str, Enum):
    ALWAYS_ON = "always_on"
    ON_OFF = "on_off"


@dataclass(frozen=True)
class ProfileConfig:
    start_time: DistributionSpec = DistributionSpec.uniform(50, 55)
    start_offset: DistributionSpec = DistributionSpec.uniform(5, 10)
    inter_repetition: DistributionSpec = DistributionSpec.exponential(300)
    on_duration: DistributionSpec = DistributionSpec.exponential(600)
    repetitions_unlimited: bool = True
    pattern: str = "concurrent"
    mode: SessionMode = SessionMode.ALWAYS_ON


@dataclass(frozen=True)
class PageModel:
    objects_per_page: DistributionSpec = DistributionSpec.uniform_int(7, 10)
    object_size: DistributionSpec = DistributionSpec.uniform(5120, 10240)
    object_refresh: float = 1.0
    page_refresh: float = 10.0

    def problems(self) -> list[str]:
        out = []
        if self.objects_per_page.kind not in (DistKind.CONSTANT, DistKind.UNIFORM_INT):
            out.append("objects_per_page must be constant(n) or uniform_int(lo, hi)")
        if not self.object_refresh > 0 or not self.page_refresh > 0:
            out.append("refresh periods must be > 0")
        else:
            ratio = self.page_refresh / self.object_refresh
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                out.append("object_refresh must divide page_refresh")
        return out


@dataclass(frozen=True)
class TransactionModel:
    query_mix: float = 1.0
    interarrival: DistributionSpec = DistributionSpec.constant(1)
    size: DistributionSpec = DistributionSpec.constant(10240)

    @property
    def per_session_rate(self) -> float:
        return 1.0 / self.interarrival.mean


@dataclass
class Session:
    id: int
    lan: int
    olap: int
    start_time: float
    duty_cycle: float = 1.0
    active: bool = False
    active_until: float = math.inf
    page_bytes: float = 0.0
    # which recurring chains currently have a pending event
    page_on: bool = False
    object_on: bool = False
    dispatch_on: bool = False


@dataclass
class Query:
    id: int
    created_at: float
    size: float
    source: int
    target_partition: int
    server: int = -1
    dispatched_at: float = math.nan
    arrived_at: float = math.nan
    service_start: float = math.nan
    completed_at: float = math.nan
    fifo_no: int = -1


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sessions_per_lan(users: int, duty_cycle: float) -> int:
    return round_half_up(users * duty_cycle)


def spawn_sessions(
    profile: ProfileConfig,
    topology: Topology,
    stream: RandomStream,
    duty_cycle: float = 1.0,
) -> list[Session]:
    """Create the session population with start times.

    Each LAN contributes ``round(users * duty_cycle)`` sessions; session k of
    a LAN goes to the LAN's k-th destination preference, cycling.
    """
    if not 0 < duty_cycle <= 1:
        raise ValueError(f"duty_cycle must be in (0, 1], got {duty_cycle}")
    olap_index = {o: i for i, o in enumerate(topology.olap_ids)}
    sessions: list[Session] = []
    for li, lan in enumerate(topology.lans):
        prefs = topology.destinations_of(lan.id)
        for k in range(sessions_per_lan(lan.users, duty_cycle)):
            start = sample(profile.start_time, stream) + sample(profile.start_offset, stream)
            sessions.append(
                Session(
                    id=len(sessions),
                    lan=li,
                    olap=olap_index[prefs[k % len(prefs)]],
                    start_time=start,
                    duty_cycle=duty_cycle,
                )
            )
    return sessions


def calibrate_duty_cycle(target_aggregate: float, users: int, txn: TransactionModel) -> float:
    """Duty cycle that makes ``users`` always-on sessions offer ``target_aggregate`` q/s."""
    if not target_aggregate > 0 or not users > 0:
        raise ValueError("target and users must be positive")
    duty = target_aggregate / (users * txn.per_session_rate)
    if duty > 1.0:
        raise Infeasible(
            f"{target_aggregate} q/s needs duty cycle {duty:.4f} > 1 with {users} users"
        )
    return duty


def partition_cdf(partitions: int, skew: float) -> list[float]:
    """Cumulative Zipf(skew) weights over partitions (rank 1 = partition 0)."""
    weights = [1.0 / (k + 1) ** skew for k in range(partitions)]
    total = math.fsum(weights)
    cdf, acc = [], 0.0
    for w in weights:
        acc += w / total
        cdf.append(acc)
    cdf[-1] = 1.0
    return cdf


def assign_partition(
    partitions: int, stream: RandomStream, cdf: list[float] | None = None
) -> int:
    """Uniform partition choice, or a Zipf-skewed one when ``cdf`` is given."""
    if partitions == 1:
        return 0
    u = stream.uniform()
    if cdf is None:
        p = int(u * partitions)
        return p if p < partitions else partitions - 1
    for p, c in enumerate(cdf):
        if u < c:
            return p
    return partitions - 1


# --- per-session recurring chains -------------------------------------------


def redraw_page(page: PageModel, counts: RandomStream, sizes: RandomStream) -> float:
    """Bytes of a freshly drawn dashboard page."""
    n = int(sample(page.objects_per_page, counts))
    total = 0.0
    for _ in range(n):
        total += sample(page.object_size, sizes)
    return total


@dataclass
class WorkloadStreams:
    object_count: RandomStream
    object_size: RandomStream
    inter_repetition: RandomStream
    on_duration: RandomStream
    interarrival: RandomStream
    query_size: RandomStream
    partition: RandomStream


@dataclass
class SessionTick:
    """Outcome of advancing one chain of a session."""

    next_time: float | None
    query_size: float | None = None
    downloaded: float = 0.0


def session_tick(
    session: Session,
    chain: str,
    now: float,
    page: PageModel,
    txn: TransactionModel,
    streams: WorkloadStreams,
) -> SessionTick:
    """Advance the ``page``, ``object`` or ``dispatch`` chain of an active session.

    A chain that finds its session past ``active_until`` stops and reports
    ``next_time=None``; a repetition restarts it later.
    """
    if now >= session.active_until:
        setattr(session, f"{chain}_on", False)
        if not (session.page_on or session.object_on or session.dispatch_on):
            session.active = False
        return SessionTick(None)
    if chain == "page":
        session.page_bytes = redraw_page(page, streams.object_count, streams.object_size)
        return SessionTick(now + page.page_refresh)
    if chain == "object":
        return SessionTick(now + page.object_refresh, downloaded=session.page_bytes)
    size = sample(txn.size, streams.query_size)
    return SessionTick(now + sample(txn.interarrival, streams.interarrival), query_size=size)
