"""Server-selection policies used by OLAP servers when forwarding queries.

Each OLAP server owns a :class:`PolicyState`; there is no global balancer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .engine import RandomStream, SimulationError


class NonConvergence(ArithmeticError):
    pass


class PolicyKind(str, Enum):
    FLOW_WEIGHTED = "flow_weighted"
    ROUND_ROBIN = "round_robin"
    LEAST_OUTSTANDING = "least_outstanding"
    RESPONSE_TIME_WEIGHTED = "response_time_weighted"

    @property
    def code(self) -> int:
        return list(PolicyKind).index(self)


@dataclass(frozen=True)
class Policy:
    kind: PolicyKind = PolicyKind.FLOW_WEIGHTED
    ewma_alpha: float = 0.1

    def problems(self) -> list[str]:
        if not 0 < self.ewma_alpha <= 1:
            return [f"ewma_alpha must be in (0, 1], got {self.ewma_alpha}"]
        return []


@dataclass
class PolicyState:
    """Forwarding scratch for one OLAP server.

    ``flow`` is that server's row of the flow table.  An EWMA of 0.0 means
    no observation yet.
    """

    flow: Sequence[float]
    cursor: int = -1
    outstanding: list[int] = field(default_factory=list)
    ewma: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = len(self.flow)
        if not self.outstanding:
            self.outstanding = [0] * n
        if not self.ewma:
            self.ewma = [0.0] * n

    def record_dispatch(self, server: int) -> None:
        self.outstanding[server] += 1


def _weighted(weights: list[float], eligible: Sequence[int], u: float) -> int:
    total = 0.0
    for w in weights:
        total += w
    if not total > 0:
        i = int(u * len(eligible))
        return eligible[i if i < len(eligible) else len(eligible) - 1]
    target = u * total
    acc = 0.0
    for s, w in zip(eligible, weights):
        acc += w
        if target < acc:
            return s
    return eligible[-1]


def pick(policy: Policy, state: PolicyState, eligible: Sequence[int], stream: RandomStream) -> int:
    """Choose a server from ``eligible`` (ascending ids, nonempty)."""
    if len(eligible) == 1:
        return eligible[0]
    kind = policy.kind
    if kind == PolicyKind.FLOW_WEIGHTED:
        return _weighted([state.flow[s] for s in eligible], eligible, stream.uniform())
    if kind == PolicyKind.ROUND_ROBIN:
        for s in eligible:
            if s > state.cursor:
                state.cursor = s
                return s
        state.cursor = eligible[0]
        return eligible[0]
    if kind == PolicyKind.LEAST_OUTSTANDING:
        best = eligible[0]
        for s in eligible:
            if state.outstanding[s] < state.outstanding[best]:
                best = s
        return best
    # response-time weighted: weight = 1/EWMA, unobserved servers get the mean weight
    ewma = state.ewma
    known = 0.0
    n_known = 0
    for s in eligible:
        if ewma[s] > 0.0:
            known += 1.0 / ewma[s]
            n_known += 1
    fill = known / n_known if n_known else 1.0
    weights = [1.0 / ewma[s] if ewma[s] > 0.0 else fill for s in eligible]
    return _weighted(weights, eligible, stream.uniform())


def observe_completion(state: PolicyState, server: int, processing_time: float, alpha: float) -> None:
    if state.outstanding[server] <= 0:
        raise SimulationError(f"outstanding count for server {server} would go negative")
    state.outstanding[server] -= 1
    prev = state.ewma[server]
    if prev == 0.0:
        state.ewma[server] = processing_time
    else:
        state.ewma[server] = alpha * processing_time + (1.0 - alpha) * prev


def steady_share(
    policy: Policy,
    speed_factors: Sequence[float],
    *,
    flow: Sequence[float] | None = None,
    base_service_time: float = 0.02,
    total_rate: float = 0.0,
    tol: float = 1e-9,
    max_iter: int = 10_000,
) -> list[float]:
    """Predicted long-run share of queries per server.

    For response-time weighting the share is the fixed point of
    ``share_i ∝ 1 / T_i`` where ``T_i`` is the expected processing time at
    server i: service ``base/speed_i`` plus the M/D/1 wait at its arrival
    rate ``share_i * total_rate``.  ``total_rate=0`` gives the light-load
    limit, where the share is proportional to speed.
    """
    n = len(speed_factors)
    if policy.kind == PolicyKind.FLOW_WEIGHTED:
        if flow is None:
            return [1.0 / n] * n
        total = math.fsum(flow)
        return [w / total for w in flow]
    if policy.kind != PolicyKind.RESPONSE_TIME_WEIGHTED:
        raise ValueError(f"no steady-share model for {policy.kind.value}")

    service = [base_service_time / s for s in speed_factors]

    def processing(i: int, share: float) -> float:
        rho = share * total_rate * service[i]
        if rho >= 1.0:
            return math.inf
        return service[i] + rho * service[i] / (2.0 * (1.0 - rho))

    share = [1.0 / n] * n
    for _ in range(max_iter):
        inv = [1.0 / processing(i, share[i]) for i in range(n)]
        z = math.fsum(inv)
        if not z > 0:
            raise NonConvergence("offered load saturates every server")
        target = [v / z for v in inv]
        # damped update; undamped iteration oscillates under heavy load
        new = [0.5 * a + 0.5 * b for a, b in zip(share, target)]
        if max(abs(a - b) for a, b in zip(new, share)) < tol:
            return new
        share = new
    raise NonConvergence(f"steady_share did not converge in {max_iter} iterations")
