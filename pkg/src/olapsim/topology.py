"""Static two-domain network: extranet LANs and gateways, cloud switches and servers.

Wiring of the reference build (every link single, graph is a tree)::

    lan_i -- gw_g -- switch_4 -- switch_2 -- olap_1..4
                                 switch_2 -- switch_1 -- rdbms_1..4
                                 switch_2 -- switch_3 -- rdbms_5..8

Links carry a fixed latency and a bandwidth; there is no link queueing, so a
transfer costs ``latency + bytes * 8 / bandwidth`` per hop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import networkx as nx

CLOUD_BANDWIDTH = 1e9
CLOUD_LATENCY = 50e-6
EXTRANET_BANDWIDTH = 1e8
EXTRANET_LATENCY = 5e-3

FLOW_TOLERANCE = 1e-9


class NoRoute(LookupError):
    pass


class NodeKind(str, Enum):
    LAN_SEGMENT = "lan"
    ISP_GATEWAY = "gateway"
    CLOUD_SWITCH = "switch"
    OLAP_SERVER = "olap"
    RDBMS_SERVER = "rdbms"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    users: int = 0


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    bandwidth: float
    latency: float

    @property
    def endpoints(self) -> tuple[str, str]:
        return (self.a, self.b)


@dataclass(frozen=True)
class Topology:
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    # flow[o][r]: share of OLAP server o's queries sent to RDBMS server r
    flow: tuple[tuple[float, ...], ...]
    # LAN id -> OLAP ids, in preference order
    destinations: tuple[tuple[str, tuple[str, ...]], ...]

    def ids(self, kind: NodeKind) -> list[str]:
        return [n.id for n in self.nodes if n.kind == kind]

    @property
    def lans(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == NodeKind.LAN_SEGMENT]

    @property
    def olap_ids(self) -> list[str]:
        return self.ids(NodeKind.OLAP_SERVER)

    @property
    def rdbms_ids(self) -> list[str]:
        return self.ids(NodeKind.RDBMS_SERVER)

    @property
    def total_users(self) -> int:
        return sum(n.users for n in self.lans)

    def destinations_of(self, lan_id: str) -> tuple[str, ...]:
        return dict(self.destinations)[lan_id]

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        for n in self.nodes:
            g.add_node(n.id)
        for link in self.links:
            g.add_edge(link.a, link.b, link=link)
        return g


def build_topology(
    *,
    lans: int = 6,
    users_per_lan: int = 500,
    gateways: int = 3,
    olap_servers: int = 4,
    rdbms_servers: int = 8,
    cloud_bandwidth: float = CLOUD_BANDWIDTH,
    cloud_latency: float = CLOUD_LATENCY,
    extranet_bandwidth: float = EXTRANET_BANDWIDTH,
    extranet_latency: float = EXTRANET_LATENCY,
    flow: Sequence[Sequence[float]] | None = None,
    destinations: Sequence[Sequence[int]] | None = None,
) -> Topology:
    """Parameterised cluster wiring; the defaults give the reference layout.

    LANs are spread over gateways in contiguous blocks; the first half of the
    RDBMS servers hang off switch 1 and the rest off switch 3.  ``flow`` is
    one row per OLAP server; ``destinations`` one list of OLAP indices per LAN.
    """
    gateways = max(1, min(gateways, lans))
    nodes: list[Node] = []
    links: list[Link] = []

    def cloud(a: str, b: str) -> None:
        links.append(Link(a, b, cloud_bandwidth, cloud_latency))

    def extranet(a: str, b: str) -> None:
        links.append(Link(a, b, extranet_bandwidth, extranet_latency))

    lan_ids = [f"lan_{i + 1}" for i in range(lans)]
    gw_ids = [f"gw_{g + 1}" for g in range(gateways)]
    sw = [f"switch_{k}" for k in range(1, 5)]
    olap_ids = [f"olap_{i + 1}" for i in range(olap_servers)]
    rdbms_ids = [f"rdbms_{i + 1}" for i in range(rdbms_servers)]

    nodes += [Node(i, NodeKind.LAN_SEGMENT, users_per_lan) for i in lan_ids]
    nodes += [Node(i, NodeKind.ISP_GATEWAY) for i in gw_ids]
    nodes += [Node(i, NodeKind.CLOUD_SWITCH) for i in sw]
    nodes += [Node(i, NodeKind.OLAP_SERVER) for i in olap_ids]
    nodes += [Node(i, NodeKind.RDBMS_SERVER) for i in rdbms_ids]

    for i, lan in enumerate(lan_ids):
        extranet(lan, gw_ids[i * gateways // lans])
    for gw in gw_ids:
        extranet(gw, sw[3])
    cloud(sw[3], sw[1])
    cloud(sw[1], sw[0])
    cloud(sw[1], sw[2])
    for o in olap_ids:
        cloud(sw[1], o)
    half = (rdbms_servers + 1) // 2
    for j, r in enumerate(rdbms_ids):
        cloud(sw[0] if j < half else sw[2], r)

    if flow is None:
        flow_rows = tuple(tuple([1.0 / rdbms_servers] * rdbms_servers) for _ in olap_ids)
    else:
        flow_rows = tuple(tuple(float(w) for w in row) for row in flow)
    if destinations is None:
        dest = tuple((lan, tuple(olap_ids)) for lan in lan_ids)
    else:
        dest = tuple(
            (lan, tuple(olap_ids[k] for k in prefs)) for lan, prefs in zip(lan_ids, destinations)
        )
    return Topology(tuple(nodes), tuple(links), flow_rows, dest)


def build_paper_topology() -> Topology:
    return build_topology()


def path(topology: Topology, src: str, dst: str) -> list[Link]:
    """Shortest hop path from ``src`` to ``dst`` as an ordered link list."""
    if src == dst:
        return []
    g = topology.graph()
    for node in (src, dst):
        if node not in g:
            raise NoRoute(f"unknown node {node!r}")
    try:
        hops = nx.shortest_path(g, src, dst)
    except nx.NetworkXNoPath:
        raise NoRoute(f"no route from {src} to {dst}") from None
    return [g.edges[u, v]["link"] for u, v in zip(hops, hops[1:])]


def transfer_delay(links: Sequence[Link], size: float) -> float:
    """Store-and-forward delay of ``size`` bytes along ``links``."""
    d = 0.0
    for link in links:
        d += link.latency + size * 8.0 / link.bandwidth
    return d


def validate(topology: Topology) -> list[str]:
    problems: list[str] = []
    ids = [n.id for n in topology.nodes]
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            problems.append(f"duplicate node id {i!r}")
        seen.add(i)

    for link in topology.links:
        if link.a not in seen or link.b not in seen:
            problems.append(f"link {link.a}-{link.b} references an unknown node")
        if link.a == link.b:
            problems.append(f"link {link.a}-{link.b} is a self-loop")
        if not link.bandwidth > 0:
            problems.append(f"link {link.a}-{link.b}: bandwidth must be > 0")
        if not link.latency >= 0:
            problems.append(f"link {link.a}-{link.b}: latency must be >= 0")

    g = topology.graph()
    if len(g) and not nx.is_connected(g):
        problems.append("topology graph is not connected")

    olaps, rdbms = topology.olap_ids, topology.rdbms_ids
    if len(topology.flow) != len(olaps):
        problems.append(f"flow table has {len(topology.flow)} rows for {len(olaps)} OLAP servers")
    incoming = [0.0] * len(rdbms)
    for o, row in zip(olaps, topology.flow):
        if len(row) != len(rdbms):
            problems.append(f"{o}: flow row has {len(row)} weights for {len(rdbms)} RDBMS servers")
            continue
        if any(not (w >= 0 and math.isfinite(w)) for w in row):
            problems.append(f"{o}: flow weights must be finite and non-negative")
            continue
        total = math.fsum(row)
        if abs(total - 1.0) > FLOW_TOLERANCE:
            problems.append(f"{o}: flow weights sum to {total:.12g}, expected 1")
        if not any(w > 0 for w in row):
            problems.append(f"{o}: no positive-weight RDBMS flow")
        for j, w in enumerate(row):
            incoming[j] += w
    if len(topology.flow) == len(olaps):
        for r, w in zip(rdbms, incoming):
            if w <= 0:
                problems.append(f"{r}: no incoming flow from any OLAP server")

    dest = dict(topology.destinations)
    for lan in topology.lans:
        prefs = dest.get(lan.id, ())
        if not prefs:
            problems.append(f"{lan.id}: no OLAP destination preference")
        for o in prefs:
            if o not in olaps:
                problems.append(f"{lan.id}: destination {o!r} is not an OLAP server")
    return problems
