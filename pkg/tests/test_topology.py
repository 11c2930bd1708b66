import dataclasses
import math

import pytest

from olapsim.topology import (
    Link,
    NodeKind,
    NoRoute,
    Topology,
    build_paper_topology,
    build_topology,
    path,
    transfer_delay,
    validate,
)


@pytest.fixture(scope="module")
def topo():
    return build_paper_topology()


def hops(links, src):
    """Node sequence visited along ``links`` starting at ``src``."""
    nodes = [src]
    for link in links:
        nodes.append(link.b if link.a == nodes[-1] else link.a)
    return nodes


class TestPaperTopology:
    def test_inventory(self, topo):
        kinds = [n.kind for n in topo.nodes]
        assert len(topo.nodes) == 25
        assert kinds.count(NodeKind.LAN_SEGMENT) == 6
        assert kinds.count(NodeKind.ISP_GATEWAY) == 3
        assert kinds.count(NodeKind.CLOUD_SWITCH) == 4
        assert kinds.count(NodeKind.OLAP_SERVER) == 4
        assert kinds.count(NodeKind.RDBMS_SERVER) == 8

    def test_users(self, topo):
        assert topo.total_users == 3000
        assert all(lan.users == 500 for lan in topo.lans)

    def test_even_flow_weights(self, topo):
        assert all(w == 0.125 for row in topo.flow for w in row)
        assert all(math.isclose(math.fsum(row), 1.0, abs_tol=1e-9) for row in topo.flow)

    def test_two_lans_per_gateway(self, topo):
        g = topo.graph()
        for gw in topo.ids(NodeKind.ISP_GATEWAY):
            lans = [n for n in g.neighbors(gw) if n.startswith("lan_")]
            assert len(lans) == 2

    def test_every_lan_prefers_all_olap_servers(self, topo):
        for lan in topo.lans:
            assert topo.destinations_of(lan.id) == tuple(topo.olap_ids)

    def test_is_valid(self, topo):
        assert validate(topo) == []

    def test_referentially_transparent(self):
        assert build_paper_topology() == build_paper_topology()


class TestPath:
    def test_lan_to_olap_goes_through_ingress(self, topo):
        assert hops(path(topo, "lan_1", "olap_1"), "lan_1") == ["lan_1", "gw_1", "switch_4", "switch_2", "olap_1"]

    def test_same_node_is_empty(self, topo):
        assert path(topo, "olap_1", "olap_1") == []

    def test_olap_to_rdbms5_uses_switch3(self, topo):
        assert hops(path(topo, "olap_1", "rdbms_5"), "olap_1") == ["olap_1", "switch_2", "switch_3", "rdbms_5"]

    def test_olap_to_rdbms1_uses_switch1(self, topo):
        assert hops(path(topo, "olap_2", "rdbms_1"), "olap_2")[2] == "switch_1"

    def test_all_query_paths_short(self, topo):
        for o in topo.olap_ids:
            for r in topo.rdbms_ids:
                assert 1 <= len(path(topo, o, r)) <= 3

    def test_unknown_node(self, topo):
        with pytest.raises(NoRoute):
            path(topo, "lan_1", "nowhere")

    def test_disconnected(self, topo):
        cut = dataclasses.replace(topo, links=tuple(l for l in topo.links if "rdbms_8" not in (l.a, l.b)))
        with pytest.raises(NoRoute):
            path(cut, "olap_1", "rdbms_8")
        assert any("not connected" in p for p in validate(cut))


class TestTransferDelay:
    def test_empty(self):
        assert transfer_delay([], 10240) == 0.0

    def test_single_gigabit_link(self):
        assert math.isclose(transfer_delay([Link("a", "b", 1e9, 0.0)], 10240), 8.192e-5, rel_tol=1e-12)

    def test_linear_in_size(self, topo):
        links = [dataclasses.replace(l, latency=0.0) for l in path(topo, "olap_1", "rdbms_5")]
        assert transfer_delay(links, 20480) == 2 * transfer_delay(links, 10240)

    def test_latency_per_link(self, topo):
        links = path(topo, "olap_1", "rdbms_5")
        assert math.isclose(transfer_delay(links, 0), 3 * 50e-6)


class TestValidate:
    def test_flow_row_short_of_one(self, topo):
        flow = ((0.1125,) * 8,) + topo.flow[1:]
        problems = validate(dataclasses.replace(topo, flow=flow))
        assert len(problems) == 1 and "olap_1" in problems[0]

    def test_orphan_rdbms(self, topo):
        row = (1 / 7,) * 7 + (0.0,)
        problems = validate(dataclasses.replace(topo, flow=(row,) * 4))
        assert len(problems) == 1 and "rdbms_8" in problems[0]

    def test_lan_without_destination(self, topo):
        dest = ((topo.destinations[0][0], ()),) + topo.destinations[1:]
        problems = validate(dataclasses.replace(topo, destinations=dest))
        assert len(problems) == 1 and "lan_1" in problems[0]

    def test_bad_link(self, topo):
        links = topo.links + (Link("olap_1", "olap_1", 0.0, -1.0),)
        assert len(validate(dataclasses.replace(topo, links=links))) == 3

    def test_generalised_builder(self):
        t = build_topology(lans=2, users_per_lan=10, gateways=1, olap_servers=1, rdbms_servers=3)
        assert validate(t) == []
        assert len(t.nodes) == 2 + 1 + 4 + 1 + 3
        assert isinstance(t, Topology)
