import hashlib
import json
import xml.etree.ElementTree as ET

import pytest

from core.errors import ExportError
from core.network import NodeKind
from core.pipeline import convert
from core.sumo_export import DOCUMENTS, SUFFIXES, export_network, export_routes, write_bundle
from tests import scenario_factory as sf


def parse(text):
    return ET.fromstring(text.split("\n", 1)[1])


def test_documents_cover_the_network():
    converted = convert(sf.four_way(vehicles=0))
    network, bundle = converted.network, converted.bundle
    nodes = parse(bundle.nodes_doc)
    edges = parse(bundle.edges_doc)
    connections = parse(bundle.connections_doc)
    assert sorted(n.get("id") for n in nodes) == sorted(network.nodes)
    assert sorted(e.get("id") for e in edges) == sorted(network.edges)
    assert len(connections) == len(network.connections) == 12
    for el in edges:
        edge = network.edges[el.get("id")]
        assert int(el.get("numLanes")) == len(el.findall("lane")) == edge.num_lanes
        assert el.get("from") in network.nodes and el.get("to") in network.nodes
    junction = next(n for n in network.nodes.values() if n.kind == NodeKind.junction)
    assert nodes.find(f"node[@id='{junction.id}']").get("type") == "priority"


def test_stop_controlled_junction_is_allway_stop():
    bundle = convert(sf.four_way(vehicles=0, stop=True)).bundle
    types = [n.get("type") for n in parse(bundle.nodes_doc)]
    assert "allway_stop" in types
    assert "traffic_light" not in types


def test_signal_program_becomes_a_static_logic():
    converted = convert(sf.four_way(vehicles=0, signalized=True))
    (node_id, program), = converted.programs.items()
    tls = parse(converted.bundle.tls_doc)
    (logic,) = tls.findall("tlLogic")
    assert logic.get("id") == node_id
    phases = logic.findall("phase")
    assert all(len(p.get("state")) == len(program.connection_ids) == 12 for p in phases)
    total = sum(float(p.get("duration")) for p in phases)
    assert total == pytest.approx(program.extended_to * 0.1, abs=0.05 * len(phases))
    links = tls.findall("connection")
    assert sorted(int(c.get("linkIndex")) for c in links) == list(range(12))
    nodes = parse(converted.bundle.nodes_doc)
    assert nodes.find(f"node[@id='{node_id}']").get("type") == "traffic_light"


def test_program_for_an_unknown_node_is_rejected():
    converted = convert(sf.four_way(vehicles=0, signalized=True))
    (program,) = converted.programs.values()
    with pytest.raises(ExportError, match="unknown node"):
        export_network(converted.network, {"nowhere": program})


def test_routes_list_one_vehicle_per_routed_agent():
    converted = convert(sf.four_way(vehicles=4))
    routes = parse(converted.bundle.routes_doc)
    vehicles = routes.findall("vehicle")
    assert [v.get("id") for v in vehicles] == ["v0", "v1", "v2", "v3"]
    assert len(routes.findall("vType")) == 4
    for v in vehicles:
        edges = v.find("route").get("edges").split()
        assert edges and all(e in converted.network.edges for e in edges)
    vtype = routes.find("vType[@id='t_v0']")
    assert vtype.get("carFollowModel") == "Krauss"
    assert float(vtype.get("minGap")) > 0.0


def test_off_network_agents_are_left_as_comments():
    far = sf.track_line("far", (50.0, 20.0), (3.0, 0.0))
    converted = convert(sf.with_tracks(sf.straight_road(vehicles=1), far))
    assert "off-network agent far" in converted.bundle.routes_doc
    ids = [v.get("id") for v in parse(converted.bundle.routes_doc).findall("vehicle")]
    assert "far" not in ids


def test_junction_agent_departs_at_the_end_of_its_lane():
    inside = sf.track_line("j", (0.0, 0.5 * sf.W), (-6.0, 0.0))
    s = sf.with_tracks(sf.four_way(vehicles=0), inside)
    converted = convert(s)
    (spec,) = converted.demand
    assert spec.placement.connection_id is not None
    text = export_routes(converted.demand, converted.network)
    vehicle = parse(text).find("vehicle[@id='j']")
    length = converted.network.lane(spec.placement.edge_id, spec.placement.lane_index).length
    assert vehicle.get("departPos") == f"{length:.2f}"


def test_bundle_files_are_byte_identical_and_hashed(tmp_path):
    s = sf.four_way(vehicles=4, signalized=True)
    first = write_bundle(convert(s).bundle, tmp_path / "a", s.id)
    second = write_bundle(convert(s).bundle, tmp_path / "b", s.id)
    assert [p.name for p in first] == [f"{s.id}{SUFFIXES[d]}" for d in DOCUMENTS] + ["manifest.json"]
    for a, b in zip(first, second):
        assert a.read_bytes() == b.read_bytes()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["scenario_id"] == s.id
    for name, digest in manifest["files"].items():
        assert hashlib.sha256((tmp_path / "a" / name).read_bytes()).hexdigest() == digest
