"""SUMO plain-XML export: the netconvert input set plus routes and a manifest.

Coordinates are written with 2 decimals, behavior parameters with 4, so identical input
gives byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from core.demand_builder import SUMO_ATTRIBUTES, AgentSpec, OffNetworkPose, Placement
from core.errors import ExportError
from core.network import Network, Node, NodeKind
from core.signal_estimator import SignalProgram
from schemas.scenario import TIMESTEP_S, LaneType

logger = logging.getLogger(__name__)

FORMAT_VERSION = "1.0"
SUMO_NET_VERSION = "1.20"
DOCUMENTS = ("nodes", "edges", "connections", "tls", "routes")
SUFFIXES = {
    "nodes": ".nod.xml",
    "edges": ".edg.xml",
    "connections": ".con.xml",
    "tls": ".tll.xml",
    "routes": ".rou.xml",
}
LANE_TYPES = {
    LaneType.surface_street: "passenger",
    LaneType.freeway: "passenger",
    LaneType.bike_lane: "bicycle",
}


@dataclass
class ExportBundle:
    nodes_doc: str = ""
    edges_doc: str = ""
    connections_doc: str = ""
    tls_doc: str = ""
    routes_doc: str = ""
    manifest: Dict[str, object] = field(default_factory=dict)

    def document(self, name: str) -> str:
        return getattr(self, f"{name}_doc")


def _xy(x: float, y: float) -> str:
    return f"{x:.2f},{y:.2f}"


def _shape(points: np.ndarray) -> str:
    return " ".join(_xy(float(x), float(y)) for x, y in points)


def _num(value: float) -> str:
    return f"{value:.4f}"


def _serialize(root: ET.Element) -> str:
    ET.indent(root, space="    ")
    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(root, encoding="unicode") + "\n"


def _check_unique(kind: str, ids: Iterable[str]) -> None:
    seen, dupes = set(), set()
    for i in ids:
        (dupes if i in seen else seen).add(i)
    if dupes:
        raise ExportError(f"duplicate {kind} ids: {', '.join(sorted(dupes))}")


def node_type(network: Network, node: Node) -> str:
    if node.signalized:
        return "traffic_light"
    conns = network.node_connections(node.id)
    if conns and all(c.stop_controlled for c in conns):
        return "allway_stop"
    return "priority"


# -------------------------------------------------------------------
# Network
# -------------------------------------------------------------------
def _nodes_doc(network: Network) -> str:
    root = ET.Element("nodes", version=SUMO_NET_VERSION)
    for node in network.nodes.values():
        attrs = {"id": node.id, "x": f"{node.x:.2f}", "y": f"{node.y:.2f}", "type": node_type(network, node)}
        if node.kind != NodeKind.endpoint and len(node.shape) >= 3:
            attrs["shape"] = _shape(node.shape)
        if node.signalized:
            attrs["tl"] = node.id
        ET.SubElement(root, "node", attrs)
    return _serialize(root)


def _edges_doc(network: Network) -> str:
    root = ET.Element("edges", version=SUMO_NET_VERSION)
    for edge in network.edges.values():
        el = ET.SubElement(
            root,
            "edge",
            {
                "id": edge.id,
                "from": edge.from_node,
                "to": edge.to_node,
                "priority": str(edge.priority),
                "numLanes": str(edge.num_lanes),
                "speed": f"{edge.speed:.2f}",
                "width": f"{edge.width:.2f}",
                "shape": _shape(edge.shape),
            },
        )
        for lane in edge.lanes:
            ET.SubElement(
                el,
                "lane",
                {
                    "index": str(lane.index),
                    "allow": LANE_TYPES[lane.lane_type],
                    "speed": f"{lane.speed_limit:.2f}",
                    "width": f"{lane.width:.2f}",
                    "shape": _shape(lane.shape),
                },
            )
    return _serialize(root)


def _connections_doc(network: Network) -> str:
    root = ET.Element("connections", version=SUMO_NET_VERSION)
    for conn in network.connections.values():
        ET.SubElement(
            root,
            "connection",
            {
                "from": conn.from_edge,
                "to": conn.to_edge,
                "fromLane": str(conn.from_lane_index),
                "toLane": str(conn.to_lane_index),
                "shape": _shape(conn.shape),
            },
        )
    return _serialize(root)


def _phases(program: SignalProgram) -> List[tuple]:
    """Runs of identical state strings as (duration seconds, state)."""
    runs: List[list] = []
    for t in range(program.extended_to):
        state = program.state_string(t)
        if runs and runs[-1][1] == state:
            runs[-1][0] += 1
        else:
            runs.append([1, state])
    return [(steps * TIMESTEP_S, state) for steps, state in runs]


def _tls_doc(network: Network, programs: Mapping[str, SignalProgram]) -> str:
    root = ET.Element("tlLogics", version=SUMO_NET_VERSION)
    for node_id in sorted(programs, key=lambda n: int(n[1:]) if n[1:].isdigit() else n):
        program = programs[node_id]
        logic = ET.SubElement(root, "tlLogic", {"id": node_id, "type": "static", "programID": "0", "offset": "0"})
        for duration, state in _phases(program):
            ET.SubElement(logic, "phase", {"duration": f"{duration:.1f}", "state": state})
    for node_id in sorted(programs, key=lambda n: int(n[1:]) if n[1:].isdigit() else n):
        program = programs[node_id]
        for index, cid in enumerate(program.connection_ids):
            conn = network.connections[cid]
            ET.SubElement(
                root,
                "connection",
                {
                    "from": conn.from_edge,
                    "to": conn.to_edge,
                    "fromLane": str(conn.from_lane_index),
                    "toLane": str(conn.to_lane_index),
                    "tl": node_id,
                    "linkIndex": str(index),
                },
            )
    return _serialize(root)


def export_network(network: Network, programs: Optional[Mapping[str, SignalProgram]] = None) -> ExportBundle:
    """Nodes, edges, connections and tls documents for one network."""
    programs = network.signal_programs if programs is None else programs
    _check_unique("node", network.nodes)
    _check_unique("edge", network.edges)
    _check_unique("node/edge", [*network.nodes, *network.edges])
    links = [(c.from_edge, c.from_lane_index, c.to_edge, c.to_lane_index) for c in network.connections.values()]
    if len(set(links)) != len(links):
        dupes = sorted({f"{a}_{b}->{c}_{d}" for a, b, c, d in links if links.count((a, b, c, d)) > 1})
        raise ExportError(f"duplicate connections: {', '.join(dupes)}")
    for node_id in programs:
        if node_id not in network.nodes:
            raise ExportError(f"signal program for unknown node {node_id}")
    return ExportBundle(
        nodes_doc=_nodes_doc(network),
        edges_doc=_edges_doc(network),
        connections_doc=_connections_doc(network),
        tls_doc=_tls_doc(network, programs),
    )


# -------------------------------------------------------------------
# Routes
# -------------------------------------------------------------------
def export_routes(demand: Sequence[AgentSpec], network: Optional[Network] = None) -> str:
    """One vType and one vehicle per routed agent; off-network agents become comments."""
    root = ET.Element("routes")
    vehicles = []
    for spec in sorted(demand, key=lambda s: s.track_id):
        if spec.replay:
            continue
        if isinstance(spec.placement, OffNetworkPose):
            p = spec.placement
            root.append(ET.Comment(f" off-network agent {spec.track_id} at {_xy(p.x, p.y)} heading {p.heading:.4f} "))
            continue
        if spec.route is None or not isinstance(spec.placement, Placement):
            logger.warning("agent %s has no route; skipped in routes export", spec.track_id)
            continue
        vtype = {"id": f"t_{spec.track_id}", "length": _num(spec.length), "width": _num(spec.width), "carFollowModel": "Krauss"}
        for name, attr in SUMO_ATTRIBUTES.items():
            value = getattr(spec.params, name)
            if value is not None:
                vtype[attr] = _num(value)
        ET.SubElement(root, "vType", vtype)
        vehicles.append(spec)
    for spec in vehicles:
        p = spec.placement
        depart_lane = p.lane_index
        depart_pos = p.offset
        if p.connection_id is not None and network is not None:
            # SUMO cannot depart inside a junction: start at the end of the from-lane
            depart_pos = network.lane(p.edge_id, p.lane_index).length
        veh = ET.SubElement(
            root,
            "vehicle",
            {
                "id": spec.track_id,
                "type": f"t_{spec.track_id}",
                "depart": "0.00",
                "departLane": str(depart_lane),
                "departPos": f"{depart_pos:.2f}",
                "departSpeed": f"{spec.initial_speed:.2f}",
            },
        )
        ET.SubElement(veh, "route", {"edges": " ".join(spec.route.edges)})
    return _serialize(root)


# -------------------------------------------------------------------
# Files
# -------------------------------------------------------------------
def write_bundle(bundle: ExportBundle, out_dir: Union[str, Path], scenario_id: str) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths, files = [], {}
    for name in DOCUMENTS:
        text = bundle.document(name)
        if not text:
            continue
        path = out / f"{scenario_id}{SUFFIXES[name]}"
        data = text.encode("utf-8")
        path.write_bytes(data)
        files[path.name] = hashlib.sha256(data).hexdigest()
        paths.append(path)
    bundle.manifest = {"format_version": FORMAT_VERSION, "sumo_version": SUMO_NET_VERSION, "scenario_id": scenario_id, "files": files}
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(bundle.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(manifest)
    logger.info("%s: wrote %d files to %s", scenario_id, len(paths), out)
    return paths
