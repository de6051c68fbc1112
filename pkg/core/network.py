"""Road-network types produced by the converter."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from schemas.scenario import LaneCenter, LaneType


class NodeKind(str, Enum):
    junction = "junction"
    lane_count_change = "lane_count_change"
    merge_split = "merge_split"
    endpoint = "endpoint"


class Movement(str, Enum):
    straight = "straight"
    left = "left"
    right = "right"
    uturn = "uturn"


def _length(shape: np.ndarray) -> float:
    if len(shape) < 2:
        return 0.0
    return float(np.hypot(*np.diff(shape, axis=0).T).sum())


@dataclass(eq=False)
class NetLane:
    id: str
    index: int
    lane_center_id: str
    source_lane_ids: List[str]
    shape: np.ndarray
    width: float
    speed_limit: float
    lane_type: LaneType = LaneType.surface_street
    # as recorded; 0 when the scenario leaves it unset
    posted_speed_limit: float = 0.0

    @property
    def length(self) -> float:
        return _length(self.shape)

    @property
    def start(self) -> np.ndarray:
        return self.shape[0]

    @property
    def end(self) -> np.ndarray:
        return self.shape[-1]

    @property
    def start_heading(self) -> float:
        d = self.shape[1] - self.shape[0]
        return math.atan2(d[1], d[0])

    @property
    def end_heading(self) -> float:
        d = self.shape[-1] - self.shape[-2]
        return math.atan2(d[1], d[0])


@dataclass(eq=False)
class Edge:
    id: str
    lanes: List[NetLane]
    from_node: Optional[str] = None
    to_node: Optional[str] = None
    priority: int = 1

    @property
    def num_lanes(self) -> int:
        return len(self.lanes)

    @property
    def speed(self) -> float:
        return max(lane.speed_limit for lane in self.lanes)

    @property
    def width(self) -> float:
        return max(lane.width for lane in self.lanes)

    @property
    def length(self) -> float:
        return max(lane.length for lane in self.lanes)

    @property
    def shape(self) -> np.ndarray:
        return self.lanes[len(self.lanes) // 2].shape

    @property
    def drivable(self) -> bool:
        return any(lane.lane_type != LaneType.bike_lane for lane in self.lanes)


@dataclass(eq=False)
class Connection:
    id: str
    from_edge: str
    from_lane_index: int
    to_edge: str
    to_lane_index: int
    via_node: str
    shape: np.ndarray
    movement: Movement = Movement.straight
    lane_center_ids: List[str] = field(default_factory=list)
    source_lane_ids: List[str] = field(default_factory=list)
    stop_controlled: bool = False
    signal_lane_ids: List[str] = field(default_factory=list)
    # foe connection id -> (station on self, station on foe) of the crossing point
    crossing_foes: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    merge_foes: List[str] = field(default_factory=list)

    @property
    def length(self) -> float:
        return _length(self.shape)

    @property
    def stop_point(self) -> np.ndarray:
        return self.shape[0]


@dataclass(eq=False)
class Node:
    id: str
    kind: NodeKind
    shape: np.ndarray
    x: float
    y: float
    edge_ids: List[str] = field(default_factory=list)
    lane_ids: List[str] = field(default_factory=list)
    incoming: List[str] = field(default_factory=list)
    outgoing: List[str] = field(default_factory=list)
    connection_ids: List[str] = field(default_factory=list)
    signalized: bool = False
    stop_controlled_connection_ids: List[str] = field(default_factory=list)


@dataclass(eq=False)
class Network:
    scenario_id: str
    edges: Dict[str, Edge] = field(default_factory=dict)
    nodes: Dict[str, Node] = field(default_factory=dict)
    connections: Dict[str, Connection] = field(default_factory=dict)
    lane_centers: Dict[str, LaneCenter] = field(default_factory=dict)
    signal_programs: Dict[str, object] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    def lane(self, edge_id: str, index: int) -> NetLane:
        return self.edges[edge_id].lanes[index]

    def iter_lanes(self) -> Iterator[Tuple[Edge, NetLane]]:
        for edge in self.edges.values():
            for lane in edge.lanes:
                yield edge, lane

    def outgoing(self, edge_id: str) -> List[Connection]:
        return [c for c in self.connections.values() if c.from_edge == edge_id]

    def node_connections(self, node_id: str) -> List[Connection]:
        return [self.connections[c] for c in self.nodes[node_id].connection_ids]

    def summary(self) -> dict:
        kinds = {k.value: 0 for k in NodeKind}
        for node in self.nodes.values():
            kinds[node.kind.value] += 1
        return {
            "edges": len(self.edges),
            "lanes": sum(e.num_lanes for e in self.edges.values()),
            "nodes": len(self.nodes),
            "node_kinds": kinds,
            "connections": len(self.connections),
            "signalized_nodes": sorted(n.id for n in self.nodes.values() if n.signalized),
        }
