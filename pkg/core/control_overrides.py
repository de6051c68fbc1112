"""Agent override classes: red-light waiters, parked vehicles and off-network agents."""
from __future__ import annotations

import logging
import math
from enum import Enum
from typing import TYPE_CHECKING, Mapping, NamedTuple, Optional, Tuple

import numpy as np

from core.geometry import nearest_distance, segments_of
from core.network import Network
from core.scenario_model import in_box, wrap_angle
from schemas.config import OverrideThresholds
from schemas.scenario import TIMESTEP_S, AgentTrack, SignalState

if TYPE_CHECKING:
    from core.demand_builder import AgentSpec
    from core.signal_estimator import SignalProgram

logger = logging.getLogger(__name__)

__all__ = [
    "OverrideClass",
    "OverrideThresholds",
    "Pose",
    "MapDistances",
    "yaw_rate",
    "classify",
    "release",
    "apply",
]


class OverrideClass(str, Enum):
    normal = "normal"
    red_signal_hold = "red_signal_hold"
    parked_hold = "parked_hold"
    offnet_hold = "offnet_hold"
    offnet_ballistic = "offnet_ballistic"


HOLD_CLASSES = frozenset(
    {OverrideClass.red_signal_hold, OverrideClass.parked_hold, OverrideClass.offnet_hold}
)


class Pose(NamedTuple):
    x: float
    y: float
    heading: float
    speed: float


def yaw_rate(track: AgentTrack, history_length: int, dt: float = TIMESTEP_S) -> float:
    states = track.valid_states(upto=history_length)
    if len(states) < 2:
        return 0.0
    a, b = states[-2], states[-1]
    return wrap_angle(b.heading - a.heading) / ((b.time_index - a.time_index) * dt)


class MapDistances:
    """Nearest road-edge and lane-center distances for classification."""

    def __init__(self, network: Network, road_edges):
        self.edge_a, self.edge_b = segments_of(road_edges)
        shapes = [lane.shape for _, lane in network.iter_lanes()]
        shapes += [c.shape for c in network.connections.values() if len(c.shape) >= 2]
        self.lane_a, self.lane_b = segments_of(shapes)

    def road_edge(self, x: float, y: float) -> float:
        return float(nearest_distance(np.array([x, y]), self.edge_a, self.edge_b)[0])

    def lane_center(self, x: float, y: float) -> float:
        return float(nearest_distance(np.array([x, y]), self.lane_a, self.lane_b)[0])


def _stop_line_ahead(spec: "AgentSpec", network: Network) -> Optional[Tuple[str, float]]:
    """(connection id, signed distance to its stop point; negative once past it)."""
    placement = spec.placement
    if placement.connection_id is not None:
        return placement.connection_id, -placement.offset
    if spec.route is None or not spec.route.connections:
        return None
    lane = network.lane(placement.edge_id, placement.lane_index)
    return spec.route.connections[0], lane.length - placement.offset


def classify(
    spec: "AgentSpec",
    network: Network,
    programs: Mapping[str, "SignalProgram"],
    distances: MapDistances,
    t: int,
    thresholds: Optional[OverrideThresholds] = None,
) -> OverrideClass:
    """Override class from placement and history; total over all agent configurations."""
    th = thresholds or OverrideThresholds()
    if spec.replay:
        return OverrideClass.normal
    if not spec.on_network:
        if distances.lane_center(spec.x, spec.y) > th.d_lanecenter_2:
            return OverrideClass.offnet_hold
        return OverrideClass.offnet_ballistic

    stationary = spec.max_history_speed < th.stationary_speed
    if not stationary:
        return OverrideClass.normal
    ahead = _stop_line_ahead(spec, network)
    if ahead is not None:
        cid, dist = ahead
        conn = network.connections[cid]
        program = programs.get(conn.via_node)
        if (
            program is not None
            and conn.from_lane_index != 0
            and abs(dist) <= th.d_intersection
            and program.state_at(cid, t) == SignalState.red
        ):
            return OverrideClass.red_signal_hold
    if (
        distances.road_edge(spec.x, spec.y) < th.d_roadedge
        or distances.lane_center(spec.x, spec.y) > th.d_lanecenter_1
    ):
        return OverrideClass.parked_hold
    return OverrideClass.normal


def release(override_class: OverrideClass, live_state: Optional[SignalState]) -> OverrideClass:
    if override_class == OverrideClass.red_signal_hold and live_state == SignalState.green:
        return OverrideClass.normal
    return override_class


def apply(
    override_class: OverrideClass,
    proposal: Pose,
    last: Pose,
    dt: float = TIMESTEP_S,
    yaw: float = 0.0,
    bbox: Optional[Tuple[float, float, float, float]] = None,
) -> Pose:
    """Final pose for the step: hold, ballistic integration, or the engine proposal."""
    if override_class in HOLD_CLASSES:
        return Pose(last.x, last.y, last.heading, 0.0)
    if override_class == OverrideClass.offnet_ballistic:
        if last.speed == 0.0 and yaw == 0.0:
            return last
        x = last.x + last.speed * math.cos(last.heading) * dt
        y = last.y + last.speed * math.sin(last.heading) * dt
        if bbox is not None and not in_box(bbox, x, y):
            # frozen at the map boundary
            return Pose(last.x, last.y, last.heading, 0.0)
        return Pose(x, y, last.heading + yaw * dt, last.speed)
    return proposal
