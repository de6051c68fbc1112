"""Agent demand: behavior parameters, network placement and DFS routes."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import truncnorm

from core.control_overrides import OverrideClass, yaw_rate
from core.errors import RoadsimError
from core.network import Connection, Network
from core.rng import substream
from core.scenario_model import point_at_arclength, project_point, wrap_angle
from schemas.config import DemandConfig
from schemas.scenario import LaneType, ObjectType, Scenario, TrackState

logger = logging.getLogger(__name__)

# beyond this many standard deviations the truncated normal is sampled from its tail
TAIL_SIGMAS = 30.0
SPEED_FACTOR_FLOOR = 0.05


# -------------------------------------------------------------------
# Distributions
# -------------------------------------------------------------------
def _sample_tail(rng, edge: float, other: float, rate: float, size) -> np.ndarray:
    """Exponential tail anchored at `edge`, pointing toward `other`, truncated there."""
    span = abs(other - edge)
    u = rng.random(size)
    with np.errstate(over="ignore"):
        mass = -np.expm1(-rate * span) if math.isfinite(span) else 1.0
    step = -np.log1p(-u * mass) / rate
    return edge + step if other > edge else edge - step


@dataclass(frozen=True)
class TruncNormal:
    mean: float
    std: float
    low: float = -math.inf
    high: float = math.inf

    @property
    def bounds(self) -> Tuple[float, float]:
        return self.low, self.high

    def sample(self, rng: np.random.Generator, size=None):
        a = (self.low - self.mean) / self.std
        b = (self.high - self.mean) / self.std
        if a > TAIL_SIGMAS:
            out = _sample_tail(rng, self.low, self.high, (self.low - self.mean) / self.std**2, size)
        elif b < -TAIL_SIGMAS:
            out = _sample_tail(rng, self.high, self.low, (self.mean - self.high) / self.std**2, size)
        else:
            out = truncnorm.rvs(a, b, loc=self.mean, scale=self.std, size=size, random_state=rng)
        return np.clip(out, self.low, self.high)


@dataclass(frozen=True)
class TruncLognormal:
    """Lognormal with log-space mu and sigma, truncated to [low, high] in value space."""

    mu: float
    sigma: float
    low: float = 0.0
    high: float = math.inf

    @property
    def bounds(self) -> Tuple[float, float]:
        return self.low, self.high

    def sample(self, rng: np.random.Generator, size=None):
        log_low = math.log(self.low) if self.low > 0 else -math.inf
        log_high = math.log(self.high) if math.isfinite(self.high) else math.inf
        out = np.exp(TruncNormal(self.mu, self.sigma, log_low, log_high).sample(rng, size))
        return np.clip(out, self.low, self.high)


@dataclass(frozen=True)
class Normal:
    mean: float
    std: float

    @property
    def bounds(self) -> Tuple[float, float]:
        return -math.inf, math.inf

    def sample(self, rng: np.random.Generator, size=None):
        return rng.normal(self.mean, self.std, size)


@dataclass(frozen=True)
class Exponential:
    mean: float

    @property
    def bounds(self) -> Tuple[float, float]:
        return 0.0, math.inf

    def sample(self, rng: np.random.Generator, size=None):
        return rng.exponential(self.mean, size)


@dataclass(frozen=True)
class ShiftedLognormal:
    mu: float
    sigma: float
    shift: float = 0.0

    @property
    def bounds(self) -> Tuple[float, float]:
        return self.shift, math.inf

    def sample(self, rng: np.random.Generator, size=None):
        return self.shift + rng.lognormal(self.mu, self.sigma, size)


Distribution = Union[TruncNormal, TruncLognormal, Normal, Exponential, ShiftedLognormal]

# behavior parameter table; speed_factor is centered per agent
PARAMETER_TABLE: Dict[str, Distribution] = {
    "min_gap": TruncNormal(2.5, 0.5, 0.0, 5.0),
    "accel": TruncNormal(2.0, 0.2, 1.0, 4.5),
    "decel": TruncNormal(2.5, 0.2, 1.0, 4.5),
    "sigma": TruncNormal(0.5, 0.2, 0.0, 1.0),
    "tau": TruncLognormal(0.0, 0.1, 0.0, 5.0),
    "startup_delay": Exponential(3.0),
    "min_gap_lat": TruncNormal(0.6, 0.08, 0.4, 0.8),
    "lc_keep_right": TruncLognormal(100.0, 0.1, 0.0, 1.5),
    "lc_sublane": TruncNormal(0.4, 0.3, 0.0, 10.0),
    "jm_stop_line_gap": ShiftedLognormal(0.4, 0.5, 1.0),
    "jm_sigma_minor": TruncNormal(0.5, 0.2, 0.0, 1.0),
}
SPEED_FACTOR_STD = 0.1
SPEED_FACTOR_MIN_MEAN = 0.75

SUMO_ATTRIBUTES = {
    "speed_factor": "speedFactor",
    "min_gap": "minGap",
    "accel": "accel",
    "decel": "decel",
    "sigma": "sigma",
    "tau": "tau",
    "startup_delay": "startupDelay",
    "min_gap_lat": "minGapLat",
    "lc_keep_right": "lcKeepRight",
    "lc_sublane": "lcSublane",
    "jm_stop_line_gap": "jmStopLineGap",
    "jm_sigma_minor": "jmSigmaMinor",
    "jm_ignore_keep_clear_time": "jmIgnoreKeepClearTime",
}


# -------------------------------------------------------------------
# Agent types
# -------------------------------------------------------------------
@dataclass(frozen=True)
class BehaviorParams:
    speed_factor: float
    min_gap: float
    accel: float
    decel: float
    sigma: float
    tau: float
    startup_delay: float
    min_gap_lat: float
    lc_keep_right: float
    lc_sublane: float
    jm_stop_line_gap: float
    jm_sigma_minor: float
    jm_ignore_keep_clear_time: Optional[float] = None

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in SUMO_ATTRIBUTES}


@dataclass
class Route:
    edges: List[str]
    connections: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "connections": list(self.connections)}


@dataclass(frozen=True)
class Placement:
    edge_id: str
    lane_index: int
    offset: float
    lateral: float = 0.0
    # set when the agent starts inside a node, offset is then along the connection
    connection_id: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "edge_id": self.edge_id,
            "lane_index": self.lane_index,
            "offset": round(self.offset, 4),
            "lateral": round(self.lateral, 4),
            "connection_id": self.connection_id,
        }


@dataclass(frozen=True)
class OffNetworkPose:
    x: float
    y: float
    heading: float
    distance_to_lane: float

    def to_dict(self) -> dict:
        return {
            "x": round(self.x, 4),
            "y": round(self.y, 4),
            "heading": round(self.heading, 4),
            "distance_to_lane": round(self.distance_to_lane, 4) if math.isfinite(self.distance_to_lane) else None,
        }


@dataclass
class AgentSpec:
    track_id: str
    object_type: ObjectType
    x: float
    y: float
    heading: float
    initial_speed: float
    length: float
    width: float
    params: Optional[BehaviorParams] = None
    route: Optional[Route] = None
    placement: Union[Placement, OffNetworkPose, None] = None
    override_class: OverrideClass = OverrideClass.normal
    yaw_rate: float = 0.0
    max_history_speed: float = 0.0

    @property
    def replay(self) -> bool:
        return self.object_type != ObjectType.vehicle

    @property
    def on_network(self) -> bool:
        return isinstance(self.placement, Placement)

    def to_dict(self) -> dict:
        return {
            "track_id": self.track_id,
            "object_type": self.object_type.value,
            "x": round(self.x, 4),
            "y": round(self.y, 4),
            "heading": round(self.heading, 4),
            "initial_speed": round(self.initial_speed, 4),
            "length": round(self.length, 4),
            "width": round(self.width, 4),
            "params": self.params.to_dict() if self.params else None,
            "route": self.route.to_dict() if self.route else None,
            "placement": self.placement.to_dict() if self.placement else None,
            "override_class": self.override_class.value,
            "yaw_rate": round(self.yaw_rate, 6),
        }


# -------------------------------------------------------------------
# Parameters
# -------------------------------------------------------------------
def sample_params(
    rng: Union[np.random.Generator, int],
    history: Sequence[TrackState],
    speed_limit: Optional[float],
    config: Optional[DemandConfig] = None,
) -> BehaviorParams:
    cfg = config or DemandConfig()
    if not isinstance(rng, np.random.Generator):
        rng = substream(int(rng))
    valid = [s for s in history if s.valid]
    if not valid:
        raise ValueError("sample_params needs at least one valid history state")
    v_history = float(np.mean([s.speed for s in valid]))
    if speed_limit is None or speed_limit <= 0:
        if speed_limit is not None:
            logger.warning("speed limit 0: speedFactor mean defaults to 1.0")
        mean = 1.0
    else:
        mean = max(SPEED_FACTOR_MIN_MEAN, v_history / speed_limit)
    values = {"speed_factor": max(SPEED_FACTOR_FLOOR, float(Normal(mean, SPEED_FACTOR_STD).sample(rng)))}
    for name, dist in PARAMETER_TABLE.items():
        values[name] = float(dist.sample(rng))
    return BehaviorParams(**values, jm_ignore_keep_clear_time=cfg.jm_ignore_keep_clear_time)


# -------------------------------------------------------------------
# Placement
# -------------------------------------------------------------------
def _segment_heading(shape: np.ndarray, station: float) -> float:
    return point_at_arclength(shape, station)[1]


def place_agent(
    state: TrackState, network: Network, config: Optional[DemandConfig] = None
) -> Union[Placement, OffNetworkPose]:
    """Nearest heading-compatible lane (or connection) within the placement tolerance."""
    cfg = config or DemandConfig()
    max_dh = math.radians(cfg.max_heading_deg)
    pos = (state.position.x, state.position.y)
    best: Optional[Tuple[float, int, str, Placement]] = None
    nearest_any = math.inf
    for edge, lane in network.iter_lanes():
        if lane.lane_type == LaneType.bike_lane:
            continue
        s, lat, dist = project_point(lane.shape, pos)
        nearest_any = min(nearest_any, dist)
        if abs(wrap_angle(state.heading - _segment_heading(lane.shape, s))) >= max_dh:
            continue
        key = (dist, 0, lane.id)
        if best is None or key < best[:3]:
            best = (*key, Placement(edge.id, lane.index, s, lat))
    for conn in network.connections.values():
        if conn.length <= 0 or network.lane(conn.from_edge, conn.from_lane_index).lane_type == LaneType.bike_lane:
            continue
        s, lat, dist = project_point(conn.shape, pos)
        nearest_any = min(nearest_any, dist)
        if abs(wrap_angle(state.heading - _segment_heading(conn.shape, s))) >= max_dh:
            continue
        key = (dist, 1, conn.id)
        if best is None or key < best[:3]:
            best = (*key, Placement(conn.from_edge, conn.from_lane_index, s, lat, conn.id))
    if best is None or best[0] > cfg.placement_tolerance:
        return OffNetworkPose(state.position.x, state.position.y, state.heading, nearest_any)
    return best[3]


# -------------------------------------------------------------------
# Routing
# -------------------------------------------------------------------
def _successors(network: Network, edge_id: str) -> Dict[str, List[Connection]]:
    out: Dict[str, List[Connection]] = {}
    for conn in network.outgoing(edge_id):
        if network.edges[conn.to_edge].drivable:
            out.setdefault(conn.to_edge, []).append(conn)
    return out


def _nearest_connection(conns: List[Connection], lane_index: int) -> Connection:
    return min(conns, key=lambda c: (abs(c.from_lane_index - lane_index), c.from_lane_index, c.id))


def branch_weights(
    network: Network,
    successors: Dict[str, List[Connection]],
    lane_index: int,
    remaining: float,
    config: Optional[DemandConfig] = None,
) -> Dict[str, float]:
    """Main/side weight per successor edge; zero when the lane changes do not fit."""
    cfg = config or DemandConfig()
    if not successors:
        return {}
    top = max(network.edges[e].priority for e in successors)
    weights = {}
    for to_edge, conns in successors.items():
        w = cfg.w_main if network.edges[to_edge].priority == top else cfg.w_side
        needed = min(abs(c.from_lane_index - lane_index) for c in conns)
        if needed * cfg.lane_change_distance > remaining:
            w = 0.0
        weights[to_edge] = w
    return weights


def infer_route(
    placement: Placement,
    network: Network,
    rng: Union[np.random.Generator, int],
    config: Optional[DemandConfig] = None,
) -> Route:
    """Randomized depth-first route from the placement edge to the network boundary."""
    cfg = config or DemandConfig()
    if not isinstance(rng, np.random.Generator):
        rng = substream(int(rng))

    if placement.connection_id is not None:
        conn = network.connections[placement.connection_id]
        start = [placement.edge_id, conn.to_edge]
        start_conns = [conn.id]
        lane_index = conn.to_lane_index
        remaining = network.lane(conn.to_edge, conn.to_lane_index).length
    else:
        start = [placement.edge_id]
        start_conns = []
        lane_index = placement.lane_index
        remaining = network.lane(placement.edge_id, placement.lane_index).length - placement.offset

    # stack of (edges, connections, lane index on last edge, remaining length on last edge)
    stack = [(start, start_conns, lane_index, remaining)]
    deepest = (start, start_conns)
    while stack:
        edges, conns, idx, rem = stack.pop()
        if len(edges) > len(deepest[0]):
            deepest = (edges, conns)
        succ = _successors(network, edges[-1])
        if not succ or len(edges) >= cfg.max_route_edges:
            return Route(list(edges), list(conns))
        weights = branch_weights(network, succ, idx, rem, cfg)
        ranked = []
        for to_edge in sorted(succ, key=lambda e: int(e[1:])):
            w = weights[to_edge]
            if w <= 0 or to_edge in edges:
                continue
            # weighted order without replacement: first pick ~ w / sum(w)
            ranked.append((math.log(rng.random()) / w, to_edge))
        ranked.sort(reverse=True)
        # stack is LIFO: push least preferred first
        for _, to_edge in reversed(ranked):
            conn = _nearest_connection(succ[to_edge], idx)
            lane = network.lane(to_edge, conn.to_lane_index)
            stack.append((edges + [to_edge], conns + [conn.id], conn.to_lane_index, lane.length))
    logger.debug("no boundary route from %s; using deepest partial route", placement.edge_id)
    return Route(list(deepest[0]), list(deepest[1]))


# -------------------------------------------------------------------
# Composition
# -------------------------------------------------------------------
def build_demand(
    scenario: Scenario, network: Network, seed: int, config: Optional[DemandConfig] = None
) -> List[AgentSpec]:
    cfg = config or DemandConfig()
    current = scenario.current_index
    specs: List[AgentSpec] = []
    for track in sorted(scenario.tracks, key=lambda t: t.id):
        state = track.state_at(current)
        if state is None:
            logger.debug("track %s not valid at step %d; not simulated", track.id, current)
            continue
        history = track.valid_states(upto=scenario.history_length)
        spec = AgentSpec(
            track_id=track.id,
            object_type=track.object_type,
            x=state.position.x,
            y=state.position.y,
            heading=state.heading,
            initial_speed=state.speed,
            length=state.length,
            width=state.width,
            yaw_rate=yaw_rate(track, scenario.history_length, scenario.timestep_s),
            max_history_speed=max(s.speed for s in history),
        )
        if track.object_type == ObjectType.vehicle:
            try:
                placement = place_agent(state, network, cfg)
                limit = None
                if isinstance(placement, Placement):
                    limit = network.lane(placement.edge_id, placement.lane_index).posted_speed_limit
                spec.params = sample_params(substream(seed, track.id, "params"), history, limit, cfg)
                spec.placement = placement
                if isinstance(placement, Placement):
                    spec.route = infer_route(placement, network, substream(seed, track.id, "route"), cfg)
            except RoadsimError as e:
                raise RoadsimError(f"track {track.id}: {e}") from e
        specs.append(spec)
    n_off = sum(1 for s in specs if not s.replay and not s.on_network)
    logger.info(
        "%s: demand for %d agents (%d off-network, %d replayed)",
        scenario.id, len(specs), n_off, sum(1 for s in specs if s.replay),
    )
    return specs
