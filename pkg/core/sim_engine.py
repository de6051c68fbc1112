"""Closed-loop microscopic engine.

Fixed 0.1 s steps. Each step follows Krauß' multi-lane order (lane change, adjust,
move): every engine-controlled vehicle proposes a new speed and position from the
previous step's snapshot, then all proposals are committed together. Junction entry
claims and lane-change acceptance are resolved in ascending agent id within a step.
"""
from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from core import control_overrides
from core.control_overrides import HOLD_CLASSES, MapDistances, OverrideClass, Pose
from core.demand_builder import AgentSpec, BehaviorParams, Placement
from core.network import Connection, Movement, Network
from core.rng import substream
from core.scenario_model import bounding_box, cumulative_lengths, project_point, wrap_angle
from core.signal_estimator import SignalProgram
from schemas.config import EngineConfig, RunConfig
from schemas.scenario import TIMESTEP_S, AgentTrack, Scenario, SignalState

logger = logging.getLogger(__name__)

DT = TIMESTEP_S
STOP_SPEED = 0.1
# a vehicle stopped within jm_stop_line_gap + STOP_ZONE of its line has made its stop
STOP_ZONE = 2.5
# steps stuck at a lane end before the route is abandoned for any exit of the lane
REROUTE_STEPS = 50
MAX_LEGS_AHEAD = 6

LegKey = Tuple  # ("L", edge_id, lane_index) | ("C", connection_id)


# -------------------------------------------------------------------
# Car following
# -------------------------------------------------------------------
def safe_speed(v_follower: float, v_leader: float, gap: float, params: BehaviorParams) -> float:
    """Krauß safe speed.

    v_safe = v_l + (g - v_l·τ) / ((v_f + v_l) / (2·b) + τ)

    A follower driving v_safe for one step still stops behind a leader that brakes at b
    from now on: the braking distance v²/(2b) plus the reaction distance v·τ never
    exceeds the current gap plus the leader's own braking distance.
    """
    tau = params.tau
    denom = (v_follower + v_leader) / (2.0 * params.decel) + tau
    if denom < 1e-9:
        return math.inf if gap > 0 else 0.0
    return max(0.0, v_leader + (gap - v_leader * tau) / denom)


def desired_speed(params: BehaviorParams, speed_limit: float) -> float:
    return params.speed_factor * speed_limit


def _smoothstep(x: float) -> float:
    x = min(max(x, 0.0), 1.0)
    return x * x * (3.0 - 2.0 * x)


# -------------------------------------------------------------------
# Geometry along legs
# -------------------------------------------------------------------
class _Path:
    __slots__ = ("pts", "cum", "length", "speed_limit", "headings")

    def __init__(self, shape: np.ndarray, speed_limit: float):
        self.pts = [(float(x), float(y)) for x, y in shape]
        self.cum = cumulative_lengths(shape).tolist() if len(shape) >= 2 else [0.0]
        self.length = self.cum[-1]
        self.speed_limit = speed_limit
        self.headings = [
            math.atan2(b[1] - a[1], b[0] - a[0]) for a, b in zip(self.pts, self.pts[1:])
        ] or [0.0]

    def pose_at(self, s: float, lateral: float = 0.0) -> Tuple[float, float, float]:
        if len(self.pts) < 2:
            x, y = self.pts[0]
            return x, y, self.headings[0]
        s = min(max(s, 0.0), self.length)
        i = min(max(bisect.bisect_right(self.cum, s) - 1, 0), len(self.pts) - 2)
        seg = self.cum[i + 1] - self.cum[i]
        f = (s - self.cum[i]) / seg if seg > 0 else 0.0
        (ax, ay), (bx, by) = self.pts[i], self.pts[i + 1]
        h = self.headings[i]
        x = ax + f * (bx - ax) - lateral * math.sin(h)
        y = ay + f * (by - ay) + lateral * math.cos(h)
        return x, y, h

    def project(self, x: float, y: float) -> Tuple[float, float]:
        if len(self.pts) < 2:
            return 0.0, 0.0
        s, lat, _ = project_point(np.asarray(self.pts), (x, y))
        return s, lat


def _turn_cap(conn: Connection, lateral_accel: float) -> float:
    if conn.length <= 0 or len(conn.shape) < 2:
        return math.inf
    d0 = conn.shape[1] - conn.shape[0]
    d1 = conn.shape[-1] - conn.shape[-2]
    dh = abs(wrap_angle(math.atan2(d1[1], d1[0]) - math.atan2(d0[1], d0[0])))
    if dh < 1e-3:
        return math.inf
    return math.sqrt(lateral_accel * conn.length / dh)


# -------------------------------------------------------------------
# World state
# -------------------------------------------------------------------
@dataclass(eq=False)
class AgentState:
    id: str
    spec: AgentSpec
    x: float
    y: float
    heading: float
    speed: float
    key: Optional[LegKey] = None
    s: float = 0.0
    route_pos: int = 0
    override_class: OverrideClass = OverrideClass.normal
    valid: bool = True
    frozen: bool = False
    # lateral offset decaying to zero (lane changes and initial placement)
    lat0: float = 0.0
    lat_elapsed: float = 0.0
    lc_from: Optional[LegKey] = None
    stop_done: Optional[str] = None
    arrival: Optional[int] = None
    delay_left: Optional[float] = None
    stuck_steps: int = 0

    @property
    def params(self) -> BehaviorParams:
        return self.spec.params

    @property
    def length(self) -> float:
        return self.spec.length

    @property
    def width(self) -> float:
        return self.spec.width

    @property
    def engine_controlled(self) -> bool:
        return self.valid and not self.spec.replay and self.key is not None


@dataclass
class _Snapshot:
    occupancy: Dict[LegKey, List[Tuple[float, str]]]
    agents: Dict[str, Tuple[float, float, float, float]]  # x, y, heading, speed
    obstacles: List[Tuple[str, float, float, float, float, float, float]]
    next_conn: Dict[str, Optional[str]]
    front_gap: Dict[str, float]  # distance from front bumper to the next stop line
    stop_done: Dict[str, Tuple[str, int]]


@dataclass
class Rollout:
    scenario_id: str
    seed: int
    start_step: int
    horizon: int
    agent_ids: List[str]
    object_types: List[str]
    dims: np.ndarray  # (n_agents, 2) length, width
    # (n_agents, horizon, 5): x, y, heading, speed, valid
    states: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.start_step, self.start_step + self.horizon)


class Simulation:
    """One rollout of the engine over a scenario."""

    def __init__(
        self,
        scenario: Scenario,
        network: Network,
        demand: Sequence[AgentSpec],
        programs: Mapping[str, SignalProgram],
        config: Optional[RunConfig] = None,
        seed: int = 0,
    ):
        self.config = config or RunConfig()
        self.engine: EngineConfig = self.config.engine
        self.scenario = scenario
        self.network = network
        self.programs = dict(programs)
        self.seed = seed
        self.rng = substream(seed, "engine")
        self.t = scenario.current_index
        self.bbox = bounding_box(scenario, self.config.overrides.bbox_margin)
        self.tracks: Dict[str, AgentTrack] = scenario.track_map()
        self.frozen_ids: List[str] = []

        self.paths: Dict[LegKey, _Path] = {}
        self.conns_from: Dict[Tuple[str, int], List[Connection]] = {}
        for edge, lane in network.iter_lanes():
            self.paths[("L", edge.id, lane.index)] = _Path(lane.shape, lane.speed_limit)
        for conn in sorted(network.connections.values(), key=lambda c: int(c.id[1:])):
            limit = network.lane(conn.from_edge, conn.from_lane_index).speed_limit
            self.paths[("C", conn.id)] = _Path(conn.shape, limit)
            self.conns_from.setdefault((conn.from_edge, conn.from_lane_index), []).append(conn)
        self.caps = {cid: _turn_cap(c, self.engine.lateral_accel) for cid, c in network.connections.items()}
        # foe id -> station of the crossing point along the foe
        self.foes: Dict[str, List[Tuple[str, float]]] = {
            cid: [(f, s[1]) for f, s in sorted(c.crossing_foes.items())]
            for cid, c in network.connections.items()
        }
        self.mergers: Dict[str, List[str]] = {cid: sorted(c.merge_foes) for cid, c in network.connections.items()}

        distances = MapDistances(network, [e.polyline for e in scenario.road_edges])
        self.agents: List[AgentState] = []
        for spec in sorted(demand, key=lambda s: s.track_id):
            self.agents.append(self._init_agent(spec, distances))
        self.by_id = {a.id: a for a in self.agents}

    # ---------------------------------------------------------------
    # Initialization
    # ---------------------------------------------------------------
    def _init_agent(self, spec: AgentSpec, distances: MapDistances) -> AgentState:
        a = AgentState(spec.track_id, spec, spec.x, spec.y, spec.heading, spec.initial_speed)
        if spec.replay:
            return a
        if self.engine.overrides_enabled:
            spec.override_class = control_overrides.classify(
                spec, self.network, self.programs, distances, self.t, self.config.overrides
            )
        else:
            spec.override_class = OverrideClass.normal if spec.on_network else OverrideClass.offnet_hold
        a.override_class = spec.override_class
        if isinstance(spec.placement, Placement) and spec.route is not None:
            p = spec.placement
            if p.connection_id is not None:
                a.key = ("C", p.connection_id)
            else:
                a.key = ("L", p.edge_id, p.lane_index)
            a.s = p.offset
            a.lat0 = p.lateral
            a.route_pos = 0
        return a

    # ---------------------------------------------------------------
    # Route helpers
    # ---------------------------------------------------------------
    def _planned_connection(self, a: AgentState, key: LegKey, route_pos: int) -> Optional[Connection]:
        edges = a.spec.route.edges
        if key[0] != "L" or route_pos + 1 >= len(edges):
            return None
        target = edges[route_pos + 1]
        cands = [c for c in self.conns_from.get((key[1], key[2]), []) if c.to_edge == target]
        if not cands:
            return None
        planned = a.spec.route.connections[route_pos] if route_pos < len(a.spec.route.connections) else None
        for c in cands:
            if c.id == planned:
                return c
        return cands[0]

    def _legs_ahead(self, a: AgentState) -> List[Tuple[LegKey, float]]:
        legs = [(a.key, -a.s)]
        dist = self.paths[a.key].length - a.s
        key, pos = a.key, a.route_pos
        while dist < self.engine.lookahead and len(legs) < MAX_LEGS_AHEAD:
            if key[0] == "L":
                conn = self._planned_connection(a, key, pos)
                if conn is None:
                    break
                key = ("C", conn.id)
            else:
                conn = self.network.connections[key[1]]
                key = ("L", conn.to_edge, conn.to_lane_index)
                pos += 1
            legs.append((key, dist))
            dist += self.paths[key].length
        return legs

    def _reroute(self, a: AgentState) -> Optional[Connection]:
        """Abandon the rest of the route for any connection out of the current lane."""
        cands = self.conns_from.get((a.key[1], a.key[2]), [])
        if not cands:
            return None
        conn = max(cands, key=lambda c: (self.network.edges[c.to_edge].priority, -int(c.id[1:])))
        route = a.spec.route
        route.edges = route.edges[: a.route_pos + 1] + [conn.to_edge]
        route.connections = route.connections[: a.route_pos] + [conn.id]
        logger.debug("agent %s rerouted via %s", a.id, conn.id)
        return conn

    # ---------------------------------------------------------------
    # Snapshot
    # ---------------------------------------------------------------
    def _snapshot(self) -> _Snapshot:
        occ: Dict[LegKey, List[Tuple[float, str]]] = {}
        agents = {}
        obstacles = []
        next_conn: Dict[str, Optional[str]] = {}
        front_gap: Dict[str, float] = {}
        stop_done = {}
        for a in self.agents:
            if not a.valid:
                continue
            agents[a.id] = (a.x, a.y, a.heading, a.speed)
            if a.key is None:
                obstacles.append((a.id, a.x, a.y, a.heading, a.speed, a.length, a.width))
                continue
            occ.setdefault(a.key, []).append((a.s, a.id))
            if a.lc_from is not None:
                s_src, _ = self.paths[a.lc_from].project(a.x, a.y)
                occ.setdefault(a.lc_from, []).append((s_src, a.id))
            if a.key[0] == "L":
                conn = self._planned_connection(a, a.key, a.route_pos)
                next_conn[a.id] = conn.id if conn else None
                front_gap[a.id] = self.paths[a.key].length - a.s - 0.5 * a.length
            else:
                next_conn[a.id] = None
            if a.stop_done is not None and a.arrival is not None:
                stop_done[a.id] = (a.stop_done, a.arrival)
        for entries in occ.values():
            entries.sort()
        return _Snapshot(occ, agents, obstacles, next_conn, front_gap, stop_done)

    # ---------------------------------------------------------------
    # Leaders
    # ---------------------------------------------------------------
    def _leader(self, a: AgentState, snap: _Snapshot, legs) -> Optional[Tuple[float, float]]:
        """(bumper gap, leader speed) of the nearest vehicle ahead along the route."""
        best: Optional[Tuple[float, float]] = None
        for k, (key, start) in enumerate(legs):
            entries = snap.occupancy.get(key)
            if not entries:
                continue
            i = bisect.bisect_left(entries, (a.s, "")) if k == 0 else 0
            for s, bid in entries[i:]:
                if bid == a.id or (k == 0 and (s, bid) <= (a.s, a.id)):
                    continue
                b = self.by_id[bid]
                gap = start + s - 0.5 * (a.length + b.length)
                if best is None or gap < best[0]:
                    best = (gap, snap.agents[bid][3])
                break
            if best is not None:
                break

        # vehicles on merging connections that are closer to the shared exit
        for key, start in legs:
            if key[0] != "C":
                continue
            conn_len = self.paths[key].length
            mine = start + conn_len
            for fid in self.mergers.get(key[1], []):
                for s, bid in snap.occupancy.get(("C", fid), []):
                    if bid == a.id:
                        continue
                    theirs = self.paths[("C", fid)].length - s
                    if (theirs, bid) < (mine, a.id):
                        b = self.by_id[bid]
                        gap = mine - theirs - 0.5 * (a.length + b.length)
                        if best is None or gap < best[0]:
                            best = (gap, snap.agents[bid][3])
        return best

    def _obstacle_ahead(self, a: AgentState, snap: _Snapshot) -> Optional[Tuple[float, float]]:
        best = None
        ch, sh = math.cos(a.heading), math.sin(a.heading)
        for oid, ox, oy, oh, ov, ol, ow in snap.obstacles:
            if oid == a.id:
                continue
            dx, dy = ox - a.x, oy - a.y
            lon = dx * ch + dy * sh
            lat = -dx * sh + dy * ch
            if lon <= 0 or lon > self.engine.lookahead:
                continue
            if abs(lat) >= 0.5 * (a.width + ow) + a.params.min_gap_lat:
                continue
            gap = lon - 0.5 * (a.length + ol)
            v_along = max(0.0, ov * math.cos(oh - a.heading))
            if best is None or gap < best[0]:
                best = (gap, v_along)
        return best

    # ---------------------------------------------------------------
    # Junction logic
    # ---------------------------------------------------------------
    def _signal(self, conn: Connection, t: int) -> Optional[SignalState]:
        program = self.programs.get(conn.via_node)
        if program is None or conn.id not in program.connection_ids:
            return None
        return program.state_at(conn.id, t)

    def _occupied(self, foe_id: str, s_cross: float, snap: _Snapshot, claims: Dict[str, str]) -> bool:
        if foe_id in claims:
            return True
        for s, bid in snap.occupancy.get(("C", foe_id), []):
            if s - 0.5 * self.by_id[bid].length < s_cross:
                return True
        for bid, cid in snap.next_conn.items():
            if cid == foe_id and snap.front_gap.get(bid, 1.0) < 0.0:
                return True
        return False

    def _arrival_time(self, foe_id: str, s_cross: float, snap: _Snapshot, exclude: str) -> float:
        """Earliest time any vehicle reaches the crossing point on foe_id."""
        best = math.inf
        for s, bid in snap.occupancy.get(("C", foe_id), []):
            if bid != exclude and s < s_cross:
                best = min(best, (s_cross - s) / max(snap.agents[bid][3], STOP_SPEED))
        for bid, cid in snap.next_conn.items():
            if cid == foe_id and bid != exclude:
                b = self.by_id[bid]
                d = self.paths[b.key].length - b.s + s_cross
                if d <= self.engine.lookahead:
                    best = min(best, d / max(snap.agents[bid][3], STOP_SPEED))
        return best

    def _conflicts(self, conn: Connection) -> List[Tuple[str, float]]:
        out = list(self.foes.get(conn.id, []))
        out += [(fid, self.paths[("C", fid)].length) for fid in self.mergers.get(conn.id, [])]
        return out

    def _major(self, conn: Connection, foe: Connection) -> bool:
        edges = self.network.edges
        return edges[foe.from_edge].priority > edges[conn.from_edge].priority

    def _stop_sign(self, a: AgentState, conn: Connection, d_front: float, snap: _Snapshot, t: int, green_foes_only: bool) -> bool:
        """True while the vehicle has to wait at a stop-controlled line."""
        if a.stop_done != conn.id:
            if a.speed < STOP_SPEED and d_front <= a.params.jm_stop_line_gap + STOP_ZONE:
                a.stop_done, a.arrival = conn.id, t
            return True
        mine = (a.arrival, a.id)
        for fid, s_cross in self._conflicts(conn):
            foe = self.network.connections[fid]
            for bid, (cid, arrival) in snap.stop_done.items():
                if cid == fid and (arrival, bid) < mine:
                    return True
            if green_foes_only:
                relevant = self._signal(foe, t) == SignalState.green
            else:
                relevant = not foe.stop_controlled
            if relevant and self._arrival_time(fid, s_cross, snap, a.id) < self.engine.time_gap_acceptance:
                return True
        return False

    def _must_stop(self, a: AgentState, conn: Connection, d_front: float, snap: _Snapshot, claims, t: int, u: float) -> bool:
        if d_front < 0.0:
            return False
        for fid, s_cross in self.foes.get(conn.id, []):
            if self._occupied(fid, s_cross, snap, claims):
                return True
        state = self._signal(conn, t)
        right_on_red = False
        if state == SignalState.red:
            if conn.from_lane_index == 0 and conn.movement == Movement.right:
                right_on_red = True
            else:
                return True
        elif state == SignalState.yellow:
            needed = a.speed * a.speed / (2.0 * max(d_front, 1e-6))
            return needed <= a.params.decel
        elif state == SignalState.green:
            if conn.movement in (Movement.left, Movement.uturn):
                for fid, s_cross in self.foes.get(conn.id, []):
                    foe = self.network.connections[fid]
                    if foe.movement in (Movement.straight, Movement.right) and self._signal(foe, t) == SignalState.green:
                        if self._arrival_time(fid, s_cross, snap, a.id) < self.engine.time_gap_acceptance:
                            return True
            return False
        if right_on_red or conn.stop_controlled:
            return self._stop_sign(a, conn, d_front, snap, t, green_foes_only=right_on_red)
        threshold = self.engine.time_gap_acceptance * (1.0 - 0.5 * a.params.jm_sigma_minor * u)
        for fid, s_cross in self._conflicts(conn):
            foe = self.network.connections[fid]
            if self._major(conn, foe) and self._arrival_time(fid, s_cross, snap, a.id) < threshold:
                return True
        return False

    # ---------------------------------------------------------------
    # Lane changes
    # ---------------------------------------------------------------
    def _lane_change_target(self, a: AgentState) -> Optional[LegKey]:
        if a.key[0] != "L" or a.lc_from is not None or not self.engine.lane_changes_enabled:
            return None
        edges = a.spec.route.edges
        if a.route_pos + 1 >= len(edges):
            return None
        target_edge = edges[a.route_pos + 1]
        _, edge_id, idx = a.key
        wanted = sorted(
            {c.from_lane_index for c in self.network.outgoing(edge_id) if c.to_edge == target_edge}
        )
        if not wanted or idx in wanted:
            return None
        goal = min(wanted, key=lambda i: (abs(i - idx), i))
        step = 1 if goal > idx else -1
        return ("L", edge_id, idx + step)

    def _gap_ok(self, a: AgentState, key: LegKey, s_t: float, snap: _Snapshot, accepted) -> bool:
        p = a.params
        for s, bid in snap.occupancy.get(key, []):
            if bid == a.id:
                continue
            b = self.by_id[bid]
            vb = snap.agents[bid][3]
            raw = abs(s - s_t) - 0.5 * (a.length + b.length)
            if s >= s_t:
                if raw <= p.min_gap or safe_speed(a.speed, vb, raw - p.min_gap, p) < a.speed - p.decel * DT:
                    return False
            elif b.spec.params is not None:
                bp = b.params
                if raw <= bp.min_gap or safe_speed(vb, a.speed, raw - bp.min_gap, bp) < vb - bp.decel * DT:
                    return False
            elif raw <= p.min_gap:
                return False
        path = self.paths[key]
        tx, ty, th = path.pose_at(s_t)
        for oid, ox, oy, oh, ov, ol, ow in snap.obstacles:
            dx, dy = ox - tx, oy - ty
            lon = dx * math.cos(th) + dy * math.sin(th)
            lat = -dx * math.sin(th) + dy * math.cos(th)
            if abs(lon) < 0.5 * (a.length + ol) + p.min_gap and abs(lat) < 0.5 * (a.width + ow) + p.min_gap_lat:
                return False
        for other_key, other_s, other in accepted:
            if other_key == key and abs(other_s - s_t) < 0.5 * (a.length + other.length) + max(p.min_gap, other.params.min_gap):
                return False
        return True

    # ---------------------------------------------------------------
    # Step
    # ---------------------------------------------------------------
    def _drive(self, a: AgentState, snap: _Snapshot, claims, accepted, u_dawdle: float, u_minor: float, t: int):
        p = a.params
        path = self.paths[a.key]
        v = a.speed
        v_new = min(v + p.accel * DT, desired_speed(p, path.speed_limit))
        if a.key[0] == "C":
            v_new = min(v_new, self.caps[a.key[1]])
        hard = math.inf

        legs = self._legs_ahead(a)
        leader = self._leader(a, snap, legs)
        if leader is not None:
            gap, vl = leader
            v_new = min(v_new, safe_speed(v, vl, gap - p.min_gap, p))
            hard = min(hard, max(gap, 0.0) / DT)
        obstacle = self._obstacle_ahead(a, snap)
        if obstacle is not None:
            gap, vl = obstacle
            v_new = min(v_new, safe_speed(v, vl, gap - p.min_gap, p))
            hard = min(hard, max(gap, 0.0) / DT)

        entering: Optional[str] = None
        reach = v * v / (2.0 * p.decel) + v * (p.tau + DT)
        for k, (key, start) in enumerate(legs):
            if key[0] != "L":
                continue
            d_front = start + self.paths[key].length - 0.5 * a.length
            if k == 0:
                conn = self._planned_connection(a, key, a.route_pos)
            elif k + 1 < len(legs):
                conn = self.network.connections[legs[k + 1][0][1]]
            else:
                break
            if conn is None:
                if a.route_pos + 1 < len(a.spec.route.edges):
                    # lane does not lead on: wait at its end for a lane change
                    a.stuck_steps = a.stuck_steps + 1 if v < STOP_SPEED else 0
                    if a.stuck_steps >= REROUTE_STEPS and self._reroute(a) is not None:
                        a.stuck_steps = 0
                    v_new = min(v_new, safe_speed(v, 0.0, d_front, p))
                    hard = min(hard, max(d_front, 0.0) / DT)
                break
            if k > 0 and d_front - p.jm_stop_line_gap > reach:
                break
            cap = self.caps[conn.id]
            if cap < math.inf:
                v_new = min(v_new, safe_speed(v, cap, max(d_front, 0.0), p))
            if self._must_stop(a, conn, d_front, snap, claims, t, u_minor):
                g = d_front - p.jm_stop_line_gap
                v_new = min(v_new, safe_speed(v, 0.0, g, p))
                hard = min(hard, max(g, 0.0) / DT, max(d_front, 0.0) / DT)
                break
            if k == 0:
                entering = conn.id

        v_new = max(0.0, v_new - p.sigma * p.accel * DT * u_dawdle)
        v_new = min(v_new, hard)

        if v < STOP_SPEED and v_new >= STOP_SPEED:
            if a.delay_left is None:
                a.delay_left = p.startup_delay
            if a.delay_left > 0.0:
                a.delay_left -= DT
                v_new = 0.0
        else:
            a.delay_left = None

        if entering is not None and a.key[0] == "L":
            d_front = path.length - a.s - 0.5 * a.length
            if d_front >= 0.0 and d_front - v_new * DT < 0.0:
                claims.setdefault(entering, a.id)

        change = None
        target = self._lane_change_target(a)
        if target is not None and target in self.paths:
            s_t, lat = self.paths[target].project(a.x, a.y)
            if s_t < self.paths[target].length - 0.5 * a.length and self._gap_ok(a, target, s_t, snap, accepted):
                accepted.append((target, s_t, a))
                change = (target, s_t, lat)
        return v_new, change

    def _advance(self, a: AgentState, v_new: float, change) -> None:
        if change is not None:
            target, s_t, lat = change
            a.lc_from, a.key, a.s = a.key, target, s_t
            a.lat0, a.lat_elapsed = lat, 0.0
        a.s += v_new * DT
        a.speed = v_new
        while a.s > self.paths[a.key].length:
            over = a.s - self.paths[a.key].length
            if a.key[0] == "L":
                conn = self._planned_connection(a, a.key, a.route_pos)
                if conn is None:
                    if a.route_pos + 1 >= len(a.spec.route.edges):
                        a.valid = False
                        a.s = self.paths[a.key].length
                        return
                    conn = self._reroute(a)
                    if conn is None:
                        a.valid = False
                        a.s = self.paths[a.key].length
                        return
                a.key = ("C", conn.id)
            else:
                conn = self.network.connections[a.key[1]]
                a.key = ("L", conn.to_edge, conn.to_lane_index)
                a.route_pos += 1
                a.stop_done, a.arrival = None, None
            a.lc_from, a.lat0 = None, 0.0
            a.s = over
        if a.lat0 != 0.0 or a.lc_from is not None:
            a.lat_elapsed += DT
            if a.lat_elapsed >= self.engine.lane_change_duration:
                a.lat0, a.lc_from = 0.0, None
        lateral = a.lat0 * (1.0 - _smoothstep(a.lat_elapsed / self.engine.lane_change_duration))
        a.x, a.y, a.heading = self.paths[a.key].pose_at(a.s, lateral)

    def _replay(self, a: AgentState, t: int) -> None:
        """Pedestrians and cyclists continue at their last history velocity."""
        st = self.tracks[a.id].state_at(self.scenario.current_index)
        if st is None:
            a.valid = False
            return
        elapsed = (t - self.scenario.current_index) * DT
        a.x = st.position.x + st.vx * elapsed
        a.y = st.position.y + st.vy * elapsed
        a.speed = st.speed

    def step(self) -> None:
        t = self.t + 1
        snap = self._snapshot()
        claims: Dict[str, str] = {}
        accepted: list = []
        proposals = {}
        for a in self.agents:
            u_dawdle, u_minor = self.rng.random(2)
            if a.spec.replay:
                continue
            if not a.valid:
                continue
            last = Pose(a.x, a.y, a.heading, a.speed)
            if a.override_class == OverrideClass.red_signal_hold and a.key is not None:
                conn = self._planned_connection(a, a.key, a.route_pos) if a.key[0] == "L" else self.network.connections[a.key[1]]
                live = self._signal(conn, t) if conn is not None else None
                a.override_class = control_overrides.release(a.override_class, live)
            if a.frozen or a.override_class in HOLD_CLASSES or a.key is None:
                klass = a.override_class
                if a.frozen or klass == OverrideClass.normal:
                    klass = OverrideClass.offnet_hold
                proposals[a.id] = ("pose", control_overrides.apply(klass, last, last, DT, a.spec.yaw_rate, self.bbox))
                continue
            proposals[a.id] = ("drive", self._drive(a, snap, claims, accepted, float(u_dawdle), float(u_minor), t))

        for a in self.agents:
            if a.spec.replay:
                self._replay(a, t)
                continue
            kind_value = proposals.get(a.id)
            if kind_value is None:
                continue
            kind, value = kind_value
            if kind == "pose":
                if a.override_class == OverrideClass.offnet_ballistic and not a.frozen and value.speed == 0.0 and a.speed > 0.0:
                    a.frozen = True
                    self.frozen_ids.append(a.id)
                a.x, a.y, a.heading, a.speed = value
            else:
                v_new, change = value
                self._advance(a, v_new, change)
        self.t = t

    def run(self, horizon: int) -> Rollout:
        start = self.scenario.history_length
        n = len(self.agents)
        states = np.zeros((n, horizon, 5), dtype=float)
        for k in range(horizon):
            self.step()
            for i, a in enumerate(self.agents):
                states[i, k] = (a.x, a.y, a.heading, a.speed, 1.0 if a.valid else 0.0)
        programs = {nid: p.defaulted for nid, p in sorted(self.programs.items()) if p.defaulted}
        metadata = {
            "start_step": start,
            "history_replayed": True,
            "note": "steps before start_step are the recorded history; simulation starts from the last history state",
            "frozen_ballistic_agents": sorted(self.frozen_ids),
            "override_classes": {a.id: a.spec.override_class.value for a in self.agents if not a.spec.replay},
            "signal_defaults": programs,
        }
        return Rollout(
            scenario_id=self.scenario.id,
            seed=self.seed,
            start_step=start,
            horizon=horizon,
            agent_ids=[a.id for a in self.agents],
            object_types=[a.spec.object_type.value for a in self.agents],
            dims=np.array([[a.length, a.width] for a in self.agents], dtype=float).reshape(n, 2),
            states=states,
            metadata=metadata,
        )


def step(world: Simulation) -> Simulation:
    world.step()
    return world


DemandSource = Union[Sequence[AgentSpec], Callable[[int], Sequence[AgentSpec]]]


def rollout(
    scenario: Scenario,
    network: Network,
    demand: DemandSource,
    seed: int,
    horizon_steps: int,
    n_rollouts: int,
    programs: Optional[Mapping[str, SignalProgram]] = None,
    config: Optional[RunConfig] = None,
) -> List[Rollout]:
    """n_rollouts independent rollouts; rollout k uses seed + k."""
    out = []
    for k in range(n_rollouts):
        specs = demand(seed + k) if callable(demand) else [_copy_spec(s) for s in demand]
        sim = Simulation(scenario, network, specs, programs or {}, config, seed + k)
        out.append(sim.run(horizon_steps))
    logger.info("%s: %d rollouts x %d steps", scenario.id, n_rollouts, horizon_steps)
    return out


def _copy_spec(spec: AgentSpec) -> AgentSpec:
    route = None
    if spec.route is not None:
        route = type(spec.route)(list(spec.route.edges), list(spec.route.connections))
    return replace(spec, route=route)
