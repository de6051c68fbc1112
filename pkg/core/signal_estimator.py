"""Signal programs for signalized nodes.

Observed head states are completed per connection and per history step with a rule
cascade (observation, vehicle-crossing cue, stopped-queue cue, carry), then held
constant to the simulation horizon.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from core.geometry import nearest_distance, segments_of
from core.network import Connection, Network, Node
from schemas.config import SignalConfig
from schemas.scenario import ObjectType, Scenario, SignalState

logger = logging.getLogger(__name__)

# per-step state sources
OBSERVED = "observed"
RECTIFIED = "rectified"
INFERRED = "inferred"
CARRIED = "carried"
DEFAULT = "default"
HELD = "held"

_TLS_CHAR = {SignalState.red: "r", SignalState.yellow: "y", SignalState.green: "G"}


@dataclass
class SignalProgram:
    node_id: str
    connection_ids: List[str]
    history_length: int
    extended_to: int
    phases: List[Dict[str, SignalState]] = field(default_factory=list)
    sources: List[Dict[str, str]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def state_at(self, connection_id: str, t: int) -> SignalState:
        t = min(max(t, 0), self.extended_to - 1)
        return self.phases[t][connection_id]

    def state_string(self, t: int) -> str:
        """SUMO link-state string, one character per connection in link order."""
        t = min(max(t, 0), self.extended_to - 1)
        return "".join(_TLS_CHAR[self.phases[t][c]] for c in self.connection_ids)

    @property
    def defaulted(self) -> List[str]:
        """Connections still on the default red at the last history step."""
        last = self.sources[self.history_length - 1]
        return [c for c in self.connection_ids if last[c] == DEFAULT]

    def to_dict(self) -> dict:
        return {
            "node_id": self.node_id,
            "connection_ids": list(self.connection_ids),
            "history_length": self.history_length,
            "extended_to": self.extended_to,
            "states": [self.state_string(t) for t in range(self.extended_to)],
            "defaulted": self.defaulted,
        }


def identify_signalized_nodes(network: Network, scenario: Scenario) -> Set[str]:
    observed = {obs.lane_id for obs in scenario.signal_observations}
    found = set()
    for node in network.nodes.values():
        for cid in node.connection_ids:
            if observed & set(network.connections[cid].signal_lane_ids):
                found.add(node.id)
                break
        node.signalized = node.id in found
    return found


# -------------------------------------------------------------------
# Behavioral cues
# -------------------------------------------------------------------
@dataclass
class _Approach:
    stop: np.ndarray
    heading: np.ndarray  # unit vector of travel at the stop point
    connections: List[Connection]


def _approaches(network: Network, node: Node) -> List[_Approach]:
    by_lane: Dict[Tuple[str, int], List[Connection]] = {}
    for cid in node.connection_ids:
        conn = network.connections[cid]
        by_lane.setdefault((conn.from_edge, conn.from_lane_index), []).append(conn)
    out = []
    for (eid, idx), conns in sorted(by_lane.items()):
        lane = network.lane(eid, idx)
        h = lane.end_heading
        out.append(_Approach(lane.end.copy(), np.array([math.cos(h), math.sin(h)]), conns))
    return out


def _frame(app: _Approach, x: float, y: float) -> Tuple[float, float]:
    dx, dy = x - app.stop[0], y - app.stop[1]
    return dx * app.heading[0] + dy * app.heading[1], dx * app.heading[1] - dy * app.heading[0]


def _followed(app: _Approach, later: List[Tuple[float, float]]) -> List[Connection]:
    """Connection of the approach the vehicle went on to follow."""
    if len(app.connections) == 1 or not later:
        return app.connections
    pts = np.array(later)

    def mean_dist(conn: Connection) -> float:
        a, b = segments_of([conn.shape])
        return float(nearest_distance(pts, a, b).mean())

    return [min(app.connections, key=lambda c: (mean_dist(c), c.id))]


def _behavior_cues(
    network: Network, node: Node, scenario: Scenario, cfg: SignalConfig
) -> Tuple[Dict[int, Set[str]], Dict[int, Set[str]]]:
    """Per-step connection ids with a go cue and with a stop cue."""
    go: Dict[int, Set[str]] = {}
    stop: Dict[int, Set[str]] = {}
    approaches = _approaches(network, node)
    dt = scenario.timestep_s
    for track in scenario.tracks:
        if track.object_type != ObjectType.vehicle:
            continue
        states = track.valid_states(upto=scenario.history_length)
        for app in approaches:
            h_app = math.atan2(app.heading[1], app.heading[0])
            for k, st in enumerate(states):
                aligned = abs((st.heading - h_app + math.pi) % (2 * math.pi) - math.pi) < math.pi / 4
                if not aligned:
                    continue
                u, lat = _frame(app, *st.position)
                if abs(lat) > cfg.lateral_window:
                    continue
                if st.speed < cfg.stopped_speed and -cfg.d_stopline <= u <= 0.5:
                    stop.setdefault(st.time_index, set()).update(c.id for c in app.connections)
                if k == 0:
                    continue
                prev = states[k - 1]
                if prev.time_index != st.time_index - 1:
                    continue
                u0, lat0 = _frame(app, *prev.position)
                accel = (st.speed - prev.speed) / dt
                if (
                    u0 < 0.0 <= u
                    and abs(lat0) <= cfg.lateral_window
                    and st.speed >= cfg.v_go
                    and accel >= -cfg.decel_tolerance
                ):
                    later = [s.position for s in states[k + 1:]]
                    go.setdefault(st.time_index, set()).update(c.id for c in _followed(app, later))
    return go, stop


# -------------------------------------------------------------------
# Cascade
# -------------------------------------------------------------------
def _observations(network: Network, node: Node, scenario: Scenario) -> Dict[int, Dict[str, SignalState]]:
    by_lane: Dict[str, Dict[int, SignalState]] = {}
    for obs in sorted(scenario.signal_observations, key=lambda o: (o.time_index, o.lane_id)):
        if obs.state != SignalState.unknown:
            by_lane.setdefault(obs.lane_id, {}).setdefault(obs.time_index, obs.state)
    out: Dict[int, Dict[str, SignalState]] = {}
    for cid in node.connection_ids:
        for lane_id in sorted(network.connections[cid].signal_lane_ids):
            for t, state in by_lane.get(lane_id, {}).items():
                out.setdefault(t, {}).setdefault(cid, state)
    return out


def infer_states(
    node: Node, network: Network, scenario: Scenario, config: Optional[SignalConfig] = None
) -> SignalProgram:
    cfg = config or SignalConfig()
    H = scenario.history_length
    conn_ids = list(node.connection_ids)
    observed = _observations(network, node, scenario)
    go, stop = _behavior_cues(network, node, scenario, cfg)
    program = SignalProgram(node.id, conn_ids, H, H)

    prev_state = {c: SignalState.red for c in conn_ids}
    prev_source = {c: DEFAULT for c in conn_ids}
    rectifying: Set[str] = set()
    for t in range(H):
        obs_t = observed.get(t, {})
        state: Dict[str, SignalState] = {}
        source: Dict[str, str] = {}
        for c in conn_ids:
            obs = obs_t.get(c)
            if c in stop.get(t, ()):
                rectifying.discard(c)
            if c in go.get(t, ()) and obs in (None, SignalState.red):
                state[c], source[c] = SignalState.green, (INFERRED if obs is None else RECTIFIED)
                if obs is not None:
                    rectifying.add(c)
            elif obs is not None:
                if obs == SignalState.red and c in rectifying:
                    state[c], source[c] = SignalState.green, RECTIFIED
                else:
                    rectifying.discard(c)
                    state[c], source[c] = obs, OBSERVED
            elif c in stop.get(t, ()):
                state[c], source[c] = SignalState.red, INFERRED
            else:
                state[c] = prev_state[c]
                source[c] = CARRIED if prev_source[c] != DEFAULT else DEFAULT

        for c in conn_ids:
            if state[c] != SignalState.green:
                continue
            for foe in network.connections[c].crossing_foes:
                if foe not in state or state[foe] != SignalState.green:
                    continue
                if source[c] != OBSERVED and source[foe] == OBSERVED:
                    state[c], source[c] = SignalState.red, INFERRED
                    break
                if source[c] == OBSERVED and source[foe] == OBSERVED and c < foe:
                    program.warnings.append(
                        f"node {node.id} step {t}: observed greens on crossing connections {c}, {foe}"
                    )
        program.phases.append(state)
        program.sources.append(source)
        prev_state, prev_source = state, source

    for message in program.warnings:
        logger.warning(message)
    if program.defaulted:
        logger.info("node %s: %d connections default to red", node.id, len(program.defaulted))
    return program


def extend_states(program: SignalProgram, horizon: int) -> SignalProgram:
    """Hold every connection at its last history state up to absolute step `horizon`."""
    H = program.history_length
    last_state = program.phases[H - 1]
    phases = program.phases[:H] + [dict(last_state) for _ in range(max(horizon - H, 0))]
    sources = program.sources[:H] + [{c: HELD for c in program.connection_ids} for _ in range(max(horizon - H, 0))]
    return SignalProgram(
        node_id=program.node_id,
        connection_ids=list(program.connection_ids),
        history_length=H,
        extended_to=max(horizon, H),
        phases=phases,
        sources=sources,
        warnings=list(program.warnings),
    )


def estimate_signals(
    network: Network, scenario: Scenario, horizon: int, config: Optional[SignalConfig] = None
) -> Dict[str, SignalProgram]:
    programs = {}
    for node_id in sorted(identify_signalized_nodes(network, scenario), key=lambda n: int(n[1:])):
        program = infer_states(network.nodes[node_id], network, scenario, config)
        programs[node_id] = extend_states(program, horizon)
    network.signal_programs = dict(programs)
    return programs
