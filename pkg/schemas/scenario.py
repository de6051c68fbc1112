"""Canonical scenario data model.

Mirrors the motion-dataset scenario fields the pipeline consumes. Instances are frozen
after validation and safe to share between workers.
"""
from __future__ import annotations

import math
from enum import Enum
from typing import Annotated, Dict, List, NamedTuple, Optional

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, FiniteFloat, model_validator

from core.errors import ScenarioReferenceError

TIMESTEP_S = 0.1


def _coerce_id(value):
    if isinstance(value, int) and not isinstance(value, bool):
        return str(value)
    return value


Identifier = Annotated[str, BeforeValidator(_coerce_id)]
NonNegative = Annotated[float, Field(ge=0.0, allow_inf_nan=False)]


class Point2(NamedTuple):
    x: FiniteFloat
    y: FiniteFloat


class LaneType(str, Enum):
    surface_street = "surface_street"
    freeway = "freeway"
    bike_lane = "bike_lane"


class SignalState(str, Enum):
    red = "red"
    yellow = "yellow"
    green = "green"
    unknown = "unknown"


class ObjectType(str, Enum):
    vehicle = "vehicle"
    pedestrian = "pedestrian"
    cyclist = "cyclist"


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class Adjacency(_Frozen):
    neighbor_id: Identifier
    self_start_index: int = Field(ge=0)
    self_end_index: int = Field(ge=0)
    neighbor_start_index: int = Field(ge=0)
    neighbor_end_index: int = Field(ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.self_start_index > self.self_end_index:
            raise ValueError("self_start_index must be <= self_end_index")
        if self.neighbor_start_index > self.neighbor_end_index:
            raise ValueError("neighbor_start_index must be <= neighbor_end_index")
        return self


class LaneCenter(_Frozen):
    id: Identifier
    polyline: List[Point2] = Field(min_length=2)
    lane_type: LaneType = LaneType.surface_street
    speed_limit: NonNegative = 0.0
    entry_ids: List[Identifier] = Field(default_factory=list)
    exit_ids: List[Identifier] = Field(default_factory=list)
    left_neighbors: List[Adjacency] = Field(default_factory=list)
    right_neighbors: List[Adjacency] = Field(default_factory=list)
    width: Optional[Annotated[float, Field(gt=0.0, allow_inf_nan=False)]] = None
    # originating lane of a truncation fragment; None means the lane itself
    source_id: Optional[Identifier] = None

    @model_validator(mode="after")
    def _geometry(self):
        for i in range(1, len(self.polyline)):
            a, b = self.polyline[i - 1], self.polyline[i]
            if math.hypot(b.x - a.x, b.y - a.y) < 1e-9:
                raise ValueError(f"repeated consecutive point at index {i}")
        last = len(self.polyline) - 1
        for adj in (*self.left_neighbors, *self.right_neighbors):
            if adj.self_end_index > last:
                raise ValueError(
                    f"adjacency to {adj.neighbor_id} ends at index {adj.self_end_index}, "
                    f"polyline has {last + 1} points"
                )
        return self

    @property
    def origin_id(self) -> str:
        return self.source_id or self.id

    @property
    def neighbors(self) -> List[Adjacency]:
        return [*self.left_neighbors, *self.right_neighbors]


class RoadEdge(_Frozen):
    id: Identifier
    polyline: List[Point2] = Field(min_length=2)


class SignalObservation(_Frozen):
    time_index: int = Field(ge=0)
    lane_id: Identifier
    state: SignalState = SignalState.unknown
    stop_point: Point2


class TrackState(_Frozen):
    time_index: int = Field(ge=0)
    position: Point2
    heading: FiniteFloat = 0.0
    vx: FiniteFloat = 0.0
    vy: FiniteFloat = 0.0
    length: NonNegative = 0.0
    width: NonNegative = 0.0
    valid: bool = True

    @model_validator(mode="after")
    def _dims(self):
        if self.valid and (self.length <= 0.0 or self.width <= 0.0):
            raise ValueError("valid states need length > 0 and width > 0")
        return self

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


class AgentTrack(_Frozen):
    id: Identifier
    object_type: ObjectType = ObjectType.vehicle
    states: List[TrackState] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_steps(self):
        seen = set()
        for st in self.states:
            if st.time_index in seen:
                raise ValueError(f"duplicate state for time_index {st.time_index}")
            seen.add(st.time_index)
        return self

    def state_at(self, time_index: int) -> Optional[TrackState]:
        for st in self.states:
            if st.time_index == time_index:
                return st if st.valid else None
        return None

    def valid_states(self, upto: Optional[int] = None) -> List[TrackState]:
        out = [s for s in self.states if s.valid and (upto is None or s.time_index < upto)]
        return sorted(out, key=lambda s: s.time_index)


class Scenario(_Frozen):
    id: Identifier
    timestep_s: float = TIMESTEP_S
    history_length: int = Field(ge=1)
    lane_centers: List[LaneCenter] = Field(default_factory=list)
    road_edges: List[RoadEdge] = Field(default_factory=list)
    stop_sign_lane_ids: List[Identifier] = Field(default_factory=list)
    signal_observations: List[SignalObservation] = Field(default_factory=list)
    tracks: List[AgentTrack] = Field(default_factory=list)

    @model_validator(mode="after")
    def _consistency(self):
        if abs(self.timestep_s - TIMESTEP_S) > 1e-9:
            raise ValueError(f"timestep_s must be {TIMESTEP_S}")
        for name, items in (
            ("lane_centers", self.lane_centers),
            ("road_edges", self.road_edges),
            ("tracks", self.tracks),
        ):
            ids = [item.id for item in items]
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            if dupes:
                raise ValueError(f"duplicate {name} ids: {dupes}")
        for obs in self.signal_observations:
            if obs.time_index >= self.history_length:
                raise ValueError(
                    f"signal observation at time_index {obs.time_index} outside history window"
                )

        lanes = self.lane_map()
        missing: List[str] = []
        for lane in self.lane_centers:
            missing += [i for i in (*lane.entry_ids, *lane.exit_ids) if i not in lanes]
            for adj in lane.neighbors:
                other = lanes.get(adj.neighbor_id)
                if other is None:
                    missing.append(adj.neighbor_id)
                elif adj.neighbor_end_index >= len(other.polyline):
                    raise ValueError(
                        f"lane {lane.id}: adjacency index {adj.neighbor_end_index} "
                        f"outside neighbor {other.id}"
                    )
        missing += [i for i in self.stop_sign_lane_ids if i not in lanes]
        missing += [o.lane_id for o in self.signal_observations if o.lane_id not in lanes]
        if missing:
            raise ScenarioReferenceError("lane", missing)
        return self

    @property
    def current_index(self) -> int:
        return self.history_length - 1

    def lane_map(self) -> Dict[str, LaneCenter]:
        return {lane.id: lane for lane in self.lane_centers}

    def track_map(self) -> Dict[str, AgentTrack]:
        return {t.id: t for t in self.tracks}
