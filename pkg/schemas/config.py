"""Run configuration.

Defaults are the pipeline constants. Tolerances, thresholds, weights and histogram bins
with no published value are our own choices.
"""
from __future__ import annotations

from typing import Dict, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.errors import ConfigError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class NetConfig(_Section):
    eps_split: float = Field(0.5, gt=0)
    delta_node: float = Field(1.0, gt=0)
    coverage_tolerance: float = Field(2.0, gt=0)
    default_lane_width: float = Field(3.5, gt=0)
    # applied to lanes whose speed_limit is 0 (unset)
    default_speed_limit: float = Field(13.89, gt=0)
    snap_tolerance: float = Field(0.1, ge=0)
    parallel_tolerance: float = Field(1.5, gt=0)
    length_tolerance: float = Field(0.5, gt=0)
    straight_deg: float = 25.0
    turn_deg: float = 135.0
    uturn_deg: float = 150.0
    max_truncation_passes: int = Field(64, ge=1)


class SignalConfig(_Section):
    v_go: float = Field(3.0, gt=0)
    d_stopline: float = Field(3.0, gt=0)
    stopped_speed: float = Field(0.1, gt=0)
    lateral_window: float = Field(2.0, gt=0)
    # a crossing counts as "without deceleration" above -decel_tolerance m/s²
    decel_tolerance: float = Field(0.5, ge=0)


class DemandConfig(_Section):
    placement_tolerance: float = Field(5.0, gt=0)
    max_heading_deg: float = Field(60.0, gt=0, le=180)
    w_main: float = Field(9.0, ge=0)
    w_side: float = Field(1.0, ge=0)
    lane_change_distance: float = Field(25.0, ge=0)
    max_route_edges: int = Field(32, ge=1)
    jm_ignore_keep_clear_time: Optional[float] = None
    resample_per_rollout: bool = True


class OverrideThresholds(_Section):
    d_intersection: float = Field(5.0, gt=0)
    d_roadedge: float = Field(1.0, gt=0)
    d_lanecenter_1: float = Field(2.0, gt=0)
    d_lanecenter_2: float = Field(5.0, gt=0)
    stationary_speed: float = Field(0.1, gt=0)
    bbox_margin: float = Field(5.0, ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.d_lanecenter_2 < self.d_lanecenter_1:
            raise ValueError("d_lanecenter_2 must be >= d_lanecenter_1")
        return self


class EngineConfig(_Section):
    lane_change_duration: float = Field(2.0, gt=0)
    time_gap_acceptance: float = Field(4.0, gt=0)
    lateral_accel: float = Field(3.0, gt=0)
    lookahead: float = Field(80.0, gt=0)
    overrides_enabled: bool = True
    lane_changes_enabled: bool = True


class BinSpec(_Section):
    low: float
    high: float
    count: int = Field(ge=1)

    @model_validator(mode="after")
    def _range(self):
        if self.high <= self.low:
            raise ValueError("bin high must exceed low")
        return self


KINEMATIC = ("linear_speed", "linear_accel", "angular_speed", "angular_accel")
INTERACTIVE = ("collision_indication", "distance_to_nearest", "ttc")
MAP_BASED = ("offroad_indication", "distance_to_road_edge")
COMPONENT_GROUPS = {"kinematic": KINEMATIC, "interactive": INTERACTIVE, "map": MAP_BASED}


def _default_weights() -> Dict[str, float]:
    weights = {}
    for members in COMPONENT_GROUPS.values():
        for name in members:
            weights[name] = 1.0 / (len(COMPONENT_GROUPS) * len(members))
    return weights


def _default_bins() -> Dict[str, BinSpec]:
    return {
        "linear_speed": BinSpec(low=0.0, high=40.0, count=20),
        "linear_accel": BinSpec(low=-10.0, high=10.0, count=20),
        "angular_speed": BinSpec(low=-1.5, high=1.5, count=20),
        "angular_accel": BinSpec(low=-5.0, high=5.0, count=20),
        "collision_indication": BinSpec(low=-0.5, high=1.5, count=2),
        "distance_to_nearest": BinSpec(low=-5.0, high=40.0, count=20),
        "ttc": BinSpec(low=0.0, high=5.0, count=10),
        "offroad_indication": BinSpec(low=-0.5, high=1.5, count=2),
        "distance_to_road_edge": BinSpec(low=-20.0, high=20.0, count=20),
    }


class MetricsConfig(_Section):
    weights: Dict[str, float] = Field(default_factory=_default_weights)
    bins: Dict[str, BinSpec] = Field(default_factory=_default_bins)
    ttc_cap: float = Field(5.0, gt=0)
    likelihood_floor: float = Field(1e-3, gt=0, lt=1)
    map_margin: float = Field(5.0, ge=0)

    @model_validator(mode="after")
    def _known(self):
        known = set(_default_weights())
        unknown = sorted(set(self.weights) - known)
        if unknown:
            raise ValueError(f"unknown metric components in weights: {unknown}")
        if any(w < 0 for w in self.weights.values()):
            raise ValueError("metric weights must be >= 0")
        missing = sorted(known - set(self.bins))
        if missing:
            raise ValueError(f"missing histogram bins for: {missing}")
        return self


class RunConfig(_Section):
    seed: int = 0
    horizon_steps: int = Field(80, ge=1)
    n_rollouts: int = Field(32, ge=1)
    workers: int = Field(1, ge=1)
    write_binary: bool = False
    net: NetConfig = Field(default_factory=NetConfig)
    signals: SignalConfig = Field(default_factory=SignalConfig)
    demand: DemandConfig = Field(default_factory=DemandConfig)
    overrides: OverrideThresholds = Field(default_factory=OverrideThresholds)
    engine: EngineConfig = Field(default_factory=EngineConfig)
    metrics: MetricsConfig = Field(default_factory=MetricsConfig)

    def check_scenario(self, history_length: int) -> None:
        if self.horizon_steps <= history_length:
            raise ConfigError(
                f"horizon_steps ({self.horizon_steps}) must exceed history_length ({history_length})"
            )
