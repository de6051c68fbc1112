from __future__ import annotations

from datetime import datetime
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from schemas.config import RunConfig
from schemas.scenario import Scenario

CONTRACT_VERSION = "0.1.0"


# -------------------------------------------------------------------
# Reports
# -------------------------------------------------------------------
class ConversionReport(BaseModel):
    scenario_id: str
    edges: int
    nodes: Dict[str, int] = Field(default_factory=dict, description="node counts by kind")
    connections: int
    lanes: int
    signalized_nodes: List[str] = Field(default_factory=list)
    coverage_ratio: float = Field(..., ge=0.0, le=1.0)
    warnings: List[str] = Field(default_factory=list)
    files: List[str] = Field(default_factory=list)


class MetricsReport(BaseModel):
    scenario_id: str
    label: Literal["WOSAC-style"] = "WOSAC-style"
    components: Dict[str, Optional[float]] = Field(
        default_factory=dict, description="likelihood score in [0, 1] per component; null when skipped"
    )
    groups: Dict[str, Optional[float]] = Field(default_factory=dict)
    realism_meta: Optional[float] = Field(None, ge=0.0, le=1.0)
    min_ade: Optional[float] = Field(None, ge=0.0)
    collision_rate: float = Field(..., ge=0.0, le=1.0)
    offroad_rate: float = Field(..., ge=0.0, le=1.0)
    n_rollouts: int = Field(..., ge=1)
    horizon: int = Field(..., ge=1)
    skipped_components: List[str] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)


# -------------------------------------------------------------------
# Network converter
# -------------------------------------------------------------------
class ConvertRequest(BaseModel):
    scenario: Scenario
    config: RunConfig = Field(default_factory=RunConfig)


class ConvertResponse(BaseModel):
    accepted: Literal[True]
    version: str
    received_at: datetime
    report: ConversionReport
    documents: Dict[str, str] = Field(..., description="file name -> XML text")


class ConvertEcho(BaseModel):
    accepted: Literal[True]
    version: str
    received_at: datetime
    echo: ConvertRequest


def get_network_converter_contract():
    return {
        "version": CONTRACT_VERSION,
        "request": ConvertRequest.model_json_schema(),
        "response": ConvertResponse.model_json_schema(),
    }


# -------------------------------------------------------------------
# Sim agents
# -------------------------------------------------------------------
class SimulateRequest(BaseModel):
    scenario: Scenario
    seed: int = 0
    horizon_steps: int = Field(80, ge=1, le=600)
    n_rollouts: int = Field(1, ge=1, le=32)
    config: RunConfig = Field(default_factory=RunConfig)


class RolloutSummary(BaseModel):
    seed: int
    start_step: int
    horizon: int
    agents: int
    exited_agents: List[str] = Field(default_factory=list)
    override_classes: Dict[str, str] = Field(default_factory=dict)
    final_states: Dict[str, List[float]] = Field(
        default_factory=dict, description="agent id -> [x, y, heading, speed, valid] at the last step"
    )


class SimulateResponse(BaseModel):
    accepted: Literal[True]
    version: str
    received_at: datetime
    scenario_id: str
    rollouts: List[RolloutSummary]


class EvaluateResponse(BaseModel):
    accepted: Literal[True]
    version: str
    received_at: datetime
    report: MetricsReport


def get_sim_agents_contract():
    return {
        "version": CONTRACT_VERSION,
        "request": SimulateRequest.model_json_schema(),
        "response": SimulateResponse.model_json_schema(),
        "evaluate_response": EvaluateResponse.model_json_schema(),
    }
