from __future__ import annotations

import logging
from datetime import datetime, timezone
from typing import Tuple

from fastapi import APIRouter, Body, HTTPException
from pydantic import ValidationError

from core import pipeline
from core.errors import RoadsimError
from core.scenario_model import parse_scenario
from core.sim_engine import Rollout
from schemas.config import RunConfig
from schemas.contracts import (
    CONTRACT_VERSION,
    EvaluateResponse,
    RolloutSummary,
    SimulateRequest,
    SimulateResponse,
    get_sim_agents_contract,
)
from schemas.scenario import Scenario
from tools.network_converter import http_error

logger = logging.getLogger(__name__)

# ---------------------------------------------------------
# Router
# ---------------------------------------------------------

router = APIRouter(
    prefix="/api/tools/sim-agents",
    tags=["sim-agents"],
)


def parse_request(payload: dict) -> Tuple[Scenario, RunConfig]:
    if not isinstance(payload.get("scenario"), dict):
        raise HTTPException(status_code=422, detail="scenario is required")
    try:
        scenario = parse_scenario(payload["scenario"])
        request = SimulateRequest.model_validate({**payload, "scenario": scenario})
        config = request.config.model_copy(
            update={
                "seed": request.seed,
                "horizon_steps": request.horizon_steps,
                "n_rollouts": request.n_rollouts,
            }
        )
        config.check_scenario(scenario.history_length)
    except (RoadsimError, ValidationError) as e:
        raise http_error(e)
    return scenario, config


def summarize(rollout: Rollout) -> RolloutSummary:
    last = rollout.states[:, -1, :]
    return RolloutSummary(
        seed=rollout.seed,
        start_step=rollout.start_step,
        horizon=rollout.horizon,
        agents=len(rollout.agent_ids),
        exited_agents=[aid for aid, s in zip(rollout.agent_ids, last) if s[4] < 0.5],
        override_classes=rollout.metadata.get("override_classes", {}),
        final_states={aid: [round(float(v), 4) for v in s] for aid, s in zip(rollout.agent_ids, last)},
    )


# ---------------------------------------------------------
# Contract
# ---------------------------------------------------------

@router.get("/contract")
def contract():
    return get_sim_agents_contract()


# ---------------------------------------------------------
# Simulate + evaluate
# ---------------------------------------------------------

@router.post("/simulate", response_model=SimulateResponse)
def simulate(payload: dict = Body(...)):
    scenario, config = parse_request(payload)
    try:
        rollouts = pipeline.simulate(scenario, config)
    except RoadsimError as e:
        logger.warning("simulate %s failed: %s", scenario.id, e)
        raise http_error(e)
    return SimulateResponse(
        accepted=True,
        version=CONTRACT_VERSION,
        received_at=datetime.now(timezone.utc),
        scenario_id=scenario.id,
        rollouts=[summarize(r) for r in rollouts],
    )


@router.post("/evaluate", response_model=EvaluateResponse)
def evaluate(payload: dict = Body(...)):
    scenario, config = parse_request(payload)
    try:
        rollouts = pipeline.simulate(scenario, config)
        report = pipeline.score(scenario, rollouts, config)
    except RoadsimError as e:
        logger.warning("evaluate %s failed: %s", scenario.id, e)
        raise http_error(e)
    return EvaluateResponse(
        accepted=True,
        version=CONTRACT_VERSION,
        received_at=datetime.now(timezone.utc),
        report=report,
    )
