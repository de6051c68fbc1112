from __future__ import annotations

import logging
from datetime import datetime, timezone

from fastapi import APIRouter, Body, HTTPException
from pydantic import ValidationError

from core import pipeline
from core.errors import RoadsimError, ScenarioReferenceError, ScenarioSchemaError
from core.scenario_model import parse_scenario
from core.sumo_export import DOCUMENTS, SUFFIXES
from schemas.config import RunConfig
from schemas.contracts import (
    CONTRACT_VERSION,
    ConvertEcho,
    ConvertRequest,
    ConvertResponse,
    get_network_converter_contract,
)

logger = logging.getLogger(__name__)

# ---------------------------------------------------------
# Router
# ---------------------------------------------------------

router = APIRouter(
    prefix="/api/tools/network-converter",
    tags=["network-converter"],
)


def http_error(e: Exception) -> HTTPException:
    if isinstance(e, (ScenarioSchemaError, ScenarioReferenceError, ValidationError)):
        return HTTPException(status_code=422, detail=f"{type(e).__name__}: {e}")
    return HTTPException(status_code=400, detail=f"{type(e).__name__}: {e}")


def parse_request(payload: dict) -> ConvertRequest:
    """Scenario and config validated through the loader so reference errors map to 422."""
    if not isinstance(payload.get("scenario"), dict):
        raise HTTPException(status_code=422, detail="scenario is required")
    try:
        scenario = parse_scenario(payload["scenario"])
        config = RunConfig.model_validate(payload.get("config") or {})
    except (RoadsimError, ValidationError) as e:
        raise http_error(e)
    return ConvertRequest(scenario=scenario, config=config)


# ---------------------------------------------------------
# Contract
# ---------------------------------------------------------

@router.get("/contract")
def contract():
    return get_network_converter_contract()


@router.post("/test-contract", response_model=ConvertEcho)
def test_contract(payload: dict = Body(...)):
    return ConvertEcho(
        accepted=True,
        version=CONTRACT_VERSION,
        received_at=datetime.now(timezone.utc),
        echo=parse_request(payload),
    )


# ---------------------------------------------------------
# Convert
# ---------------------------------------------------------

@router.post("/convert", response_model=ConvertResponse)
def convert(payload: dict = Body(...)):
    request = parse_request(payload)
    sid = request.scenario.id
    try:
        converted = pipeline.convert(request.scenario, request.config)
    except RoadsimError as e:
        logger.warning("convert %s failed: %s", sid, e)
        raise http_error(e)

    documents = {
        f"{sid}{SUFFIXES[name]}": converted.bundle.document(name)
        for name in DOCUMENTS
        if converted.bundle.document(name)
    }
    converted.report.files = sorted(documents)
    return ConvertResponse(
        accepted=True,
        version=CONTRACT_VERSION,
        received_at=datetime.now(timezone.utc),
        report=converted.report,
        documents=documents,
    )
