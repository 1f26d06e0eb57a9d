"""HTTP endpoints for screening trial batches."""
from __future__ import annotations

import logging
from typing import List

from fastapi import APIRouter, Body, HTTPException, Query
from fastapi.responses import JSONResponse, PlainTextResponse

from app.models.trial import TrialValidationError
from app.routers.schemas import ProtocolResponse, ReportFormat, TrialRecordSchema
from app.services.config import load_screening_config
from app.services.ingest import group_cells
from app.services.report import emit_report, evaluate_all, result_to_dict, summarise_run, to_jsonable
from app.services.screening import ScreeningError

logger = logging.getLogger(__name__)
router = APIRouter()


@router.post("/screen")
def screen_trials(
    trials: List[TrialRecordSchema] = Body(..., description="Trials in the canonical schema"),
    report_format: ReportFormat = Query(ReportFormat.JSON, description="'json' or 'text'"),
):
    """
    Screen every model x condition cell found in the posted trials.

    Returns one result per cell, sorted by model then condition. The protocol
    in effect is the environment-configured one; overrides are stamped into
    each result.
    """
    try:
        records = [t.to_record() for t in trials]
    except TrialValidationError as e:
        raise HTTPException(status_code=422, detail=str(e))

    config = load_screening_config()
    try:
        cells = group_cells(records)
        results = evaluate_all(cells, config)
    except ScreeningError as e:
        logger.error(f"Screening error: {e}")
        raise HTTPException(status_code=500, detail=str(e))

    if report_format == ReportFormat.TEXT:
        return PlainTextResponse(emit_report(results, ReportFormat.TEXT, summarise_run(results, cells, config)))
    return JSONResponse(content=to_jsonable([result_to_dict(r) for r in results]))


@router.get("/protocol", response_model=ProtocolResponse)
async def protocol():
    """Active protocol thresholds and any deviation from the published values."""
    config = load_screening_config()
    return ProtocolResponse(
        thresholds=to_jsonable(config),
        non_default={
            name: {"default": default, "value": value}
            for name, (default, value) in config.non_default_fields().items()
        },
    )


@router.get("/health")
async def health():
    """Health check endpoint."""
    return {"status": "healthy"}
