"""Wire schemas for trial records and API requests/responses."""
from enum import Enum
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.models.trial import Condition, ParseStatus, TrialRecord


class ReportFormat(str, Enum):
    """Output format for screening reports."""
    JSON = "json"
    TEXT = "text"


class TrialRecordSchema(BaseModel):
    """Canonical JSONL trial schema; absent optionals are omitted on write."""
    model_config = ConfigDict(extra="forbid", protected_namespaces=())

    run_id: str = Field(..., min_length=1)
    model_id: str = Field(..., min_length=1)
    condition: Condition
    item_id: str = Field(..., min_length=1)
    question: str
    gold_aliases: List[str]
    raw_response: str
    parsed_answer: Optional[str] = None
    correct: Optional[bool] = None
    confidence: Optional[float] = Field(
        None, ge=0.0, le=1.0, description="Normalised confidence in [0, 1]"
    )
    confidence_raw: Optional[str] = None
    parse_status: ParseStatus
    logprob_mean: Optional[float] = None
    trace_length: Optional[int] = Field(None, ge=0, description="Reasoning-trace length in characters")
    seed: int

    @field_validator("gold_aliases")
    @classmethod
    def _validate_aliases(cls, v: List[str]) -> List[str]:
        if not v:
            raise ValueError("gold_aliases must contain at least one alias")
        return v

    @model_validator(mode="after")
    def _confidence_matches_status(self) -> "TrialRecordSchema":
        if (self.confidence is not None) != (self.parse_status == ParseStatus.OK):
            raise ValueError("confidence must be present if and only if parse_status is OK")
        return self

    def to_record(self) -> TrialRecord:
        return TrialRecord(**self.model_dump())

    @classmethod
    def from_record(cls, record: TrialRecord) -> "TrialRecordSchema":
        return cls(
            run_id=record.run_id,
            model_id=record.model_id,
            condition=record.condition,
            item_id=record.item_id,
            question=record.question,
            gold_aliases=list(record.gold_aliases),
            raw_response=record.raw_response,
            parsed_answer=record.parsed_answer,
            correct=record.correct,
            confidence=record.confidence,
            confidence_raw=record.confidence_raw,
            parse_status=record.parse_status,
            logprob_mean=record.logprob_mean,
            trace_length=record.trace_length,
            seed=record.seed,
        )


class ItemSchema(BaseModel):
    """One line of the items file."""
    item_id: str = Field(..., min_length=1)
    question: str = Field(..., min_length=1)
    gold_aliases: List[str] = Field(..., min_length=1)


class ProtocolResponse(BaseModel):
    """Active protocol thresholds and any deviations from the published values."""
    thresholds: Dict[str, Any]
    non_default: Dict[str, Any] = Field(default_factory=dict)
