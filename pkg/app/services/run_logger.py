"""Structured JSON logging for collected trials and evaluated cells."""
import json
import logging
from datetime import datetime, timezone
from typing import TYPE_CHECKING, Any, Dict, Optional

from app.models.trial import TrialRecord

if TYPE_CHECKING:
    from app.services.report import CellResult

trial_logger = logging.getLogger("confidence_screen.trials")
cell_logger = logging.getLogger("confidence_screen.cells")


class RunLogger:
    """Single-line JSON records for trials and cell results."""

    # Maximum preview length for question text
    QUESTION_PREVIEW_LENGTH = 120

    @classmethod
    def log_trial(
        cls,
        trial: TrialRecord,
        latency_ms: float = 0.0,
        attempts: int = 1,
        error: Optional[str] = None,
    ) -> Dict[str, Any]:
        """
        Log one collected trial as structured JSON.

        Args:
            trial: The assembled trial record
            latency_ms: Wall time spent on the item, retries included
            attempts: Number of request attempts made
            error: Transport error text, if the request failed

        Returns:
            The log entry dict for testing/inspection
        """
        entry: Dict[str, Any] = {
            "timestamp": cls._now(),
            "event": "trial",
            "run_id": trial.run_id,
            "model_id": trial.model_id,
            "condition": trial.condition.value,
            "item_id": trial.item_id,
            "question": cls._truncate(trial.question),
            "parse_status": trial.parse_status.value,
            "confidence": trial.confidence,
            "correct": trial.correct,
            "latency_ms": round(latency_ms, 2),
            "attempts": attempts,
        }
        if error:
            entry["error"] = error

        trial_logger.info(json.dumps(entry))
        return entry

    @classmethod
    def log_cell_result(cls, result: "CellResult") -> Dict[str, Any]:
        """Log the headline outcome of one evaluated cell."""
        screening = result.screening
        indices = screening.indices
        metrics = result.metrics
        entry: Dict[str, Any] = {
            "timestamp": cls._now(),
            "event": "cell",
            "model_id": result.model_id,
            "condition": result.condition,
            "tier": screening.tier.value,
            "decisive_step": screening.decisive_step,
            "degenerate": screening.degenerate,
            "trin_warning": screening.trin_warning,
            "excluded_by_parse_rate": result.excluded_by_parse_rate,
            "parse_rate": result.parse_rate,
            "indices": {
                "L": indices.L.value,
                "Fp": indices.Fp.value,
                "RBS": indices.RBS.value,
                "TRIN": indices.TRIN.value,
            },
            "ceiling_rate": metrics.ceiling_rate,
            "auroc2": metrics.auroc2.point if metrics.auroc2 else None,
        }
        cell_logger.info(json.dumps(entry))
        return entry

    @classmethod
    def _now(cls) -> str:
        return datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")

    @classmethod
    def _truncate(cls, text: str) -> str:
        if len(text) <= cls.QUESTION_PREVIEW_LENGTH:
            return text
        return text[:cls.QUESTION_PREVIEW_LENGTH] + "..."


def configure_logging(
    log_level: int = logging.INFO,
    log_file: Optional[str] = None,
) -> None:
    """
    Configure the trial and cell loggers.

    Args:
        log_level: Logging level
        log_file: Optional file path for log output
    """
    formatter = logging.Formatter("%(message)s")
    for name in ("confidence_screen.trials", "confidence_screen.cells"):
        logger = logging.getLogger(name)
        logger.setLevel(log_level)
        logger.handlers.clear()
        logger.propagate = False

        # stderr keeps stdout free for reports
        console_handler = logging.StreamHandler()
        console_handler.setLevel(log_level)
        console_handler.setFormatter(formatter)
        logger.addHandler(console_handler)

        if log_file:
            file_handler = logging.FileHandler(log_file)
            file_handler.setLevel(log_level)
            file_handler.setFormatter(formatter)
            logger.addHandler(file_handler)

    # Module loggers (warnings, retries, protocol overrides)
    logging.basicConfig(level=log_level, format="%(levelname)s %(name)s: %(message)s")
