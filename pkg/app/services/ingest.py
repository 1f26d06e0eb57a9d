"""Reading and writing trial logs, and grouping trials into cells."""
from __future__ import annotations

import csv
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Tuple

from pydantic import ValidationError

from app.models.trial import Cell, Condition, TrialRecord, TrialValidationError
from app.routers.schemas import ItemSchema, TrialRecordSchema

logger = logging.getLogger(__name__)

# A run fails when more than this fraction of nonblank lines is invalid.
MAX_BAD_LINE_FRACTION = 0.01

# Reserved delimiter joining gold_aliases in the flat CSV view.
CSV_ALIAS_DELIMITER = "|"

TRIAL_FIELDS: Tuple[str, ...] = tuple(f.name for f in fields(TrialRecord))
REQUIRED_FIELDS = frozenset(
    {"run_id", "model_id", "condition", "item_id", "question", "gold_aliases",
     "raw_response", "parse_status", "seed"}
)


class TrialFormat(str, Enum):
    JSONL = "jsonl"
    CSV = "csv"


class TrialFileError(Exception):
    """Raised when a trial or items file cannot be used."""

    def __init__(self, message: str, errors: Iterable["LineError"] = ()):
        super().__init__(message)
        self.errors = list(errors)


@dataclass(frozen=True)
class LineError:
    """A rejected input line."""
    line: int
    message: str


@dataclass
class TrialBatch:
    """Records read from one file plus the lines that were rejected."""
    records: List[TrialRecord] = field(default_factory=list)
    errors: List[LineError] = field(default_factory=list)


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err.get("loc", ())) or "record"
        parts.append(f"{loc}: {err.get('msg')}")
    return "; ".join(parts)


def _parse_row(data: Any, line_no: int, batch: TrialBatch) -> None:
    if not isinstance(data, dict):
        batch.errors.append(LineError(line_no, "expected a JSON object"))
        return
    try:
        batch.records.append(TrialRecordSchema.model_validate(data).to_record())
    except ValidationError as e:
        batch.errors.append(LineError(line_no, _format_validation_error(e)))
    except TrialValidationError as e:
        batch.errors.append(LineError(line_no, str(e)))


def _csv_row_to_dict(row: Dict[str, str]) -> Dict[str, Any]:
    data: Dict[str, Any] = {}
    for key, value in row.items():
        if value is None:
            continue
        if value == "" and key not in REQUIRED_FIELDS:
            # blank optional cell means absent
            continue
        if key == "gold_aliases":
            data[key] = value.split(CSV_ALIAS_DELIMITER) if value else []
        elif key == "correct":
            data[key] = value.strip().lower() in {"1", "true", "yes"}
        else:
            data[key] = value
    return data


def _check_bad_fraction(path: Path, batch: TrialBatch, lines: int) -> None:
    if lines and len(batch.errors) / lines > MAX_BAD_LINE_FRACTION:
        raise TrialFileError(
            f"{path}: {len(batch.errors)} of {lines} lines invalid "
            f"(limit {MAX_BAD_LINE_FRACTION:.0%}); first: line {batch.errors[0].line}: "
            f"{batch.errors[0].message}",
            batch.errors,
        )
    for err in batch.errors:
        logger.warning(f"{path}: skipped line {err.line}: {err.message}")


def read_trials(path: str | Path, fmt: TrialFormat | str = TrialFormat.JSONL) -> TrialBatch:
    """
    Read trial records from JSONL or CSV.

    Every valid line becomes a TrialRecord; invalid lines are collected with
    their line numbers. The read fails when more than 1% of lines are invalid.

    Raises:
        TrialFileError: missing file, schema-violating CSV header, too many bad lines
    """
    path = Path(path)
    fmt = TrialFormat(str(fmt).lower() if not isinstance(fmt, TrialFormat) else fmt)
    if not path.is_file():
        raise TrialFileError(f"trial file not found: {path}")

    batch = TrialBatch()
    lines = 0
    if fmt == TrialFormat.JSONL:
        with path.open(encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                lines += 1
                try:
                    data = json.loads(line)
                except json.JSONDecodeError as e:
                    batch.errors.append(LineError(line_no, f"invalid JSON: {e.msg}"))
                    continue
                _parse_row(data, line_no, batch)
    else:
        with path.open(encoding="utf-8", newline="") as handle:
            reader = csv.DictReader(handle)
            header = set(reader.fieldnames or [])
            if header:
                missing = REQUIRED_FIELDS - header
                unknown = header - set(TRIAL_FIELDS)
                if missing or unknown:
                    raise TrialFileError(
                        f"{path}: CSV header violates the trial schema "
                        f"(missing={sorted(missing)}, unknown={sorted(unknown)})"
                    )
            for row in reader:
                line_no = reader.line_num
                lines += 1
                _parse_row(_csv_row_to_dict(row), line_no, batch)

    _check_bad_fraction(path, batch, lines)
    return batch


def record_to_dict(record: TrialRecord) -> Dict[str, Any]:
    """Canonical field order; absent optionals omitted."""
    data: Dict[str, Any] = {}
    for name in TRIAL_FIELDS:
        value = getattr(record, name)
        if value is None:
            continue
        if isinstance(value, Enum):
            value = value.value
        elif isinstance(value, tuple):
            value = list(value)
        data[name] = value
    return data


def write_trials(
    records: Iterable[TrialRecord],
    path: str | Path,
    fmt: TrialFormat | str = TrialFormat.JSONL,
) -> int:
    """Write records in the canonical format; returns the number written."""
    path = Path(path)
    fmt = TrialFormat(str(fmt).lower() if not isinstance(fmt, TrialFormat) else fmt)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    if fmt == TrialFormat.JSONL:
        with path.open("w", encoding="utf-8") as handle:
            for record in records:
                handle.write(json.dumps(record_to_dict(record), ensure_ascii=False) + "\n")
                count += 1
    else:
        with path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(TRIAL_FIELDS))
            writer.writeheader()
            for record in records:
                row = record_to_dict(record)
                row["gold_aliases"] = CSV_ALIAS_DELIMITER.join(row["gold_aliases"])
                if "correct" in row:
                    row["correct"] = "true" if row["correct"] else "false"
                writer.writerow(row)
                count += 1
    return count


def load_items(path: str | Path) -> List[ItemSchema]:
    """Read the items JSONL (item_id, question, gold_aliases)."""
    path = Path(path)
    if not path.is_file():
        raise TrialFileError(f"items file not found: {path}")
    items: List[ItemSchema] = []
    errors: List[LineError] = []
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                items.append(ItemSchema.model_validate_json(line))
            except ValidationError as e:
                errors.append(LineError(line_no, _format_validation_error(e)))
    if errors:
        raise TrialFileError(f"{path}: {len(errors)} invalid item lines", errors)
    return items


def find_duplicates(trials: Iterable[TrialRecord]) -> List[Tuple[str, str, str]]:
    """(model_id, condition, item_id) triples that occur more than once."""
    counts = Counter((t.model_id, t.condition.value, t.item_id) for t in trials)
    return sorted(key for key, n in counts.items() if n > 1)


def group_cells(trials: Iterable[TrialRecord]) -> List[Cell]:
    """
    One cell per (model_id, condition), sorted by model then condition.

    Trials are kept verbatim and in input order; duplicate items within a cell
    are kept and reported as warnings.
    """
    trials = list(trials)
    for model_id, condition, item_id in find_duplicates(trials):
        logger.warning(f"Duplicate trial for {model_id}/{condition} item {item_id}; keeping all copies")

    grouped: Dict[Tuple[str, str], List[TrialRecord]] = defaultdict(list)
    for trial in trials:
        grouped[(trial.model_id, trial.condition.value)].append(trial)

    return [
        Cell.from_trials(grouped[key], model_id=key[0], condition=Condition(key[1]))
        for key in sorted(grouped)
    ]
