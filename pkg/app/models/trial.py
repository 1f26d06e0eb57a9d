"""Canonical trial records, cells and the 2x2 contingency table."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

# Binarisation threshold for the 2x2 table (inclusive on the HIGH side).
DEFAULT_BINARIZE_THRESHOLD = 0.50

# Ordinal categorical scale, lowest class first. Class k covers [k/10, (k+1)/10].
CATEGORICAL_CLASSES: Tuple[str, ...] = (
    "No chance",
    "Really unlikely",
    "Chances are slight",
    "Unlikely",
    "Less than even",
    "Better than even",
    "Likely",
    "Very good chance",
    "Highly likely",
    "Almost certain",
)


class TrialValidationError(ValueError):
    """Raised when a trial or cell violates its invariants."""
    pass


class Condition(str, Enum):
    """Elicitation condition."""
    NUM = "NUM"
    CAT = "CAT"


class ParseStatus(str, Enum):
    """Outcome of parsing one model response."""
    OK = "OK"
    CONFIDENCE_PARSE_FAIL = "CONFIDENCE_PARSE_FAIL"
    ANSWER_PARSE_FAIL = "ANSWER_PARSE_FAIL"


class ConfidenceBin(str, Enum):
    """Binarised confidence."""
    HIGH = "HIGH"
    LOW = "LOW"


def category_midpoint(class_index: int) -> float:
    """Map categorical class k (0..9) to its bin midpoint (k + 0.5) / 10."""
    if not 0 <= class_index < len(CATEGORICAL_CLASSES):
        raise TrialValidationError(f"categorical class out of range: {class_index}")
    return (class_index + 0.5) / len(CATEGORICAL_CLASSES)


@dataclass(frozen=True)
class TrialRecord:
    """One elicitation trial."""
    run_id: str
    model_id: str
    condition: Condition
    item_id: str
    question: str
    gold_aliases: Tuple[str, ...]
    raw_response: str
    parse_status: ParseStatus
    seed: int
    parsed_answer: Optional[str] = None
    correct: Optional[bool] = None
    confidence: Optional[float] = None
    confidence_raw: Optional[str] = None
    logprob_mean: Optional[float] = None
    trace_length: Optional[int] = None

    def __post_init__(self) -> None:
        # Coerce enum/str inputs and list aliases so records stay hashable.
        object.__setattr__(self, "condition", Condition(self.condition))
        object.__setattr__(self, "parse_status", ParseStatus(self.parse_status))
        object.__setattr__(self, "gold_aliases", tuple(self.gold_aliases))

        has_confidence = self.confidence is not None
        if has_confidence != (self.parse_status == ParseStatus.OK):
            raise TrialValidationError(
                f"trial {self.item_id}: confidence must be present iff parse_status is OK "
                f"(parse_status={self.parse_status.value}, confidence={self.confidence})"
            )
        if has_confidence and not 0.0 <= self.confidence <= 1.0:
            raise TrialValidationError(
                f"trial {self.item_id}: confidence {self.confidence} outside [0, 1]"
            )
        if self.trace_length is not None and self.trace_length < 0:
            raise TrialValidationError(
                f"trial {self.item_id}: trace_length must be nonnegative"
            )

    @property
    def parse_ok(self) -> bool:
        return self.parse_status == ParseStatus.OK

    @property
    def judged(self) -> bool:
        """Parse-ok with known correctness, i.e. counted in the contingency table."""
        return self.parse_ok and self.correct is not None


@dataclass(frozen=True)
class Cell:
    """All trials for one model x condition pair."""
    model_id: str
    condition: Condition
    trials: Tuple[TrialRecord, ...]
    n_total: int
    n_parse_ok: int
    n_correct: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "condition", Condition(self.condition))
        object.__setattr__(self, "trials", tuple(self.trials))
        for trial in self.trials:
            if trial.model_id != self.model_id or trial.condition != self.condition:
                raise TrialValidationError(
                    f"trial {trial.item_id} ({trial.model_id}/{trial.condition.value}) "
                    f"does not belong to cell {self.model_id}/{self.condition.value}"
                )
        expected = _count(self.trials)
        if (self.n_total, self.n_parse_ok, self.n_correct) != expected:
            raise TrialValidationError(
                f"cell {self.model_id}/{self.condition.value}: stored counts "
                f"{(self.n_total, self.n_parse_ok, self.n_correct)} do not match trials {expected}"
            )
        if self.n_parse_ok > self.n_total:
            raise TrialValidationError("n_parse_ok exceeds n_total")

    @classmethod
    def from_trials(
        cls,
        trials: Iterable[TrialRecord],
        model_id: Optional[str] = None,
        condition: Optional[Condition] = None,
    ) -> "Cell":
        """Build a cell with counts derived from its trials."""
        trials = tuple(trials)
        if model_id is None or condition is None:
            if not trials:
                raise TrialValidationError("empty cell needs explicit model_id and condition")
            model_id = model_id or trials[0].model_id
            condition = condition or trials[0].condition
        n_total, n_parse_ok, n_correct = _count(trials)
        return cls(
            model_id=model_id,
            condition=Condition(condition),
            trials=trials,
            n_total=n_total,
            n_parse_ok=n_parse_ok,
            n_correct=n_correct,
        )

    @property
    def key(self) -> Tuple[str, str]:
        return (self.model_id, self.condition.value)

    @property
    def parse_ok_trials(self) -> List[TrialRecord]:
        return [t for t in self.trials if t.parse_ok]

    @property
    def judged_trials(self) -> List[TrialRecord]:
        return [t for t in self.trials if t.judged]

    @property
    def confidence_parse_failures(self) -> int:
        return sum(1 for t in self.trials if t.parse_status == ParseStatus.CONFIDENCE_PARSE_FAIL)

    @property
    def unjudged_parse_ok(self) -> int:
        """Parse-ok trials without correctness; excluded from the 2x2 table."""
        return sum(1 for t in self.trials if t.parse_ok and t.correct is None)


def _count(trials: Sequence[TrialRecord]) -> Tuple[int, int, int]:
    n_parse_ok = sum(1 for t in trials if t.parse_ok)
    n_correct = sum(1 for t in trials if t.parse_ok and t.correct is True)
    return len(trials), n_parse_ok, n_correct


@dataclass(frozen=True)
class ContingencyTable:
    """2x2 counts: a high/correct, b high/incorrect, c low/correct, d low/incorrect."""
    a: int = 0
    b: int = 0
    c: int = 0
    d: int = 0

    def __post_init__(self) -> None:
        for name in ("a", "b", "c", "d"):
            if getattr(self, name) < 0:
                raise TrialValidationError(f"contingency count {name} must be nonnegative")

    @property
    def n(self) -> int:
        return self.a + self.b + self.c + self.d

    @property
    def n_high(self) -> int:
        return self.a + self.b

    @property
    def n_low(self) -> int:
        return self.c + self.d

    @property
    def n_correct(self) -> int:
        return self.a + self.c

    @property
    def n_incorrect(self) -> int:
        return self.b + self.d

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.a, self.b, self.c, self.d)


def binarize(confidence: float, threshold: float = DEFAULT_BINARIZE_THRESHOLD) -> ConfidenceBin:
    """HIGH iff confidence >= threshold."""
    if confidence is None or not 0.0 <= confidence <= 1.0:
        raise TrialValidationError(f"confidence {confidence} outside [0, 1]")
    return ConfidenceBin.HIGH if confidence >= threshold else ConfidenceBin.LOW


def build_contingency(
    cell: Cell | Iterable[TrialRecord],
    threshold: float = DEFAULT_BINARIZE_THRESHOLD,
) -> ContingencyTable:
    """Count judged parse-ok trials into a, b, c, d."""
    trials = cell.trials if isinstance(cell, Cell) else cell
    counts: Dict[Tuple[ConfidenceBin, bool], int] = defaultdict(int)
    for trial in trials:
        if not trial.judged:
            continue
        counts[(binarize(trial.confidence, threshold), bool(trial.correct))] += 1
    return ContingencyTable(
        a=counts[(ConfidenceBin.HIGH, True)],
        b=counts[(ConfidenceBin.HIGH, False)],
        c=counts[(ConfidenceBin.LOW, True)],
        d=counts[(ConfidenceBin.LOW, False)],
    )
