"""Parsing of elicited answers and confidence statements."""
from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

from app.models.trial import CATEGORICAL_CLASSES
from app.services.text_normalization import answer_tokens

logger = logging.getLogger(__name__)

# A standalone number of at most three integer digits, e.g. "95", "72.5".
_NUMBER = r"(?<![\w.])(\d{1,3}(?:\.\d+)?)(?!\d)"

_SUFFIX_MARKER_RE = re.compile(_NUMBER + r"\s*(?:%|percent\b|per\s+cent\b)", re.IGNORECASE)
_PREFIX_MARKER_RE = re.compile(
    r"confiden\w*\s*(?:level|score|rating)?\s*(?:is|of|at|=|:|-)?\s*"
    r"(?:about|around|approximately|roughly|~)?\s*" + _NUMBER,
    re.IGNORECASE,
)
_BARE_NUMBER_RE = re.compile(_NUMBER)

_ANSWER_LABEL_RE = re.compile(r"^\s*(?:final\s+)?answer\s*(?:is)?\s*[:\-]?\s*", re.IGNORECASE)
_REASONING_BLOCK_RE = re.compile(r"<(think|reasoning)>(.*?)</\1>", re.IGNORECASE | re.DOTALL)
_REASONING_CLOSE_RE = re.compile(r"</(?:think|reasoning)>", re.IGNORECASE)

_CATEGORY_PATTERNS = [
    (index, re.compile(r"\b" + r"\s+".join(map(re.escape, label.split())) + r"\b", re.IGNORECASE))
    for index, label in enumerate(CATEGORICAL_CLASSES)
]


@dataclass(frozen=True)
class ConfidenceMatch:
    """Extracted confidence with the verbatim token span it came from."""
    value: float
    raw: str
    start: int


def split_reasoning(text: str) -> Tuple[str, Optional[int]]:
    """
    Separate explicit reasoning blocks from the visible response.

    Returns:
        Tuple of (visible_text, trace_length) where trace_length is the
        character count of the reasoning content, or None without markers
    """
    blocks = list(_REASONING_BLOCK_RE.finditer(text))
    if blocks:
        trace = sum(len(m.group(2).strip()) for m in blocks)
        return _REASONING_BLOCK_RE.sub("", text).strip(), trace

    # Some servers drop the opening tag and emit only the closing one.
    close = _REASONING_CLOSE_RE.search(text)
    if close:
        return text[close.end():].strip(), len(text[:close.start()].strip())
    return text, None


def match_numeric_confidence(text: str) -> Optional[ConfidenceMatch]:
    """
    Locate a 0-100 confidence statement.

    The last in-range number adjacent to a confidence marker ("confidence",
    "%", "percent") wins. Without a marker, a single in-range number in the
    text is accepted; otherwise nothing is extracted.
    """
    text = text or ""
    candidates: List[Tuple[int, re.Match]] = []
    for pattern in (_SUFFIX_MARKER_RE, _PREFIX_MARKER_RE):
        for m in pattern.finditer(text):
            if 0.0 <= float(m.group(1)) <= 100.0:
                candidates.append((m.start(1), m))

    if candidates:
        # Last number wins; of the markers around it, the earliest bounds the answer.
        last = max(c[0] for c in candidates)
        m = min((c[1] for c in candidates if c[0] == last), key=lambda mm: mm.start())
        return ConfidenceMatch(value=float(m.group(1)) / 100.0, raw=m.group(0).strip(), start=m.start())

    bare = [m for m in _BARE_NUMBER_RE.finditer(text) if 0.0 <= float(m.group(1)) <= 100.0]
    if len(bare) == 1:
        m = bare[0]
        return ConfidenceMatch(value=float(m.group(1)) / 100.0, raw=m.group(0), start=m.start())
    return None


def parse_numeric_confidence(text: str) -> Optional[float]:
    """Numeric confidence normalised to [0, 1], or None (confidence parse failure)."""
    match = match_numeric_confidence(text)
    return match.value if match else None


def match_categorical_confidence(text: str) -> Optional[Tuple[int, str]]:
    """Return (class_index, matched_text) for exactly one class label, else None."""
    spans = []
    for index, pattern in _CATEGORY_PATTERNS:
        for m in pattern.finditer(text or ""):
            spans.append((m.start(), m.end(), index, m.group(0)))

    # Longest match wins where labels overlap.
    chosen = []
    for span in sorted(spans, key=lambda s: (-(s[1] - s[0]), s[0])):
        if all(span[1] <= c[0] or span[0] >= c[1] for c in chosen):
            chosen.append(span)

    classes = {c[2] for c in chosen}
    if len(classes) != 1:
        return None
    first = min(chosen, key=lambda c: c[0])
    return first[2], first[3]


def parse_categorical_confidence(text: str) -> Optional[int]:
    """Categorical class index 0..9, or None when absent or ambiguous."""
    match = match_categorical_confidence(text)
    return match[0] if match else None


def clean_answer(text: str) -> Optional[str]:
    """First non-empty line with any 'Answer:' label and trailing punctuation removed."""
    for line in (text or "").split("\n"):
        line = _ANSWER_LABEL_RE.sub("", line).strip().rstrip(".,;:!-(").strip()
        if line:
            return line
    return None


def extract_numeric_answer(text: str, match: Optional[ConfidenceMatch]) -> Optional[str]:
    """Answer text before the confidence marker, trimmed."""
    return clean_answer(text[: match.start] if match else text)


def judge_correctness(parsed_answer: str, gold_aliases: Sequence[str]) -> bool:
    """
    True iff the normalised answer equals an alias or contains one as a
    contiguous run of whole tokens.
    """
    answer = answer_tokens(parsed_answer)
    if not answer:
        return False
    for alias in gold_aliases:
        target = answer_tokens(alias)
        if not target or len(target) > len(answer):
            continue
        for i in range(len(answer) - len(target) + 1):
            if answer[i:i + len(target)] == target:
                return True
    return False


def extract_logprob_mean(
    token_logprobs: Optional[Sequence[Tuple[str, float]]],
    answer_span: Optional[str] = None,
) -> Optional[float]:
    """
    Length-normalised mean log-probability over the answer span.

    Tokens are aligned to the concatenated response text; those overlapping
    the first occurrence of ``answer_span`` are averaged. Without a locatable
    span the whole completion is averaged. Missing logprobs -> None.
    """
    if not token_logprobs:
        return None

    selected: List[float] = []
    if answer_span:
        text = "".join(token for token, _ in token_logprobs)
        position = text.find(answer_span)
        if position >= 0:
            span_end = position + len(answer_span)
            offset = 0
            for token, logprob in token_logprobs:
                token_end = offset + len(token)
                if token_end > position and offset < span_end:
                    selected.append(logprob)
                offset = token_end

    if not selected:
        selected = [logprob for _, logprob in token_logprobs]

    finite = [float(v) for v in selected if v is not None and math.isfinite(v)]
    if not finite:
        return None
    return sum(finite) / len(finite)
