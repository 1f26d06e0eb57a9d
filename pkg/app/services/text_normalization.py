"""Response sanitisation and answer normalisation.

Model responses are kept verbatim in the trial log; parsing works on a
sanitised copy. Answer matching uses the usual trivia normalisation: lowercase,
punctuation and articles removed, whitespace collapsed.
"""

from __future__ import annotations

import re
import string
from typing import List

# Control characters that break parsers and logs. Tabs and newlines are kept.
_CONTROL_CHARS_RE = re.compile(r"[\x00-\x08\x0b\x0c\x0e-\x1f]")

_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_PUNCTUATION_TABLE = str.maketrans("", "", string.punctuation)

DEFAULT_MAX_QUESTION_CHARS = 4_000


def sanitize_response(text: str) -> str:
    """
    Sanitize a model response before parsing.

    - Normalizes CRLF/CR -> LF.
    - Removes NUL/control chars.
    """
    if text is None:
        return ""
    text = text.replace("\r\n", "\n").replace("\r", "\n")
    return _CONTROL_CHARS_RE.sub("", text)


def validate_question(question: str, *, max_chars: int = DEFAULT_MAX_QUESTION_CHARS) -> str:
    """Validate an item question; raises ValueError on empty or oversized text."""
    question = sanitize_response(question)
    if not question.strip():
        raise ValueError("question must not be empty")
    if len(question) > max_chars:
        raise ValueError(f"question too long (max {max_chars} characters)")
    return question


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation and articles, collapse whitespace."""
    text = (text or "").lower().translate(_PUNCTUATION_TABLE)
    text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


def answer_tokens(text: str) -> List[str]:
    return normalize_answer(text).split()
