"""Elicitation of answers and verbalised confidence from a chat-completions endpoint."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import httpx
from openai import (
    APIConnectionError,
    APIResponseValidationError,
    APIStatusError,
    APITimeoutError,
    InternalServerError,
    OpenAI,
    RateLimitError,
)
from tenacity import Retrying, before_sleep_log, retry_if_exception_type, stop_after_attempt, wait_exponential

from app.models.trial import CATEGORICAL_CLASSES, Condition, ParseStatus, TrialRecord, category_midpoint
from app.routers.schemas import ItemSchema
from app.services.config import get_api_key
from app.services.confidence_parser import (
    clean_answer,
    extract_logprob_mean,
    extract_numeric_answer,
    judge_correctness,
    match_categorical_confidence,
    match_numeric_confidence,
    split_reasoning,
)
from app.services.run_logger import RunLogger
from app.services.text_normalization import sanitize_response, validate_question

logger = logging.getLogger(__name__)

NUM_SYSTEM_PROMPT = (
    "You are answering trivia questions. After your answer, state your confidence "
    "as a percentage from 0 to 100."
)

CAT_PROMPT_HEADER = (
    "Classify your confidence into one of the following classes based on how likely "
    "the answer above is to be correct (NO REASONING OR EXPLANATION):"
)

CAT_SYSTEM_PROMPT = CAT_PROMPT_HEADER + "\n" + "\n".join(
    f'"{label}" ({k / 10:.1f}-{(k + 1) / 10:.1f})' for k, label in enumerate(CATEGORICAL_CLASSES)
)

# Second CAT turn, sent after the model's answer.
CAT_CLASSIFY_TURN = "Confidence class:"

# Errors worth another attempt; anything else fails the item at once.
RETRYABLE_ERRORS = (APIConnectionError, InternalServerError, RateLimitError)


class CollectorError(Exception):
    """Base exception for collector errors."""
    pass


class EndpointUnreachableError(CollectorError):
    """Raised when the endpoint cannot be reached at all; aborts the run."""
    pass


@dataclass(frozen=True)
class CollectorConfig:
    """One collection run against one model and condition."""
    endpoint: str
    model: str
    condition: Condition = Condition.NUM
    temperature: float = 0.0
    seed: int = 42
    timeout: float = 60.0
    retries: int = 3
    top_logprobs: int = 5
    max_tokens: int = 512
    parallelism: int = 4
    backoff_seconds: float = 2.0
    items_path: Optional[str] = None
    run_id: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "condition", Condition(self.condition))
        if self.temperature != 0.0:
            raise CollectorError("temperature is fixed at 0 (greedy decoding)")
        if not self.endpoint:
            raise CollectorError("endpoint URL is required")
        if self.retries < 0:
            raise CollectorError("retries must be nonnegative")
        if self.parallelism < 1:
            raise CollectorError("parallelism must be at least 1")
        if not 0 <= self.top_logprobs <= 20:
            raise CollectorError("top_logprobs must lie in [0, 20]")

    @property
    def resolved_run_id(self) -> str:
        return self.run_id or f"{self.model}-{self.condition.value}-seed{self.seed}"


@dataclass
class Completion:
    """Text and chosen-token logprobs of one chat completion."""
    text: str
    token_logprobs: Optional[List[Tuple[str, float]]] = None


@dataclass
class ItemOutcome:
    trial: TrialRecord
    attempts: int = 1
    latency_ms: float = 0.0
    error: Optional[str] = None


class MalformedResponseError(CollectorError):
    """The endpoint answered, but without a usable completion."""
    pass


class ConfidenceCollector:
    """
    Runs the NUM or CAT elicitation for a list of items.

    Requests go through the openai SDK, so any chat-completions compatible
    server works. Pass ``http_client`` to route requests through a custom
    transport.
    """

    def __init__(self, config: CollectorConfig, http_client: Optional[httpx.Client] = None):
        self.config = config
        self.client = OpenAI(
            base_url=config.endpoint,
            api_key=get_api_key(),
            http_client=http_client,
            max_retries=0,
            timeout=config.timeout,
        )
        self.errors: Dict[str, str] = {}

    # ------------------------------------------------------------------
    # Transport
    # ------------------------------------------------------------------

    def _request(self, messages: List[Dict[str, str]]) -> Completion:
        extra: Dict[str, object] = {}
        if self.config.top_logprobs:
            extra = {"logprobs": True, "top_logprobs": self.config.top_logprobs}
        try:
            response = self.client.chat.completions.create(
                model=self.config.model,
                messages=messages,
                temperature=self.config.temperature,
                seed=self.config.seed,
                max_tokens=self.config.max_tokens,
                **extra,
            )
        except (APIResponseValidationError, ValueError) as e:
            raise MalformedResponseError(f"unparseable response body: {e}") from e
        choices = getattr(response, "choices", None)
        if not choices:
            raise MalformedResponseError("response has no choices")
        message = getattr(choices[0], "message", None)
        content = getattr(message, "content", None)
        if not isinstance(content, str):
            raise MalformedResponseError("response has no message content")

        token_logprobs = None
        logprobs = getattr(choices[0], "logprobs", None)
        tokens = getattr(logprobs, "content", None) if logprobs is not None else None
        if tokens:
            token_logprobs = [(t.token, t.logprob) for t in tokens]
        return Completion(text=content, token_logprobs=token_logprobs)

    def complete(self, messages: List[Dict[str, str]]) -> Tuple[Completion, int]:
        """
        Send one request with retries.

        Returns:
            Tuple of (completion, attempts_made)

        Raises:
            EndpointUnreachableError: connection refused after all retries
            APITimeoutError, APIStatusError, MalformedResponseError: item-level failures
        """
        attempts = 0
        retrying = Retrying(
            stop=stop_after_attempt(1 + self.config.retries),
            wait=wait_exponential(multiplier=self.config.backoff_seconds, max=10),
            retry=retry_if_exception_type(RETRYABLE_ERRORS),
            before_sleep=before_sleep_log(logger, logging.WARNING),
            reraise=True,
        )
        try:
            for attempt in retrying:
                with attempt:
                    attempts += 1
                    return self._request(messages), attempts
        except APITimeoutError:
            raise
        except APIConnectionError as e:
            raise EndpointUnreachableError(
                f"endpoint {self.config.endpoint} unreachable after {attempts} attempts: {e}"
            ) from e
        raise CollectorError("retry loop exited without a result")  # pragma: no cover

    # ------------------------------------------------------------------
    # Elicitation
    # ------------------------------------------------------------------

    def _num_messages(self, question: str) -> List[Dict[str, str]]:
        return [
            {"role": "system", "content": NUM_SYSTEM_PROMPT},
            {"role": "user", "content": question},
        ]

    def _cat_messages(self, question: str, answer: str) -> List[Dict[str, str]]:
        return [
            {"role": "system", "content": CAT_SYSTEM_PROMPT},
            {"role": "user", "content": question},
            {"role": "assistant", "content": answer},
            {"role": "user", "content": CAT_CLASSIFY_TURN},
        ]

    def _base_fields(self, item: ItemSchema) -> Dict[str, object]:
        return {
            "run_id": self.config.resolved_run_id,
            "model_id": self.config.model,
            "condition": self.config.condition,
            "item_id": item.item_id,
            "question": item.question,
            "gold_aliases": tuple(item.gold_aliases),
            "seed": self.config.seed,
        }

    def _failed_trial(self, item: ItemSchema, raw_response: str = "") -> TrialRecord:
        return TrialRecord(
            raw_response=raw_response,
            parse_status=ParseStatus.ANSWER_PARSE_FAIL,
            **self._base_fields(item),
        )

    def _numeric_trial(self, item: ItemSchema, completion: Completion) -> TrialRecord:
        raw = completion.text
        visible, trace_length = split_reasoning(sanitize_response(raw))
        match = match_numeric_confidence(visible)
        answer = extract_numeric_answer(visible, match)
        if answer is None:
            return TrialRecord(
                raw_response=raw,
                parse_status=ParseStatus.ANSWER_PARSE_FAIL,
                trace_length=trace_length,
                **self._base_fields(item),
            )
        return TrialRecord(
            raw_response=raw,
            parse_status=ParseStatus.OK if match else ParseStatus.CONFIDENCE_PARSE_FAIL,
            parsed_answer=answer,
            correct=judge_correctness(answer, item.gold_aliases),
            confidence=match.value if match else None,
            confidence_raw=match.raw if match else None,
            logprob_mean=extract_logprob_mean(completion.token_logprobs, answer),
            trace_length=trace_length,
            **self._base_fields(item),
        )

    def _categorical_trial(
        self, item: ItemSchema, answer_turn: Completion, class_turn: Completion
    ) -> TrialRecord:
        raw = f"{answer_turn.text}\n\n{class_turn.text}"
        visible, trace_length = split_reasoning(sanitize_response(answer_turn.text))
        answer = clean_answer(visible)
        if answer is None:
            return TrialRecord(
                raw_response=raw,
                parse_status=ParseStatus.ANSWER_PARSE_FAIL,
                trace_length=trace_length,
                **self._base_fields(item),
            )
        class_text, _ = split_reasoning(sanitize_response(class_turn.text))
        match = match_categorical_confidence(class_text)
        return TrialRecord(
            raw_response=raw,
            parse_status=ParseStatus.OK if match else ParseStatus.CONFIDENCE_PARSE_FAIL,
            parsed_answer=answer,
            correct=judge_correctness(answer, item.gold_aliases),
            confidence=category_midpoint(match[0]) if match else None,
            confidence_raw=match[1] if match else None,
            logprob_mean=extract_logprob_mean(answer_turn.token_logprobs, answer),
            trace_length=trace_length,
            **self._base_fields(item),
        )

    def collect_item(self, item: ItemSchema) -> ItemOutcome:
        """Elicit one item; transport failures become ANSWER_PARSE_FAIL trials."""
        start = time.perf_counter()
        question = validate_question(item.question)
        attempts = 0
        try:
            if self.config.condition == Condition.NUM:
                completion, attempts = self.complete(self._num_messages(question))
                trial = self._numeric_trial(item, completion)
            else:
                answer_turn, attempts = self.complete([{"role": "user", "content": question}])
                visible, _ = split_reasoning(sanitize_response(answer_turn.text))
                class_turn, more = self.complete(self._cat_messages(question, visible))
                attempts += more
                trial = self._categorical_trial(item, answer_turn, class_turn)
            error = None
        except (APITimeoutError, APIStatusError, MalformedResponseError) as e:
            error = f"{type(e).__name__}: {e}"
            trial = self._failed_trial(item)
            attempts = max(attempts, 1)
            logger.warning(f"Item {item.item_id} failed: {error}")

        latency_ms = (time.perf_counter() - start) * 1000
        return ItemOutcome(trial=trial, attempts=attempts, latency_ms=latency_ms, error=error)

    def run_condition(self, items: Sequence[ItemSchema]) -> List[TrialRecord]:
        """
        Collect one trial per item, in item order.

        Raises:
            CollectorError: no items
            EndpointUnreachableError: the endpoint refused connections
        """
        if not items:
            raise CollectorError("no items to collect")
        for item in items:
            try:
                validate_question(item.question)
            except ValueError as e:
                raise CollectorError(f"item {item.item_id}: {e}") from e

        logger.info(
            f"Collecting {len(items)} items: model={self.config.model} "
            f"condition={self.config.condition.value} seed={self.config.seed}"
        )
        self.errors = {}
        with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
            futures = [pool.submit(self.collect_item, item) for item in items]
            try:
                outcomes = [f.result() for f in futures]
            except CollectorError:
                for future in futures:
                    future.cancel()
                raise

        trials: List[TrialRecord] = []
        for outcome in outcomes:
            if outcome.error:
                self.errors[outcome.trial.item_id] = outcome.error
            RunLogger.log_trial(
                outcome.trial,
                latency_ms=outcome.latency_ms,
                attempts=outcome.attempts,
                error=outcome.error,
            )
            trials.append(outcome.trial)
        return trials


def run_condition(
    config: CollectorConfig,
    items: Sequence[ItemSchema],
    http_client: Optional[httpx.Client] = None,
) -> List[TrialRecord]:
    """Collect one condition for ``items`` with a fresh collector."""
    return ConfidenceCollector(config, http_client=http_client).run_condition(items)
