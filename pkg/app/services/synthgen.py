"""Seeded synthetic cells with controlled accuracy, saturation and planted structure.

Trials are built from latent scores. Each trial gets an item difficulty
``d ~ N(0, 1)`` and a discrimination score ``w`` (correctness shifted by
``d'`` plus unit noise, standardised). Confidence is a monotone function of
``s = w - beta * d``:

- the top ``ceiling_mass`` share of scores receives sorted draws from
  ``[0.95, 1.0]``
- the rest receive sorted draws from the off-ceiling interval.

Planted quantities come from linear-Gaussian constructions on the same latents:

- target_auroc sets ``d'`` through the binormal relation AUROC = Phi(delta / sqrt(2)).
- planted_trace_rho correlates log trace length with ``w``, which is the part of
  confidence left after removing difficulty. This fixes the partial rank
  correlation of trace length and confidence given difficulty.
- planted_logprob_r2 sets the squared correlation of logprob with confidence.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from app.models.trial import (
    CATEGORICAL_CLASSES,
    Cell,
    Condition,
    ParseStatus,
    TrialRecord,
    category_midpoint,
)

logger = logging.getLogger(__name__)

CEILING = 0.95

# Weight of item difficulty in the confidence score.
DIFFICULTY_WEIGHT = 0.5

# log(trace_length) = TRACE_LOG_MEAN + TRACE_LOG_SCALE * latent
TRACE_LOG_MEAN = 6.0
TRACE_LOG_SCALE = 0.5

LOGPROB_MEAN = -2.0
LOGPROB_SCALE = 0.5


class GenSpecError(ValueError):
    """Raised for an out-of-range or self-contradictory generator spec."""
    pass


@dataclass(frozen=True)
class GenSpec:
    """Parameters of one synthetic cell."""
    n: int
    accuracy: float
    ceiling_mass: float
    off_ceiling_low: float = 0.5
    off_ceiling_high: float = 0.95
    min_off_ceiling: float = 0.0
    parse_fail_rate_correct: float = 0.0
    parse_fail_rate_incorrect: float = 0.0
    planted_logprob_r2: Optional[float] = None
    planted_trace_rho: Optional[float] = None
    target_auroc: Optional[float] = None
    resolution: Optional[float] = 0.01
    model_id: str = "synthetic"
    condition: Condition = Condition.NUM
    run_id: str = "synthetic"
    seed: int = 42

    def __post_init__(self) -> None:
        object.__setattr__(self, "condition", Condition(self.condition))
        if self.n < 1:
            raise GenSpecError(f"n must be >= 1, got {self.n}")
        for name in (
            "accuracy",
            "ceiling_mass",
            "min_off_ceiling",
            "parse_fail_rate_correct",
            "parse_fail_rate_incorrect",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise GenSpecError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 <= self.off_ceiling_low < self.off_ceiling_high <= 1.0:
            raise GenSpecError(
                "off-ceiling interval must satisfy 0 <= low < high <= 1, got "
                f"[{self.off_ceiling_low}, {self.off_ceiling_high})"
            )
        if self.ceiling_mass > 1.0 - self.min_off_ceiling:
            raise GenSpecError(
                f"ceiling_mass={self.ceiling_mass} leaves no room for the required "
                f"off-ceiling share {self.min_off_ceiling}"
            )
        if self.planted_logprob_r2 is not None and not 0.0 <= self.planted_logprob_r2 <= 1.0:
            raise GenSpecError(f"planted_logprob_r2 must lie in [0, 1], got {self.planted_logprob_r2}")
        if self.planted_trace_rho is not None and not -1.0 <= self.planted_trace_rho <= 1.0:
            raise GenSpecError(f"planted_trace_rho must lie in [-1, 1], got {self.planted_trace_rho}")
        if self.target_auroc is not None and not 0.0 < self.target_auroc < 1.0:
            raise GenSpecError(f"target_auroc must lie in (0, 1), got {self.target_auroc}")
        if self.resolution is not None:
            if not 0.0 < self.resolution <= 0.05:
                raise GenSpecError(f"resolution must lie in (0, 0.05], got {self.resolution}")
            if _grid(self.off_ceiling_low, self.off_ceiling_high, self.resolution).size == 0:
                raise GenSpecError("off-ceiling interval contains no value on the resolution grid")


@dataclass(frozen=True)
class SyntheticCell:
    """A generated cell with the latent item difficulty of every item."""
    cell: Cell
    difficulty: Dict[str, float]


def _grid(low: float, high: float, resolution: float) -> np.ndarray:
    """Grid points k * resolution with low <= value < high."""
    k_lo = math.ceil(low / resolution - 1e-9)
    k_hi = math.ceil(high / resolution - 1e-9)
    return np.round(np.arange(k_lo, k_hi) * resolution, 6)


def _standardise(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)


def discrimination_for_auroc(target_auroc: float, accuracy: float, beta: float = DIFFICULTY_WEIGHT) -> float:
    """
    Correctness shift d' that yields ``target_auroc`` for s = w - beta * d.

    Inverts AUROC = Phi(delta / sqrt(2)), where delta is the standardised class
    separation of s after w is rescaled to unit variance.
    """
    delta = math.sqrt(2.0) * float(stats.norm.ppf(target_auroc))
    p = accuracy
    denominator = 1.0 - delta * delta * beta * beta * p * (1.0 - p)
    if denominator <= 0.0:
        raise GenSpecError(
            f"target_auroc={target_auroc} is unreachable at accuracy={accuracy}"
        )
    return math.copysign(abs(delta) * math.sqrt((1.0 + beta * beta) / denominator), delta)


def _confidence_values(spec: GenSpec, score: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = spec.n
    m = int(round(spec.ceiling_mass * n))
    order = np.argsort(score, kind="stable")
    values = np.empty(n, dtype=float)

    if spec.resolution is None:
        ceiling = rng.uniform(CEILING, 1.0, size=m)
        off = rng.uniform(spec.off_ceiling_low, spec.off_ceiling_high, size=n - m)
    else:
        ceiling = rng.choice(_grid(CEILING, 1.0 + spec.resolution / 2, spec.resolution), size=m)
        off = rng.choice(_grid(spec.off_ceiling_low, spec.off_ceiling_high, spec.resolution), size=n - m)

    values[order[: n - m]] = np.sort(off)
    values[order[n - m:]] = np.sort(ceiling)
    return np.round(np.clip(values, 0.0, 1.0), 6)


def _pick(flags_from: np.ndarray, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Exactly round(rate * |group|) members of the group, chosen at random."""
    chosen = np.zeros(flags_from.size, dtype=bool)
    members = np.flatnonzero(flags_from)
    k = int(round(rate * members.size))
    if k:
        chosen[rng.choice(members, size=k, replace=False)] = True
    return chosen


def _percent(confidence: float) -> str:
    return f"{round(confidence * 100.0, 4):g}"


def generate_cell_with_latents(spec: GenSpec) -> SyntheticCell:
    """Generate a cell and return it with the latent item difficulties."""
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(7)]
    correctness_rng, difficulty_rng, score_rng, confidence_rng, failure_rng, trace_rng, logprob_rng = streams
    n = spec.n

    k = int(round(spec.accuracy * n))
    correct = np.zeros(n, dtype=bool)
    correct[correctness_rng.permutation(n)[:k]] = True

    difficulty = difficulty_rng.standard_normal(n)
    d_prime = 0.0
    if spec.target_auroc is not None and 0 < k < n:
        d_prime = discrimination_for_auroc(spec.target_auroc, k / n)
    w = _standardise(d_prime * correct + score_rng.standard_normal(n))
    score = w - DIFFICULTY_WEIGHT * difficulty

    confidence = _confidence_values(spec, score, confidence_rng)
    failed = _pick(correct, spec.parse_fail_rate_correct, failure_rng) | _pick(
        ~correct, spec.parse_fail_rate_incorrect, failure_rng
    )

    trace: Optional[np.ndarray] = None
    if spec.planted_trace_rho is not None:
        # Pearson correlation that gives the requested Spearman under normality.
        r = 2.0 * math.sin(math.pi * spec.planted_trace_rho / 6.0)
        v = r * w + math.sqrt(max(0.0, 1.0 - r * r)) * trace_rng.standard_normal(n)
        trace = np.round(np.exp(TRACE_LOG_MEAN + TRACE_LOG_SCALE * (v + DIFFICULTY_WEIGHT * difficulty)))

    logprob: Optional[np.ndarray] = None
    if spec.planted_logprob_r2 is not None:
        r = math.sqrt(spec.planted_logprob_r2)
        noise = logprob_rng.standard_normal(n)
        logprob = np.minimum(
            LOGPROB_MEAN + LOGPROB_SCALE * (r * _standardise(confidence) + math.sqrt(1.0 - r * r) * noise),
            0.0,
        )

    trials: List[TrialRecord] = []
    latents: Dict[str, float] = {}
    for i in range(n):
        item_id = f"synth-{i:04d}"
        latents[item_id] = float(difficulty[i])
        gold = f"answer {i}"
        answer = gold if correct[i] else f"wrong {i}"
        value = float(confidence[i])
        raw_confidence: Optional[str]

        if spec.condition == Condition.CAT:
            class_index = min(int(value * len(CATEGORICAL_CLASSES)), len(CATEGORICAL_CLASSES) - 1)
            value = category_midpoint(class_index)
            raw_confidence = CATEGORICAL_CLASSES[class_index]
            raw_response = f"{answer}\n{raw_confidence}"
        else:
            raw_confidence = f"Confidence: {_percent(value)}%"
            raw_response = f"Answer: {answer}. {raw_confidence}"

        if failed[i]:
            status = ParseStatus.CONFIDENCE_PARSE_FAIL
            value, raw_confidence = None, None
            raw_response = f"Answer: {answer}."
        else:
            status = ParseStatus.OK

        trials.append(TrialRecord(
            run_id=spec.run_id,
            model_id=spec.model_id,
            condition=spec.condition,
            item_id=item_id,
            question=f"Synthetic question {i}?",
            gold_aliases=(gold,),
            raw_response=raw_response,
            parse_status=status,
            seed=spec.seed,
            parsed_answer=answer,
            correct=bool(correct[i]),
            confidence=value,
            confidence_raw=raw_confidence,
            logprob_mean=None if logprob is None else round(float(logprob[i]), 6),
            trace_length=None if trace is None else int(trace[i]),
        ))

    cell = Cell.from_trials(trials, model_id=spec.model_id, condition=spec.condition)
    logger.debug(
        f"Generated {spec.model_id}/{spec.condition.value}: n={n} correct={k} "
        f"parse_fail={int(failed.sum())} seed={spec.seed}"
    )
    return SyntheticCell(cell=cell, difficulty=latents)


def generate_cell(spec: GenSpec) -> Cell:
    """Deterministic synthetic cell for a fixed spec and seed."""
    return generate_cell_with_latents(spec).cell


def generate_run(
    spec: GenSpec,
    models: int = 1,
    conditions: Sequence[Condition | str] = (Condition.NUM,),
) -> List[TrialRecord]:
    """
    Trials for ``models`` x ``conditions`` cells sharing one item set.

    Model k is named ``{model_id}-{k}``; every cell gets its own seed derived
    from ``spec.seed``, so the whole run is reproducible from one number.
    """
    if models < 1:
        raise GenSpecError("models must be >= 1")
    trials: List[TrialRecord] = []
    for k in range(models):
        model_id = spec.model_id if models == 1 else f"{spec.model_id}-{k + 1}"
        for j, condition in enumerate(conditions):
            cell_spec = replace(
                spec,
                model_id=model_id,
                condition=Condition(condition),
                seed=spec.seed + 1000 * k + j,
            )
            trials.extend(generate_cell(cell_spec).trials)
    return trials
