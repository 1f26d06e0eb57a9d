"""Validity screening for verbalised confidence signals.

Implements the ordered screening sequence:

1. Degeneracy pre-check (< 3 distinct values or > 95% one-sided) -> Invalid
2. Cell counts (any 2x2 cell < 5) -> Insufficient
3. TRIN >= 0.95 -> structural warning only
4. Fp >= 0.50 with Wilson lower bound > 0.40 -> Invalid
5. L >= 0.95 with Wilson lower bound > 0.90 -> Invalid
6. RBS > 0.05 with interval excluding zero -> Invalid
7. Point-biserial r(confidence, correct) -> reported, no action

A point threshold violated at steps 4-6 whose interval condition is unmet
yields Indeterminate. The first decisive step fixes the tier; every step is
still evaluated and recorded in the audit trail.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from app.models.trial import Cell, ContingencyTable, TrialRecord, build_contingency
from app.services.config import ScreeningConfig

logger = logging.getLogger(__name__)

# Distinct-value counting ignores float noise below this many decimals.
DISTINCT_DECIMALS = 6


class ScreeningError(Exception):
    """Base exception for screening errors."""
    pass


class InsufficientDataError(ScreeningError):
    """Raised when a statistic has no data to work with (route to INSUFFICIENT)."""
    pass


class Tier(str, Enum):
    """Validity tier."""
    INVALID = "INVALID"
    INDETERMINATE = "INDETERMINATE"
    VALID = "VALID"
    INSUFFICIENT = "INSUFFICIENT"


class StepOutcome(str, Enum):
    """Outcome of one screening step."""
    PASS = "pass"
    VIOLATION = "violation"
    INDETERMINATE = "indeterminate"
    WARNING = "warning"
    INSUFFICIENT = "insufficient"
    REPORTED = "reported"
    NOT_EVALUABLE = "not_evaluable"


@dataclass(frozen=True)
class IndexEstimate:
    """Point estimate with interval; value None means undefined (zero denominator)."""
    value: Optional[float]
    lower: Optional[float] = None
    upper: Optional[float] = None
    method: str = "wilson"

    @property
    def defined(self) -> bool:
        return self.value is not None


UNDEFINED = IndexEstimate(value=None, method="undefined")


@dataclass(frozen=True)
class PointBiserial:
    """Pearson correlation between confidence and the 0/1 correctness indicator."""
    r: float
    p_value: float
    lower: Optional[float]
    upper: Optional[float]
    n: int


@dataclass(frozen=True)
class ValidityIndices:
    """L, Fp, RBS, TRIN with intervals, plus the point-biserial diagnostic."""
    table: ContingencyTable
    L: IndexEstimate
    Fp: IndexEstimate
    RBS: IndexEstimate
    TRIN: IndexEstimate
    r_pb: Optional[PointBiserial] = None


@dataclass(frozen=True)
class DegeneracyVerdict:
    """Result of the degeneracy pre-check."""
    degenerate: bool
    distinct_values: int
    max_share: float
    n: int
    triggers: Tuple[str, ...] = ()


@dataclass(frozen=True)
class ScreeningStep:
    """One audited step of the ordered sequence."""
    number: int
    name: str
    observed: Optional[float]
    threshold: str
    outcome: StepOutcome
    detail: str = ""


@dataclass(frozen=True)
class ScreeningReport:
    """Full screening outcome for one cell."""
    tier: Tier
    degenerate: bool
    trin_warning: bool
    indices: ValidityIndices
    steps: Tuple[ScreeningStep, ...]
    decisive_step: Optional[int] = None
    degeneracy: Optional[DegeneracyVerdict] = None
    excluded_by_parse_rate: bool = False
    parse_failure_rate: Optional[float] = None
    unjudged_trials: int = 0
    notes: Tuple[str, ...] = field(default_factory=tuple)


def wilson_interval(k: int, n: int, level: float = 0.95) -> Tuple[float, float]:
    """
    Wilson score interval for a binomial proportion k/n.

    Args:
        k: Number of successes
        n: Number of trials (must be >= 1)
        level: Confidence level in (0, 1)

    Returns:
        Tuple of (lower, upper), clipped to [0, 1] and bracketing k/n
    """
    if n < 1:
        raise InsufficientDataError("Wilson interval needs n >= 1")
    if not 0 <= k <= n:
        raise ScreeningError(f"Wilson interval needs 0 <= k <= n, got k={k}, n={n}")
    if not 0.0 < level < 1.0:
        raise ScreeningError(f"confidence level must lie in (0, 1), got {level}")

    z = float(stats.norm.ppf((1.0 + level) / 2.0))
    p_hat = k / n
    z2 = z * z

    denominator = 1.0 + z2 / n
    centre = (p_hat + z2 / (2.0 * n)) / denominator
    halfwidth = (z / denominator) * math.sqrt(p_hat * (1.0 - p_hat) / n + z2 / (4.0 * n * n))

    lower = max(0.0, centre - halfwidth)
    upper = min(1.0, centre + halfwidth)
    # Rounding at the boundaries must not push the bounds past the estimate.
    return min(lower, p_hat), max(upper, p_hat)


def _proportion(k: int, n: int, level: float) -> IndexEstimate:
    if n == 0:
        return UNDEFINED
    lower, upper = wilson_interval(k, n, level)
    return IndexEstimate(value=k / n, lower=lower, upper=upper, method="wilson")


def assess_degeneracy(cell: Cell, config: Optional[ScreeningConfig] = None) -> DegeneracyVerdict:
    """Evaluate both degeneracy triggers over parse-ok confidences."""
    config = config or ScreeningConfig()
    confidences = [t.confidence for t in cell.trials if t.parse_ok]
    if not confidences:
        raise InsufficientDataError(
            f"cell {cell.model_id}/{cell.condition.value} has no parse-ok trials"
        )

    n = len(confidences)
    distinct = len({round(c, DISTINCT_DECIMALS) for c in confidences})
    n_high = sum(1 for c in confidences if c >= config.binarize_threshold)
    max_share = max(n_high, n - n_high) / n

    triggers: List[str] = []
    if distinct < config.degeneracy_min_distinct:
        triggers.append(f"distinct_values={distinct} < {config.degeneracy_min_distinct}")
    if max_share > config.degeneracy_max_share:
        triggers.append(f"single_category_share={max_share:.4f} > {config.degeneracy_max_share}")

    return DegeneracyVerdict(
        degenerate=bool(triggers),
        distinct_values=distinct,
        max_share=max_share,
        n=n,
        triggers=tuple(triggers),
    )


def degeneracy_check(cell: Cell, config: Optional[ScreeningConfig] = None) -> Optional[DegeneracyVerdict]:
    """Return the degenerate verdict if either trigger fires, else None."""
    verdict = assess_degeneracy(cell, config)
    return verdict if verdict.degenerate else None


def _rbs_bootstrap(
    table: ContingencyTable,
    point: float,
    resamples: int,
    seed: int,
    level: float,
) -> IndexEstimate:
    """Percentile bootstrap for RBS; case resampling of trials is multinomial on the table."""
    counts = np.array(table.as_tuple(), dtype=float)
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(table.n, counts / counts.sum(), size=resamples)
    a, b, c, d = draws.T.astype(float)

    with np.errstate(divide="ignore", invalid="ignore"):
        rbs = c / (a + c) - d / (b + d)
    rbs = rbs[np.isfinite(rbs)]
    if rbs.size == 0:
        return IndexEstimate(value=point, method="bootstrap")

    alpha = 1.0 - level
    lower, upper = np.percentile(rbs, [100.0 * alpha / 2.0, 100.0 * (1.0 - alpha / 2.0)])
    return IndexEstimate(
        value=point,
        lower=min(float(lower), point),
        upper=max(float(upper), point),
        method="bootstrap",
    )


def compute_indices(
    table: ContingencyTable,
    config: Optional[ScreeningConfig] = None,
    trials: Optional[Sequence[TrialRecord]] = None,
) -> ValidityIndices:
    """
    Compute L, Fp, RBS and TRIN from a contingency table.

    Any index with a zero denominator is returned undefined. When judged trials
    are passed, the point-biserial diagnostic is attached as well.
    """
    config = config or ScreeningConfig()
    level = config.wilson_level

    L = _proportion(table.b, table.n_incorrect, level)
    Fp = _proportion(table.c, table.n_correct, level)
    TRIN = _proportion(max(table.n_high, table.n_low), table.n, level)

    if L.defined and Fp.defined:
        rbs_point = table.c / table.n_correct - table.d / table.n_incorrect
        RBS = _rbs_bootstrap(
            table,
            rbs_point,
            resamples=config.bootstrap_resamples,
            seed=config.bootstrap_seed,
            level=level,
        )
    else:
        RBS = UNDEFINED

    r_pb = point_biserial(trials) if trials is not None else None
    return ValidityIndices(table=table, L=L, Fp=Fp, RBS=RBS, TRIN=TRIN, r_pb=r_pb)


def point_biserial(trials: Sequence[TrialRecord], level: float = 0.95) -> Optional[PointBiserial]:
    """
    Point-biserial correlation between confidence and correctness.

    Returns None (undefined diagnostic) unless there are >= 3 judged trials,
    both correctness classes, and nonzero confidence variance.
    """
    # Sorted so floating-point sums do not depend on trial order.
    judged = sorted((t for t in trials if t.judged), key=lambda t: (t.confidence, bool(t.correct)))
    n = len(judged)
    if n < 3:
        return None

    confidence = np.array([t.confidence for t in judged], dtype=float)
    correct = np.array([1.0 if t.correct else 0.0 for t in judged])
    if correct.min() == correct.max() or np.ptp(confidence) == 0.0:
        return None

    r = float(np.clip(np.corrcoef(confidence, correct)[0, 1], -1.0, 1.0))
    if abs(r) >= 1.0:
        return PointBiserial(r=r, p_value=0.0, lower=r, upper=r, n=n)

    t_stat = r * math.sqrt((n - 2) / (1.0 - r * r))
    p_value = float(2.0 * stats.t.sf(abs(t_stat), n - 2))

    lower = upper = None
    if n > 3:
        z = math.atanh(r)
        se = 1.0 / math.sqrt(n - 3)
        z_crit = float(stats.norm.ppf((1.0 + level) / 2.0))
        lower, upper = math.tanh(z - z_crit * se), math.tanh(z + z_crit * se)

    return PointBiserial(r=r, p_value=p_value, lower=lower, upper=upper, n=n)


def _threshold_step(
    number: int,
    name: str,
    estimate: IndexEstimate,
    threshold: str,
    point_violated: Callable[[float], bool],
    bound_met: Callable[[IndexEstimate], bool],
) -> ScreeningStep:
    """Paired point/interval threshold: both met -> violation, point only -> indeterminate."""
    if not estimate.defined:
        return ScreeningStep(number, name, None, threshold, StepOutcome.NOT_EVALUABLE, "zero denominator")
    if not point_violated(estimate.value):
        return ScreeningStep(number, name, estimate.value, threshold, StepOutcome.PASS)
    if estimate.lower is not None and bound_met(estimate):
        return ScreeningStep(
            number, name, estimate.value, threshold, StepOutcome.VIOLATION,
            f"point threshold violated; interval [{estimate.lower:.4f}, {estimate.upper:.4f}] meets bound",
        )
    bounds = (
        f"[{estimate.lower:.4f}, {estimate.upper:.4f}]" if estimate.lower is not None else "unavailable"
    )
    return ScreeningStep(
        number, name, estimate.value, threshold, StepOutcome.INDETERMINATE,
        f"point threshold violated; interval {bounds} includes valid values",
    )


def _classify(steps: Sequence[ScreeningStep]) -> Tuple[Tier, Optional[int]]:
    """The first decisive step fixes the tier."""
    for step in steps:
        if step.number == 1 and step.outcome == StepOutcome.VIOLATION:
            return Tier.INVALID, 1
        if step.number == 2 and step.outcome == StepOutcome.INSUFFICIENT:
            return Tier.INSUFFICIENT, 2
        if step.number in (4, 5, 6) and step.outcome == StepOutcome.VIOLATION:
            return Tier.INVALID, step.number

    for step in steps:
        if step.outcome == StepOutcome.INDETERMINATE:
            return Tier.INDETERMINATE, step.number
    return Tier.VALID, None


def screen_cell(cell: Cell, config: Optional[ScreeningConfig] = None) -> ScreeningReport:
    """
    Run the ordered screening sequence on one cell.

    Args:
        cell: Model x condition cell
        config: Protocol thresholds (published defaults when omitted)

    Returns:
        ScreeningReport with tier, indices and the full step audit trail
    """
    config = config or ScreeningConfig()

    parse_failure_rate = (
        cell.confidence_parse_failures / cell.n_total if cell.n_total else None
    )
    excluded = parse_failure_rate is not None and parse_failure_rate > config.exclusion_threshold

    table = build_contingency(cell, config.binarize_threshold)
    indices = compute_indices(table, config=config, trials=cell.judged_trials)
    steps: List[ScreeningStep] = []

    # 1. Degeneracy pre-check
    degeneracy: Optional[DegeneracyVerdict]
    try:
        degeneracy = assess_degeneracy(cell, config)
    except InsufficientDataError:
        degeneracy = None
    degeneracy_threshold = (
        f"distinct < {config.degeneracy_min_distinct} or one-sided share > {config.degeneracy_max_share}"
    )
    if degeneracy is None:
        steps.append(ScreeningStep(
            1, "degeneracy", None, degeneracy_threshold, StepOutcome.NOT_EVALUABLE, "no parse-ok trials",
        ))
    else:
        steps.append(ScreeningStep(
            1, "degeneracy", degeneracy.max_share, degeneracy_threshold,
            StepOutcome.VIOLATION if degeneracy.degenerate else StepOutcome.PASS,
            "; ".join(degeneracy.triggers) or f"distinct_values={degeneracy.distinct_values}",
        ))

    # 2. Cell counts
    smallest = min(table.as_tuple())
    steps.append(ScreeningStep(
        2, "cell_counts", float(smallest), f"every cell >= {config.min_cell_count}",
        StepOutcome.INSUFFICIENT if smallest < config.min_cell_count else StepOutcome.PASS,
        f"(a, b, c, d) = {table.as_tuple()}",
    ))

    # 3. TRIN
    trin_warning = indices.TRIN.defined and indices.TRIN.value >= config.trin_warning
    if not indices.TRIN.defined:
        steps.append(ScreeningStep(
            3, "TRIN", None, f">= {config.trin_warning} warns", StepOutcome.NOT_EVALUABLE, "empty table",
        ))
    else:
        steps.append(ScreeningStep(
            3, "TRIN", indices.TRIN.value, f">= {config.trin_warning} warns",
            StepOutcome.WARNING if trin_warning else StepOutcome.PASS,
            "structural warning; does not trigger Invalid alone" if trin_warning else "",
        ))

    # 4. Fp
    steps.append(_threshold_step(
        4, "Fp", indices.Fp,
        f"Fp >= {config.fp_threshold} with Wilson lower > {config.fp_bound}",
        lambda v: v >= config.fp_threshold,
        lambda e: e.lower > config.fp_bound,
    ))

    # 5. L
    steps.append(_threshold_step(
        5, "L", indices.L,
        f"L >= {config.l_threshold} with Wilson lower > {config.l_bound}",
        lambda v: v >= config.l_threshold,
        lambda e: e.lower > config.l_bound,
    ))

    # 6. RBS
    steps.append(_threshold_step(
        6, "RBS", indices.RBS,
        f"RBS > {config.rbs_threshold} with interval excluding zero",
        lambda v: v > 0.0 and v > config.rbs_threshold,
        lambda e: e.lower > 0.0,
    ))

    # 7. Point-biserial diagnostic
    r_pb = indices.r_pb
    if r_pb is None:
        steps.append(ScreeningStep(
            7, "point_biserial", None, "diagnostic only", StepOutcome.NOT_EVALUABLE,
            "needs >= 3 judged trials, both correctness classes and confidence variance",
        ))
    else:
        interval = (
            f"95% CI [{r_pb.lower:.4f}, {r_pb.upper:.4f}]" if r_pb.lower is not None else "CI undefined"
        )
        steps.append(ScreeningStep(
            7, "point_biserial", r_pb.r, "diagnostic only", StepOutcome.REPORTED,
            f"p={r_pb.p_value:.4g}; {interval}",
        ))

    tier, decisive = _classify(steps)
    notes: List[str] = []
    if cell.unjudged_parse_ok:
        notes.append(f"{cell.unjudged_parse_ok} parse-ok trials lack correctness and were not tabulated")
    if cell.condition.value == "CAT":
        notes.append("categorical confidence normalised to class midpoints (k + 0.5) / 10")

    logger.debug(
        f"Screened {cell.model_id}/{cell.condition.value}: tier={tier.value} decisive_step={decisive}"
    )
    return ScreeningReport(
        tier=tier,
        degenerate=bool(degeneracy and degeneracy.degenerate),
        trin_warning=trin_warning,
        indices=indices,
        steps=tuple(steps),
        decisive_step=decisive,
        degeneracy=degeneracy,
        excluded_by_parse_rate=excluded,
        parse_failure_rate=parse_failure_rate,
        unjudged_trials=cell.unjudged_parse_ok,
        notes=tuple(notes),
    )
