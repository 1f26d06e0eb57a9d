"""Non-screening statistics for one model x condition cell.

Every statistic returns ``None`` when its preconditions are unmet, so a single
degenerate cell never aborts a run. All resampling is driven by explicit seeds.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import numpy.linalg as la
from scipy import stats

from app.models.trial import Cell, Condition, ParseStatus, TrialRecord
from app.services.config import ScreeningConfig
from app.services.screening import Tier, screen_cell

logger = logging.getLogger(__name__)

# Bootstrap resamples that draw a single correctness class are redrawn this many times.
MAX_REDRAW_ROUNDS = 50

# Ridge CV needs at least this many parse-ok trials carrying a logprob.
MIN_RIDGE_TRIALS = 10


@dataclass(frozen=True)
class CorrelationResult:
    """Rank correlation with a two-sided p-value."""
    rho: float
    p_value: float
    n: int


@dataclass(frozen=True)
class Auroc2Interval:
    """AUROC2 point estimate with a percentile bootstrap interval."""
    point: float
    lower: float
    upper: float
    resamples: int
    unresolved_resamples: int = 0
    flagged: bool = False
    flag_reasons: Tuple[str, ...] = ()

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class RidgeCVResult:
    """Cross-validated R^2 of ridge regression of confidence on logprob."""
    mean_r2: Optional[float]
    per_fold: Tuple[Optional[float], ...]
    degenerate_folds: int
    n: int


@dataclass(frozen=True)
class SplitHalfResult:
    """Tiers of two seeded random halves of a cell."""
    seed: int
    tier_a: Tier
    tier_b: Tier

    @property
    def agree(self) -> bool:
        return self.tier_a == self.tier_b


@dataclass(frozen=True)
class SplitHalfSummary:
    results: Tuple[SplitHalfResult, ...] = ()

    @property
    def agreement(self) -> Optional[float]:
        if not self.results:
            return None
        return sum(1 for r in self.results if r.agree) / len(self.results)


@dataclass(frozen=True)
class MarDiagnostic:
    """Confidence-parse-failure rates split by correctness."""
    fail_rate_correct: Optional[float]
    fail_rate_incorrect: Optional[float]
    n_correct: int
    n_incorrect: int


@dataclass(frozen=True)
class MetricsReport:
    """All non-screening statistics for one cell."""
    n_total: int
    n_parse_ok: int
    n_correct: int
    accuracy: Optional[float]
    parse_rate: Optional[float]
    ceiling_rate: Optional[float]
    ceiling_rate_sensitivity: Optional[float]
    auroc2: Optional[Auroc2Interval]
    ridge: Optional[RidgeCVResult]
    spearman_difficulty: Optional[CorrelationResult]
    trace_corr: Optional[CorrelationResult]
    partial_trace_corr: Optional[CorrelationResult]
    split_half: SplitHalfSummary
    mar: MarDiagnostic
    notes: Tuple[str, ...] = field(default_factory=tuple)


# ---------------------------------------------------------------------------
# Ceiling rates and accuracy
# ---------------------------------------------------------------------------

def ceiling_rate(cell: Cell, threshold: float = 0.95) -> Optional[float]:
    """Fraction of parse-ok trials with confidence >= threshold."""
    confidences = [t.confidence for t in cell.trials if t.parse_ok]
    if not confidences:
        return None
    return sum(1 for c in confidences if c >= threshold) / len(confidences)


def ceiling_rate_sensitivity(cell: Cell, threshold: float = 0.95) -> Optional[float]:
    """
    Ceiling rate with confidence-parse failures coded as non-variable responses.

    Failed parses are pooled with the ceiling mass: numerator = parse-ok trials
    at or above threshold plus confidence-parse failures; denominator = every
    trial in the cell.
    """
    if cell.n_total == 0:
        return None
    at_ceiling = sum(1 for t in cell.trials if t.parse_ok and t.confidence >= threshold)
    return (at_ceiling + cell.confidence_parse_failures) / cell.n_total


def accuracy(cell: Cell) -> Optional[float]:
    """Fraction correct among judged parse-ok trials."""
    judged = cell.judged_trials
    if not judged:
        return None
    return sum(1 for t in judged if t.correct) / len(judged)


# ---------------------------------------------------------------------------
# Type-2 discrimination
# ---------------------------------------------------------------------------

def _judged_arrays(trials: Iterable[TrialRecord]) -> Tuple[np.ndarray, np.ndarray]:
    judged = [t for t in trials if t.judged]
    confidence = np.array([t.confidence for t in judged], dtype=float)
    correct = np.array([bool(t.correct) for t in judged], dtype=bool)
    return confidence, correct


def _auroc_from_arrays(confidence: np.ndarray, correct: np.ndarray) -> Optional[float]:
    n1 = int(correct.sum())
    n0 = int(correct.size - n1)
    if n1 == 0 or n0 == 0:
        return None
    # Mid-ranks make the rank-sum statistic count ties as one half.
    ranks = stats.rankdata(confidence)
    u = float(ranks[correct].sum()) - n1 * (n1 + 1) / 2.0
    return u / (n1 * n0)


def auroc2(trials: Iterable[TrialRecord]) -> Optional[float]:
    """
    Type-2 AUROC in Mann-Whitney form.

    Probability that a correct trial carries strictly higher confidence than an
    incorrect one, ties counted one half. None for single-class input.
    """
    confidence, correct = _judged_arrays(trials)
    return _auroc_from_arrays(confidence, correct)


def auroc2_bootstrap(
    trials: Iterable[TrialRecord],
    resamples: int = 2000,
    seed: int = 42,
    level: float = 0.95,
    wide_width: float = 0.20,
) -> Optional[Auroc2Interval]:
    """
    Percentile bootstrap interval for AUROC2 from seeded case resamples.

    Resamples that contain a single correctness class are redrawn; any still
    single-class after MAX_REDRAW_ROUNDS are dropped and the interval flagged.
    Intervals wider than ``wide_width`` are flagged as unreliable.
    """
    confidence, correct = _judged_arrays(trials)
    point = _auroc_from_arrays(confidence, correct)
    if point is None:
        return None

    n = confidence.size
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(resamples, n))

    single_class = np.zeros(resamples, dtype=bool)
    for _ in range(MAX_REDRAW_ROUNDS):
        n_correct = correct[idx].sum(axis=1)
        single_class = (n_correct == 0) | (n_correct == n)
        if not single_class.any():
            break
        idx[single_class] = rng.integers(0, n, size=(int(single_class.sum()), n))

    idx = idx[~single_class]
    unresolved = int(single_class.sum())
    if idx.shape[0] == 0:
        return Auroc2Interval(
            point=point, lower=point, upper=point, resamples=0,
            unresolved_resamples=unresolved, flagged=True,
            flag_reasons=("every resample stayed single-class",),
        )

    sample_conf = confidence[idx]
    sample_correct = correct[idx]
    ranks = stats.rankdata(sample_conf, axis=1)
    n1 = sample_correct.sum(axis=1).astype(float)
    n0 = n - n1
    u = (ranks * sample_correct).sum(axis=1) - n1 * (n1 + 1.0) / 2.0
    aucs = u / (n1 * n0)

    alpha = 1.0 - level
    lower, upper = np.percentile(aucs, [100.0 * alpha / 2.0, 100.0 * (1.0 - alpha / 2.0)])
    lower, upper = min(float(lower), point), max(float(upper), point)

    reasons: List[str] = []
    if unresolved:
        reasons.append(f"{unresolved} resamples stayed single-class after redraws")
    if upper - lower > wide_width:
        reasons.append(f"interval width {upper - lower:.3f} > {wide_width}")

    return Auroc2Interval(
        point=point,
        lower=lower,
        upper=upper,
        resamples=int(aucs.size),
        unresolved_resamples=unresolved,
        flagged=bool(reasons),
        flag_reasons=tuple(reasons),
    )


# ---------------------------------------------------------------------------
# Logprob -> confidence ridge regression
# ---------------------------------------------------------------------------

def _ridge_fit(x: np.ndarray, y: np.ndarray, alpha: float) -> np.ndarray:
    X1 = np.c_[np.ones(len(x)), x]
    penalty = np.eye(X1.shape[1])
    penalty[0, 0] = 0.0  # intercept is not penalised
    return la.solve(X1.T @ X1 + alpha * penalty, X1.T @ y)


def ridge_cv_r2(
    trials: Iterable[TrialRecord],
    folds: int = 5,
    alpha: float = 1.0,
    seed: int = 42,
) -> Optional[RidgeCVResult]:
    """
    K-fold cross-validated R^2 predicting confidence from length-normalised logprob.

    The single feature is standardised on each training split. Held-out folds
    with zero target variance are degenerate: excluded from the mean and counted.
    Negative R^2 values are legitimate.
    """
    rows = [t for t in trials if t.parse_ok and t.logprob_mean is not None]
    if len(rows) < max(MIN_RIDGE_TRIALS, folds):
        return None

    x = np.array([t.logprob_mean for t in rows], dtype=float)
    y = np.array([t.confidence for t in rows], dtype=float)
    rng = np.random.default_rng(seed)
    splits = np.array_split(rng.permutation(len(rows)), folds)

    per_fold: List[Optional[float]] = []
    for test_idx in splits:
        train_mask = np.ones(len(rows), dtype=bool)
        train_mask[test_idx] = False
        x_train, y_train = x[train_mask], y[train_mask]
        x_test, y_test = x[test_idx], y[test_idx]

        if np.all(y_test == y_test[0]):
            per_fold.append(None)
            continue

        mu = x_train.mean()
        sigma = x_train.std()
        if sigma == 0.0:
            sigma = 1.0
        beta = _ridge_fit((x_train - mu) / sigma, y_train, alpha)
        predicted = beta[0] + beta[1] * (x_test - mu) / sigma

        sse = float(np.sum((y_test - predicted) ** 2))
        sst = float(np.sum((y_test - y_test.mean()) ** 2))
        per_fold.append(1.0 - sse / sst)

    scored = [r for r in per_fold if r is not None]
    return RidgeCVResult(
        mean_r2=float(np.mean(scored)) if scored else None,
        per_fold=tuple(per_fold),
        degenerate_folds=sum(1 for r in per_fold if r is None),
        n=len(rows),
    )


# ---------------------------------------------------------------------------
# Rank correlations
# ---------------------------------------------------------------------------

def _t_test_p(r: float, df: int) -> float:
    if abs(r) >= 1.0:
        return 0.0
    t_stat = r * math.sqrt(df / (1.0 - r * r))
    return float(2.0 * stats.t.sf(abs(t_stat), df))


def _pearson(u: np.ndarray, v: np.ndarray) -> Optional[float]:
    if np.var(u) == 0.0 or np.var(v) == 0.0:
        return None
    return float(np.clip(np.corrcoef(u, v)[0, 1], -1.0, 1.0))


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[CorrelationResult]:
    """Spearman rho as Pearson correlation of mid-ranks; p from the t approximation."""
    if len(x) != len(y):
        raise ValueError(f"spearman needs equal lengths, got {len(x)} and {len(y)}")
    n = len(x)
    if n < 3:
        return None
    rho = _pearson(stats.rankdata(x), stats.rankdata(y))
    if rho is None:
        return None
    return CorrelationResult(rho=rho, p_value=_t_test_p(rho, n - 2), n=n)


def partial_spearman(
    x: Sequence[float],
    y: Sequence[float],
    control: Sequence[float],
) -> Optional[CorrelationResult]:
    """
    Partial Spearman correlation of x and y controlling for ``control``.

    All three series are mid-ranked; the first-order partial correlation is
    computed on the ranks with n - 3 degrees of freedom.
    """
    if not len(x) == len(y) == len(control):
        raise ValueError("partial_spearman needs three series of equal length")
    n = len(x)
    if n < 4:
        return None

    rx, ry, rz = stats.rankdata(x), stats.rankdata(y), stats.rankdata(control)
    r_xy, r_xz, r_yz = _pearson(rx, ry), _pearson(rx, rz), _pearson(ry, rz)
    if r_xy is None or r_xz is None or r_yz is None:
        return None

    denominator = math.sqrt(max(0.0, (1.0 - r_xz ** 2) * (1.0 - r_yz ** 2)))
    if denominator < 1e-12:
        return None
    rho = float(np.clip((r_xy - r_xz * r_yz) / denominator, -1.0, 1.0))
    return CorrelationResult(rho=rho, p_value=_t_test_p(rho, n - 3), n=n)


def item_difficulty(cells: Iterable[Cell]) -> Dict[str, float]:
    """
    Item difficulty = 1 - fraction of NUM cells answering the item correctly.

    Every NUM cell with a judged answer for the item contributes; repeated
    trials of one item within a cell are averaged first.
    """
    per_item: Dict[str, List[float]] = defaultdict(list)
    for cell in cells:
        if cell.condition != Condition.NUM:
            continue
        outcomes: Dict[str, List[bool]] = defaultdict(list)
        for trial in cell.trials:
            if trial.correct is not None:
                outcomes[trial.item_id].append(bool(trial.correct))
        for item_id, values in outcomes.items():
            per_item[item_id].append(sum(values) / len(values))
    return {item_id: 1.0 - float(np.mean(rates)) for item_id, rates in sorted(per_item.items())}


def item_sensitivity(
    cells: Iterable[Cell],
    difficulty: Optional[Mapping[str, float]] = None,
) -> Optional[CorrelationResult]:
    """Spearman between item difficulty and mean NUM confidence across cells."""
    cells = list(cells)
    difficulty = difficulty if difficulty is not None else item_difficulty(cells)
    confidences: Dict[str, List[float]] = defaultdict(list)
    for cell in cells:
        if cell.condition != Condition.NUM:
            continue
        for trial in cell.trials:
            if trial.parse_ok:
                confidences[trial.item_id].append(trial.confidence)

    items = [item_id for item_id in sorted(confidences) if item_id in difficulty]
    if len(items) < 3:
        return None
    return spearman(
        [difficulty[item_id] for item_id in items],
        [float(np.mean(confidences[item_id])) for item_id in items],
    )


def _difficulty_pairs(
    trials: Sequence[TrialRecord], difficulty: Mapping[str, float]
) -> Tuple[List[float], List[float]]:
    rows = [t for t in trials if t.parse_ok and t.item_id in difficulty]
    return [difficulty[t.item_id] for t in rows], [t.confidence for t in rows]


# ---------------------------------------------------------------------------
# Stability and missingness
# ---------------------------------------------------------------------------

def split_half_agreement(
    cell: Cell,
    seed: int,
    config: Optional[ScreeningConfig] = None,
) -> SplitHalfResult:
    """Screen two seeded random halves of the cell; an odd trial is dropped at random."""
    if cell.n_total < 2:
        raise ValueError("split-half agreement needs at least 2 trials")
    rng = np.random.default_rng(seed)
    order = rng.permutation(cell.n_total)
    half = cell.n_total // 2

    halves = []
    for chunk in (order[:half], order[half:2 * half]):
        trials = [cell.trials[i] for i in sorted(chunk)]
        halves.append(Cell.from_trials(trials, model_id=cell.model_id, condition=cell.condition))

    return SplitHalfResult(
        seed=seed,
        tier_a=screen_cell(halves[0], config).tier,
        tier_b=screen_cell(halves[1], config).tier,
    )


def split_half_stability(
    cell: Cell,
    seeds: Sequence[int],
    config: Optional[ScreeningConfig] = None,
) -> SplitHalfSummary:
    """Split-half agreement over several seeds."""
    if cell.n_total < 2:
        return SplitHalfSummary()
    return SplitHalfSummary(results=tuple(split_half_agreement(cell, s, config) for s in seeds))


def mar_diagnostic(cell: Cell) -> MarDiagnostic:
    """Confidence-parse-failure rate among correct and among incorrect trials."""
    known = [t for t in cell.trials if t.correct is not None]
    correct = [t for t in known if t.correct]
    incorrect = [t for t in known if not t.correct]

    def _rate(group: List[TrialRecord]) -> Optional[float]:
        if not group:
            return None
        failed = sum(1 for t in group if t.parse_status == ParseStatus.CONFIDENCE_PARSE_FAIL)
        return failed / len(group)

    return MarDiagnostic(
        fail_rate_correct=_rate(correct),
        fail_rate_incorrect=_rate(incorrect),
        n_correct=len(correct),
        n_incorrect=len(incorrect),
    )


@dataclass(frozen=True)
class RidgeSummary:
    """Cross-validated logprob R^2 across the cells of one condition."""
    n_cells: int
    mean_r2: Optional[float]
    median_r2: Optional[float]


@dataclass(frozen=True)
class CeilingSummary:
    """Saturation prevalence across NUM cells, plus ridge R^2 per condition."""
    n_cells: int
    mean_ceiling_rate: Optional[float]
    min_ceiling_rate: Optional[float]
    max_ceiling_rate: Optional[float]
    mean_ceiling_rate_sensitivity: Optional[float]
    ridge_by_condition: Dict[str, RidgeSummary] = field(default_factory=dict)


def summarise_ceiling(rows: Iterable[Tuple[Condition, MetricsReport]]) -> CeilingSummary:
    """
    Summarise ceiling rates and ridge fits over (condition, metrics) rows.

    Ceiling statistics use NUM cells only. Ridge R^2 is summarised separately
    for each condition present, over the cells with a defined mean.
    """
    rows = [(Condition(condition), metrics) for condition, metrics in rows]
    num = [m for condition, m in rows if condition == Condition.NUM]
    rates = [m.ceiling_rate for m in num if m.ceiling_rate is not None]
    sensitivity = [m.ceiling_rate_sensitivity for m in num if m.ceiling_rate_sensitivity is not None]

    ridge_by_condition: Dict[str, RidgeSummary] = {}
    for condition in Condition:
        present = [m for c, m in rows if c == condition]
        if not present:
            continue
        r2 = [m.ridge.mean_r2 for m in present if m.ridge is not None and m.ridge.mean_r2 is not None]
        ridge_by_condition[condition.value] = RidgeSummary(
            n_cells=len(r2),
            mean_r2=float(np.mean(r2)) if r2 else None,
            median_r2=float(np.median(r2)) if r2 else None,
        )

    return CeilingSummary(
        n_cells=len(rates),
        mean_ceiling_rate=float(np.mean(rates)) if rates else None,
        min_ceiling_rate=min(rates) if rates else None,
        max_ceiling_rate=max(rates) if rates else None,
        mean_ceiling_rate_sensitivity=float(np.mean(sensitivity)) if sensitivity else None,
        ridge_by_condition=ridge_by_condition,
    )


# ---------------------------------------------------------------------------
# Per-cell bundle
# ---------------------------------------------------------------------------

def compute_metrics(
    cell: Cell,
    config: Optional[ScreeningConfig] = None,
    difficulty: Optional[Mapping[str, float]] = None,
) -> MetricsReport:
    """Compute every metric for one cell; unmet preconditions yield None."""
    config = config or ScreeningConfig()
    trials = list(cell.trials)
    notes: List[str] = []

    spearman_difficulty = trace_corr = partial_trace_corr = None
    if difficulty:
        xs, ys = _difficulty_pairs(trials, difficulty)
        if len(xs) >= 3:
            spearman_difficulty = spearman(xs, ys)

    traced = [t for t in trials if t.parse_ok and t.trace_length is not None]
    if len(traced) >= 3:
        trace_corr = spearman([t.trace_length for t in traced], [t.confidence for t in traced])
    if difficulty:
        traced = [t for t in traced if t.item_id in difficulty]
        if len(traced) >= 4:
            partial_trace_corr = partial_spearman(
                [t.trace_length for t in traced],
                [t.confidence for t in traced],
                [difficulty[t.item_id] for t in traced],
            )

    if cell.confidence_parse_failures:
        notes.append(
            "ceiling_rate_sensitivity pools confidence-parse failures with the ceiling mass"
        )

    seeds = [config.cv_seed + i for i in range(config.split_half_seeds)]
    return MetricsReport(
        n_total=cell.n_total,
        n_parse_ok=cell.n_parse_ok,
        n_correct=cell.n_correct,
        accuracy=accuracy(cell),
        parse_rate=cell.n_parse_ok / cell.n_total if cell.n_total else None,
        ceiling_rate=ceiling_rate(cell, config.ceiling_threshold),
        ceiling_rate_sensitivity=ceiling_rate_sensitivity(cell, config.ceiling_threshold),
        auroc2=auroc2_bootstrap(
            trials,
            resamples=config.bootstrap_resamples,
            seed=config.bootstrap_seed,
            level=config.wilson_level,
            wide_width=config.wide_interval_width,
        ),
        ridge=ridge_cv_r2(trials, folds=config.ridge_folds, alpha=config.ridge_alpha, seed=config.cv_seed),
        spearman_difficulty=spearman_difficulty,
        trace_corr=trace_corr,
        partial_trace_corr=partial_trace_corr,
        split_half=split_half_stability(cell, seeds, config),
        mar=mar_diagnostic(cell),
        notes=tuple(notes),
    )
