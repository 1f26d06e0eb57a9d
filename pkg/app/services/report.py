"""Run orchestration: screen and measure every cell, then emit reports."""
from __future__ import annotations

import json
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, is_dataclass
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.models.trial import Cell, Condition
from app.routers.schemas import ReportFormat
from app.services.config import ScreeningConfig
from app.services.metrics import (
    CeilingSummary,
    CorrelationResult,
    MetricsReport,
    compute_metrics,
    item_difficulty,
    item_sensitivity,
    summarise_ceiling,
)
from app.services.run_logger import RunLogger
from app.services.screening import ScreeningError, ScreeningReport, Tier, screen_cell

logger = logging.getLogger(__name__)

MISSING = "-"


@dataclass(frozen=True)
class CellResult:
    """Screening and metrics for one model x condition cell."""
    model_id: str
    condition: str
    n_total: int
    screening: Optional[ScreeningReport]
    metrics: Optional[MetricsReport]
    excluded_by_parse_rate: bool
    parse_rate: Optional[float]
    protocol_overrides: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def tier(self) -> Optional[Tier]:
        return self.screening.tier if self.screening else None


@dataclass(frozen=True)
class FormatComparison:
    """NUM and CAT tiers of one model; rescued when CAT lifts an INVALID NUM cell."""
    model_id: str
    num_tier: Optional[str]
    cat_tier: Optional[str]
    rescued: bool


@dataclass(frozen=True)
class RunSummary:
    """Run-level aggregates reported once per run."""
    n_cells: int
    tiers: Dict[str, int]
    n_excluded: int
    ceiling: CeilingSummary
    item_sensitivity: Optional[CorrelationResult]
    format_comparison: List[FormatComparison] = field(default_factory=list)
    rescued_models: List[str] = field(default_factory=list)
    protocol_overrides: Dict[str, Any] = field(default_factory=dict)


def _overrides(config: ScreeningConfig) -> Dict[str, Any]:
    return {
        name: {"default": default, "value": value}
        for name, (default, value) in config.non_default_fields().items()
    }


def evaluate_cell(
    cell: Cell,
    config: ScreeningConfig,
    difficulty: Optional[Mapping[str, float]] = None,
) -> CellResult:
    """Screen and measure one cell; failures are recorded, never raised."""
    parse_rate = cell.n_parse_ok / cell.n_total if cell.n_total else None
    screening: Optional[ScreeningReport] = None
    metrics: Optional[MetricsReport] = None
    error: Optional[str] = None
    try:
        screening = screen_cell(cell, config)
        metrics = compute_metrics(cell, config, difficulty)
    except (ScreeningError, ValueError, np.linalg.LinAlgError) as e:
        error = f"{type(e).__name__}: {e}"
        logger.error(f"Evaluation of {cell.model_id}/{cell.condition.value} failed: {error}")

    excluded = (
        screening.excluded_by_parse_rate
        if screening is not None
        else bool(cell.n_total)
        and cell.confidence_parse_failures / cell.n_total > config.exclusion_threshold
    )
    result = CellResult(
        model_id=cell.model_id,
        condition=cell.condition.value,
        n_total=cell.n_total,
        screening=screening,
        metrics=metrics,
        excluded_by_parse_rate=excluded,
        parse_rate=parse_rate,
        protocol_overrides=_overrides(config),
        error=error,
    )
    if screening is not None and metrics is not None:
        RunLogger.log_cell_result(result)
    return result


def evaluate_all(
    cells: Iterable[Cell],
    config: Optional[ScreeningConfig] = None,
    workers: int = 1,
) -> List[CellResult]:
    """
    Evaluate every cell, sorted by model_id then condition.

    Item difficulty is estimated once from all NUM cells before any cell is
    measured. Excluded cells are still screened and labelled.
    """
    config = config or ScreeningConfig()
    cells = sorted(cells, key=lambda c: c.key)
    difficulty = item_difficulty(cells)

    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: evaluate_cell(c, config, difficulty), cells))
    else:
        results = [evaluate_cell(c, config, difficulty) for c in cells]
    return results


def compare_formats(results: Iterable[CellResult]) -> List[FormatComparison]:
    """
    Pair each model's NUM and CAT tiers, sorted by model_id.

    Only models with a screened cell in both conditions are compared.
    """
    tiers: Dict[str, Dict[str, Tier]] = {}
    for result in results:
        if result.tier is not None:
            tiers.setdefault(result.model_id, {})[result.condition] = result.tier

    comparisons: List[FormatComparison] = []
    for model_id in sorted(tiers):
        num = tiers[model_id].get(Condition.NUM.value)
        cat = tiers[model_id].get(Condition.CAT.value)
        if num is None or cat is None:
            continue
        comparisons.append(FormatComparison(
            model_id=model_id,
            num_tier=num.value,
            cat_tier=cat.value,
            rescued=num == Tier.INVALID and cat != Tier.INVALID,
        ))
    return comparisons


def summarise_run(
    results: Sequence[CellResult],
    cells: Optional[Iterable[Cell]] = None,
    config: Optional[ScreeningConfig] = None,
) -> RunSummary:
    """Tier counts, saturation prevalence, format rescue and the run-level difficulty correlation."""
    config = config or ScreeningConfig()
    measured = [r for r in results if r.metrics is not None]
    tiers = Counter(r.tier.value for r in results if r.tier is not None)
    comparisons = compare_formats(results)
    return RunSummary(
        n_cells=len(results),
        tiers={tier.value: tiers.get(tier.value, 0) for tier in Tier},
        n_excluded=sum(1 for r in results if r.excluded_by_parse_rate),
        ceiling=summarise_ceiling((Condition(r.condition), r.metrics) for r in measured),
        item_sensitivity=item_sensitivity(cells) if cells is not None else None,
        format_comparison=comparisons,
        rescued_models=[c.model_id for c in comparisons if c.rescued],
        protocol_overrides=_overrides(config),
    )


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------

# Computed properties that belong in the loss-free JSON form.
_EXTRA_PROPERTIES = {
    "Auroc2Interval": ("width",),
    "SplitHalfResult": ("agree",),
    "SplitHalfSummary": ("agreement",),
}


def to_jsonable(obj: Any) -> Any:
    """Convert dataclasses, enums and tuples into plain JSON values."""
    if is_dataclass(obj) and not isinstance(obj, type):
        data = {f.name: to_jsonable(getattr(obj, f.name)) for f in fields(obj)}
        for name in _EXTRA_PROPERTIES.get(type(obj).__name__, ()):
            data[name] = to_jsonable(getattr(obj, name))
        return data
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def result_to_dict(result: CellResult) -> Dict[str, Any]:
    data = to_jsonable(result)
    data["tier"] = result.tier.value if result.tier else None
    return data


def _fmt(value: Optional[float], digits: int = 3) -> str:
    return MISSING if value is None else f"{value:.{digits}f}"


def _pct(value: Optional[float]) -> str:
    return MISSING if value is None else f"{100.0 * value:.1f}%"


def _index(screening: Optional[Mapping[str, Any]], name: str) -> Optional[float]:
    if not screening:
        return None
    return (screening.get("indices", {}).get(name) or {}).get("value")


TABLE_COLUMNS: Tuple[str, ...] = (
    "Model", "Cond", "n", "Parse", "Acc", "Tier", "L", "Fp", "RBS", "TRIN", "Ceiling", "AUROC2", "Flags",
)


def _row(data: Mapping[str, Any]) -> List[str]:
    screening = data.get("screening") or {}
    metrics = data.get("metrics") or {}
    auroc = metrics.get("auroc2") or {}

    flags = []
    if data.get("excluded_by_parse_rate"):
        flags.append("excluded")
    if screening.get("degenerate"):
        flags.append("degenerate")
    if screening.get("trin_warning"):
        flags.append("trin")
    if auroc.get("flagged"):
        flags.append("auroc-unstable")
    if data.get("error"):
        flags.append("error")

    return [
        str(data.get("model_id", MISSING)),
        str(data.get("condition", MISSING)),
        str(data.get("n_total", MISSING)),
        _pct(data.get("parse_rate")),
        _fmt(metrics.get("accuracy")),
        str(data.get("tier") or MISSING),
        _fmt(_index(screening, "L")),
        _fmt(_index(screening, "Fp")),
        _fmt(_index(screening, "RBS")),
        _fmt(_index(screening, "TRIN")),
        _pct(metrics.get("ceiling_rate")),
        _fmt(auroc.get("point")),
        ",".join(flags) or MISSING,
    ]


def render_text_table(
    rows: Sequence[Mapping[str, Any]],
    summary: Optional[Mapping[str, Any]] = None,
) -> str:
    """Render JSON-form cell results as a fixed-width table."""
    lines: List[str] = []
    overrides: Dict[str, Any] = {}
    for data in rows:
        overrides.update(data.get("protocol_overrides") or {})
    if summary:
        overrides.update(summary.get("protocol_overrides") or {})
    for name, pair in sorted(overrides.items()):
        lines.append(
            f"NON-DEFAULT PROTOCOL: {name}={pair['value']} (published value {pair['default']})"
        )

    table = [list(TABLE_COLUMNS)] + [_row(r) for r in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(TABLE_COLUMNS))]
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))

    if summary:
        ceiling = summary.get("ceiling") or {}
        tiers = summary.get("tiers") or {}
        lines.append("")
        lines.append(
            "Tiers: " + ", ".join(f"{name}={count}" for name, count in tiers.items())
            + f"; excluded by parse rate: {summary.get('n_excluded', 0)}"
        )
        lines.append(
            f"NUM ceiling rate: mean {_pct(ceiling.get('mean_ceiling_rate'))} "
            f"(range {_pct(ceiling.get('min_ceiling_rate'))} to {_pct(ceiling.get('max_ceiling_rate'))}); "
            f"failures coded as ceiling: {_pct(ceiling.get('mean_ceiling_rate_sensitivity'))}"
        )
        for condition, ridge in (ceiling.get("ridge_by_condition") or {}).items():
            lines.append(
                f"{condition} ridge CV R^2 (logprob -> confidence): mean {_fmt(ridge.get('mean_r2'))}, "
                f"median {_fmt(ridge.get('median_r2'))} over {ridge.get('n_cells', 0)} cells"
            )
        comparison = summary.get("format_comparison") or []
        if comparison:
            rescued = summary.get("rescued_models") or []
            lines.append(
                f"Format rescue (INVALID on NUM, not INVALID on CAT): {len(rescued)} of {len(comparison)} models"
                + (f" ({', '.join(rescued)})" if rescued else "")
            )
        sensitivity = summary.get("item_sensitivity")
        if sensitivity:
            lines.append(
                f"Item difficulty vs mean confidence: rho={sensitivity['rho']:.3f} "
                f"(p={sensitivity['p_value']:.3g}, n={sensitivity['n']})"
            )
    return "\n".join(lines) + "\n"


def emit_report(
    results: Sequence[CellResult],
    fmt: ReportFormat | str = ReportFormat.JSON,
    summary: Optional[RunSummary] = None,
) -> str:
    """
    Serialise results.

    JSON is a top-level list of cell results carrying every index, bound,
    audit step and flag. TEXT is one table row per cell.
    """
    fmt = ReportFormat(fmt)
    rows = [result_to_dict(r) for r in results]
    if fmt == ReportFormat.JSON:
        return json.dumps(rows, indent=2) + "\n"
    return render_text_table(rows, to_jsonable(summary) if summary else None)


def load_report(text: str) -> Tuple[List[Dict[str, Any]], Optional[Dict[str, Any]]]:
    """Parse a JSON report: either a list of cells or {"cells": [...], "summary": {...}}."""
    data = json.loads(text)
    if isinstance(data, list):
        return data, None
    if isinstance(data, dict) and isinstance(data.get("cells"), list):
        return data["cells"], data.get("summary")
    raise ValueError("report JSON must be a list of cell results or an object with 'cells'")
