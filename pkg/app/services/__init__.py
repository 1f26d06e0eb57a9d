"""Services package for confidence screening."""
from app.services.config import ScreeningConfig, load_screening_config
from app.services.screening import (
    ScreeningError,
    InsufficientDataError,
    ScreeningReport,
    Tier,
    compute_indices,
    degeneracy_check,
    screen_cell,
    wilson_interval,
)
from app.services.metrics import (
    MetricsReport,
    auroc2,
    auroc2_bootstrap,
    ceiling_rate,
    ceiling_rate_sensitivity,
    compute_metrics,
    partial_spearman,
    ridge_cv_r2,
    spearman,
)
from app.services.ingest import (
    TrialFileError,
    TrialFormat,
    group_cells,
    read_trials,
    write_trials,
)
from app.services.report import (
    CellResult,
    compare_formats,
    emit_report,
    evaluate_all,
)
from app.services.synthgen import (
    GenSpec,
    GenSpecError,
    generate_cell,
    generate_cell_with_latents,
)
from app.services.run_logger import (
    RunLogger,
    configure_logging,
)

__all__ = [
    # Configuration
    "ScreeningConfig",
    "load_screening_config",
    # Screening
    "ScreeningError",
    "InsufficientDataError",
    "ScreeningReport",
    "Tier",
    "compute_indices",
    "degeneracy_check",
    "screen_cell",
    "wilson_interval",
    # Metrics
    "MetricsReport",
    "auroc2",
    "auroc2_bootstrap",
    "ceiling_rate",
    "ceiling_rate_sensitivity",
    "compute_metrics",
    "partial_spearman",
    "ridge_cv_r2",
    "spearman",
    # Ingest and reporting
    "TrialFileError",
    "TrialFormat",
    "group_cells",
    "read_trials",
    "write_trials",
    "CellResult",
    "compare_formats",
    "emit_report",
    "evaluate_all",
    # Synthetic cells
    "GenSpec",
    "GenSpecError",
    "generate_cell",
    "generate_cell_with_latents",
    # Run logger
    "RunLogger",
    "configure_logging",
]
