"""Protocol and collector configuration loaded from the environment.

Defaults reproduce the published screening protocol exactly. Any override is
reported by ``ScreeningConfig.non_default_fields()`` so that it can be stamped
into every report.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, Optional, Tuple

from dotenv import load_dotenv

load_dotenv()

logger = logging.getLogger(__name__)

# Environment variable holding the default chat-completions endpoint for `collect`.
ENDPOINT_ENV = "CONFIDENCE_ENDPOINT_URL"
API_KEY_ENV = "OPENAI_API_KEY"


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"Ignoring malformed {name}={raw!r}; using default {default}")
        return default


def _env_float(name: str, default: float) -> float:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        return float(raw)
    except ValueError:
        logger.warning(f"Ignoring malformed {name}={raw!r}; using default {default}")
        return default


def get_default_endpoint() -> Optional[str]:
    """Return the endpoint URL from the environment, if configured."""
    return os.getenv(ENDPOINT_ENV) or None


def get_api_key() -> str:
    """API key for the endpoint; local servers accept any placeholder."""
    return os.getenv(API_KEY_ENV) or "not-needed"


@dataclass(frozen=True)
class ScreeningConfig:
    """Thresholds and resampling settings for screening and metrics."""

    binarize_threshold: float = 0.50
    ceiling_threshold: float = 0.95
    exclusion_threshold: float = 0.30
    wilson_level: float = 0.95

    # Degeneracy pre-check
    degeneracy_min_distinct: int = 3
    degeneracy_max_share: float = 0.95

    # Ordered screening sequence
    min_cell_count: int = 5
    trin_warning: float = 0.95
    fp_threshold: float = 0.50
    fp_bound: float = 0.40
    l_threshold: float = 0.95
    l_bound: float = 0.90
    rbs_threshold: float = 0.05

    # Resampling and cross-validation
    bootstrap_resamples: int = 2000
    bootstrap_seed: int = 42
    ridge_folds: int = 5
    ridge_alpha: float = 1.0
    cv_seed: int = 42
    split_half_seeds: int = 10
    wide_interval_width: float = 0.20

    def __post_init__(self) -> None:
        for name in (
            "binarize_threshold",
            "ceiling_threshold",
            "exclusion_threshold",
            "wilson_level",
            "degeneracy_max_share",
        ):
            value = getattr(self, name)
            if not 0.0 < value < 1.0 and not (name == "ceiling_threshold" and value == 1.0):
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.bootstrap_resamples < 1:
            raise ValueError("bootstrap_resamples must be positive")
        if self.ridge_folds < 2:
            raise ValueError("ridge_folds must be at least 2")

    def with_overrides(self, **overrides: Any) -> "ScreeningConfig":
        """Return a validated copy; None values are ignored."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def non_default_fields(self) -> Dict[str, Tuple[Any, Any]]:
        """Map each overridden field to (default, value)."""
        defaults = ScreeningConfig()
        return {
            f.name: (getattr(defaults, f.name), getattr(self, f.name))
            for f in fields(self)
            if getattr(self, f.name) != getattr(defaults, f.name)
        }

    def warn_if_non_default(self) -> None:
        """Log every protocol deviation loudly."""
        for name, (default, value) in self.non_default_fields().items():
            logger.warning(
                f"NON-DEFAULT PROTOCOL SETTING: {name}={value} (published protocol uses {default})"
            )


def load_screening_config() -> ScreeningConfig:
    """Load a ScreeningConfig, applying environment overrides."""
    defaults = ScreeningConfig()
    return ScreeningConfig(
        binarize_threshold=_env_float("SCREEN_BINARIZE_THRESHOLD", defaults.binarize_threshold),
        ceiling_threshold=_env_float("SCREEN_CEILING_THRESHOLD", defaults.ceiling_threshold),
        exclusion_threshold=_env_float("SCREEN_EXCLUSION_THRESHOLD", defaults.exclusion_threshold),
        bootstrap_resamples=_env_int("SCREEN_BOOTSTRAP_RESAMPLES", defaults.bootstrap_resamples),
        bootstrap_seed=_env_int("SCREEN_BOOTSTRAP_SEED", defaults.bootstrap_seed),
    )
