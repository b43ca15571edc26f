# margins/schemas/__init__.py
"""
margins Schemas Package
Centralized imports for the pydantic models shared across stages
"""

from .dataset_schema import (
    TOXICITY_ATTRIBUTES,
    DEMOGRAPHIC_GROUPS,
    ChannelKind,
    AttributeChannel,
    ModelScoreColumn,
    SchemaConfig,
    CommentRecord,
    default_schema_config,
    score_channel_name,
)
from .outlier_schema import OutlierSpace, OutlierConfig
from .scorer_schema import ScorerEndpointConfig, ScoreCacheEntry, ScoreImport
from .audit_schema import (
    GroupKind,
    BreakdownName,
    GroupSpec,
    BreakdownSchema,
    WmseTerm,
    WmseResult,
    SignificanceResult,
    SignificanceSummary,
    AuditReport,
    SweepReport,
)
from .synthetic_schema import PlantedSpec, SyntheticConfig
from .run_schema import RunConfig, load_run_config

__all__ = [
    "TOXICITY_ATTRIBUTES", "DEMOGRAPHIC_GROUPS", "ChannelKind", "AttributeChannel",
    "ModelScoreColumn", "SchemaConfig", "CommentRecord", "default_schema_config", "score_channel_name",
    "OutlierSpace", "OutlierConfig",
    "ScorerEndpointConfig", "ScoreCacheEntry", "ScoreImport",
    "GroupKind", "BreakdownName", "GroupSpec", "BreakdownSchema", "WmseTerm", "WmseResult",
    "SignificanceResult", "SignificanceSummary", "AuditReport", "SweepReport",
    "PlantedSpec", "SyntheticConfig",
    "RunConfig", "load_run_config",
]
