# margins/utils/__init__.py
"""
margins Utilities Package
Errors, hashing and formatting helpers shared by every stage
"""

from .validators import (
    MarginsError,
    ValidationFailure,
    SchemaError,
    ParseError,
    DomainError,
    ConfigError,
    FormatError,
    AlignmentError,
    MissingArtifactError,
    ArtifactMismatchError,
    AnalysisError,
    DegenerateGroupError,
    EmptyResultError,
    ScorerError,
    TransientScorerError,
    ScorerParseError,
)
from .helpers import canonical_json, write_json, read_json, sha256_file, format_pct, format_decimal
from .rate_limiter import SlidingWindowRateLimiter

__all__ = [
    "MarginsError", "ValidationFailure", "SchemaError", "ParseError", "DomainError", "ConfigError",
    "FormatError", "AlignmentError", "MissingArtifactError", "ArtifactMismatchError", "AnalysisError",
    "DegenerateGroupError", "EmptyResultError", "ScorerError", "TransientScorerError", "ScorerParseError",
    "canonical_json", "write_json", "read_json", "sha256_file", "format_pct", "format_decimal",
    "SlidingWindowRateLimiter",
]
