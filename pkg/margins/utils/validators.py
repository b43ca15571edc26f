# margins/utils/validators.py
"""
margins Validation Utilities
Error hierarchy and small range checks shared by every stage
"""

from typing import Iterable, Optional, Sequence
import logging

logger = logging.getLogger(__name__)


class MarginsError(Exception):
    """Base error: a message plus the offending field and a machine code"""
    exit_code = 3

    def __init__(self, message: str, field: Optional[str] = None, code: Optional[str] = None):
        self.message = message
        self.field = field
        self.code = code or self.__class__.__name__.upper()
        super().__init__(self.message)

    def to_dict(self) -> dict:
        return {"message": self.message, "field": self.field, "code": self.code}


# Validation failures (CLI exit status 2)

class ValidationFailure(MarginsError):
    exit_code = 2


class SchemaError(ValidationFailure):
    """Schema config and input columns disagree"""


class ParseError(ValidationFailure):
    """A cell could not be parsed"""

    def __init__(self, message: str, field: Optional[str] = None, row: Optional[int] = None):
        self.row = row
        super().__init__(message, field, "PARSE_ERROR")


class DomainError(ValidationFailure):
    """A value is outside its allowed range"""

    def __init__(self, message: str, field: Optional[str] = None, row: Optional[int] = None):
        self.row = row
        super().__init__(message, field, "DOMAIN_ERROR")


class ConfigError(ValidationFailure):
    """Invalid parameter combination"""


class FormatError(ValidationFailure):
    """A binary or tabular artifact does not have the expected layout"""


class AlignmentError(ValidationFailure):
    """Two inputs that must be row-aligned are not"""


class MissingArtifactError(ValidationFailure):
    """An upstream stage has not been run"""

    def __init__(self, artifact: str, prerequisite: str):
        self.artifact = artifact
        self.prerequisite = prerequisite
        super().__init__(
            f"missing {artifact}: run {prerequisite} first",
            field=artifact,
            code="MISSING_ARTIFACT",
        )


class ArtifactMismatchError(ValidationFailure):
    """Artifacts were produced under a different run configuration"""


# Analysis failures (CLI exit status 3)

class AnalysisError(MarginsError):
    exit_code = 3


class DegenerateGroupError(AnalysisError):
    """One side of a group/complement split is empty"""

    def __init__(self, group: str, side: str):
        self.group = group
        self.side = side
        super().__init__(f"group '{group}' has an empty {side}", field=group, code="DEGENERATE_GROUP")


class EmptyResultError(AnalysisError):
    """Every term of an aggregate was skipped"""


class ScorerError(MarginsError):
    exit_code = 3


class TransientScorerError(ScorerError):
    """Retryable failure from the scoring service"""


class ScorerParseError(ScorerError):
    """The scoring service answered with something we cannot read"""


# Range checks

def check_contamination(contamination: float) -> float:
    if not (0.0 < contamination <= 0.5):
        raise ConfigError(
            f"contamination must be in (0, 0.5], got {contamination}",
            field="contamination",
        )
    return contamination


def check_unique(names: Iterable[str], what: str) -> None:
    seen = set()
    for name in names:
        if name in seen:
            raise SchemaError(f"duplicate {what} '{name}'", field=name)
        seen.add(name)


def require_columns(available: Sequence[str], required: Iterable[str]) -> None:
    """Raise SchemaError naming the first configured column missing from the input"""
    present = set(available)
    for column in required:
        if column not in present:
            raise SchemaError(f"column '{column}' not found in input", field=column, code="MISSING_COLUMN")
