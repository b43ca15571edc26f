# margins/schemas/audit_schema.py
"""
margins Audit Schemas
Group definitions, breakdown schemas and the result records produced by the
audit, composition and sweep services
"""

from pydantic import BaseModel, field_validator, model_validator
from typing import Optional, List, Dict, Tuple
from enum import Enum


class GroupKind(str, Enum):
    BINARY = "binary"
    INTERSECTION = "intersection"
    UNION = "union"
    OUTLIER = "outlier"


class BreakdownName(str, Enum):
    MARGINALIZED = "marginalized"
    BINARY = "binary"
    INTERSECTIONAL = "intersectional"
    OUTLIER = "outlier"


# Marginalized unions over the default identity columns
MARGINALIZED_UNIONS: Dict[str, List[str]] = {
    "people_of_color": ["black", "latino", "asian", "other_race_or_ethnicity"],
    "gender_minorities": ["female", "other_gender"],
    "sexual_minorities": ["homosexual_gay_or_lesbian", "bisexual", "other_sexual_orientation"],
    "religious_minorities": ["atheist", "buddhist", "hindu", "jewish", "muslim", "other_religion"],
    "disabled_people": [
        "physical_disability",
        "intellectual_or_learning_disability",
        "psychiatric_or_mental_illness",
        "other_disability",
    ],
}

DEFAULT_MIN_SUPPORT = 10


def outlier_group_name(space: str) -> str:
    return f"{space}_outliers"


class GroupSpec(BaseModel):
    name: str
    kind: GroupKind
    members: List[str]
    min_support: int = 0

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def check_members(self):
        count = len(self.members)
        if self.kind in (GroupKind.BINARY, GroupKind.OUTLIER) and count != 1:
            raise ValueError(f"{self.kind.value} group '{self.name}' needs exactly one member")
        if self.kind == GroupKind.INTERSECTION:
            if count != 2 or self.members[0] == self.members[1]:
                raise ValueError(f"intersection '{self.name}' needs two distinct members")
        if self.kind == GroupKind.UNION and count < 2:
            raise ValueError(f"union '{self.name}' needs at least two members")
        return self

    @field_validator('min_support')
    def validate_support(cls, v):
        if v < 0:
            raise ValueError('min_support cannot be negative')
        return v


class BreakdownSchema(BaseModel):
    name: BreakdownName
    groups: List[GroupSpec]

    @field_validator('groups')
    def validate_groups(cls, v):
        if not v:
            raise ValueError('a breakdown needs at least one group')
        names = [g.name for g in v]
        if len(set(names)) != len(names):
            raise ValueError('group names must be unique within a breakdown')
        return v


class WmseTerm(BaseModel):
    model_id: str
    toxicity_type: str
    freq: float
    mse_in: float
    mse_out: float
    relative_diff: float

    @property
    def weighted(self) -> float:
        return self.freq * self.relative_diff


class SkippedTerm(BaseModel):
    model_id: str
    toxicity_type: str
    reason: str


class WmseResult(BaseModel):
    group: GroupSpec
    value: float
    group_size: int
    per_type_terms: Dict[str, WmseTerm]  # keyed "<model>/<type>", insertion order is summation order
    skipped_types: List[SkippedTerm] = []


class SignificanceResult(BaseModel):
    group: GroupSpec
    toxicity_type: str
    outlier_space: str
    counts: Tuple[int, int, int, int]  # outlier pos/neg, non-outlier pos/neg
    chi2: Optional[float] = None
    p_value: Optional[float] = None
    significant_after_bonferroni: bool = False

    @property
    def is_defined(self) -> bool:
        return self.chi2 is not None

    @field_validator('p_value')
    def validate_p(cls, v):
        if v is not None and not (0.0 <= v <= 1.0):
            raise ValueError('p_value must be in [0, 1]')
        return v


class SignificanceSummary(BaseModel):
    alpha: float
    n_tests: int
    counts: Dict[str, int]  # keyed "<space>/<type>"
    results: List[SignificanceResult]
    continuity_correction: bool = False


class MseRow(BaseModel):
    model_id: str
    toxicity_type: str
    overall_mse: float
    outlier_mse: float
    non_outlier_mse: float
    pct_increase: Optional[float] = None


class ToxicityGap(BaseModel):
    space: str
    toxicity_type: str
    mean_in: float
    mean_out: float
    relative_pct: Optional[float] = None


class AgreementGap(BaseModel):
    space: str
    toxicity_type: str
    unanimous_in: float
    unanimous_out: float
    relative_pct: Optional[float] = None


class BreakdownPercentiles(BaseModel):
    """WMSE of every pooled group for one model and breakdown, ranked"""
    model_id: str
    breakdown: BreakdownName
    results: List[WmseResult]  # sorted by WMSE descending
    percentiles: Dict[str, float]  # outlier group name -> percentile rank
    skipped_groups: List[str] = []


class CompositionRow(BaseModel):
    group: str
    n_members: int
    n_outliers: int
    proportion: Optional[float] = None
    baseline: float

    @model_validator(mode="after")
    def check_proportion(self):
        if self.n_members == 0:
            if self.proportion is not None:
                raise ValueError(f"group '{self.group}' is empty and cannot have a proportion")
        elif self.proportion is None or not (0.0 <= self.proportion <= 1.0):
            raise ValueError(f"group '{self.group}' proportion must be in [0, 1]")
        return self


class CompositionSummary(BaseModel):
    space: str
    rows: List[CompositionRow]
    n_majority_outlier: int
    n_without_outliers: int


class IdentityCountResult(BaseModel):
    space: str
    n_in: int
    n_out: int
    mean_in: Optional[float] = None
    mean_out: Optional[float] = None
    p_value: Optional[float] = None
    test: str = "welch-normal"


class SweepPoint(BaseModel):
    contamination: float
    group_size: int
    wmse: WmseResult


class CurveVerdict(str, Enum):
    BELOW = "below"
    ABOVE = "above"
    OUT_OF_RANGE = "out-of-range"


class GroupVerdict(BaseModel):
    group: str
    size: int
    wmse: float
    curve_value: Optional[float] = None
    verdict: CurveVerdict


class CurveComparison(BaseModel):
    below: int
    above: int
    out_of_range: int
    verdicts: List[GroupVerdict]


class SweepCurve(BaseModel):
    model_id: str
    space: str
    points: List[SweepPoint]
    comparison: CurveComparison


class SweepReport(BaseModel):
    config_hash: str
    seed: int
    schedule: List[float]
    curves: List[SweepCurve]


class AuditReport(BaseModel):
    """Everything the audit stage computes, as persisted in audit.json"""
    config_hash: str
    seed: int
    n_rows: int
    model_ids: List[str]
    toxicity_types: List[str]
    outlier_counts: Dict[str, int]
    toxicity_frequencies: Dict[str, float]
    percentiles: List[BreakdownPercentiles]
    toxicity_gaps: List[ToxicityGap]
    significance: SignificanceSummary
    mse_tables: Dict[str, List[MseRow]]
    agreement_gaps: List[AgreementGap]
    composition: List[CompositionSummary]
    identity_counts: List[IdentityCountResult]
    skipped: List[str] = []
