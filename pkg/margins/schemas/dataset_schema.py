# margins/schemas/dataset_schema.py
"""
margins Dataset Schemas
Pydantic models for column roles, the ingest schema document and per-comment records
"""

from pydantic import BaseModel, field_validator, model_validator
from typing import Optional, List, Dict
from enum import Enum


TOXICITY_ATTRIBUTES = [
    "toxicity",
    "severe_toxicity",
    "identity_attack",
    "insult",
    "obscene",
    "threat",
]

# Identity columns of the public Civil Comments annotations, grouped by axis
RACE_GROUPS = ["black", "white", "asian", "latino", "other_race_or_ethnicity"]
GENDER_GROUPS = ["male", "female", "transgender", "other_gender"]
SEXUAL_ORIENTATION_GROUPS = [
    "heterosexual",
    "homosexual_gay_or_lesbian",
    "bisexual",
    "other_sexual_orientation",
]
RELIGION_GROUPS = [
    "christian",
    "jewish",
    "muslim",
    "hindu",
    "buddhist",
    "atheist",
    "other_religion",
]
DISABILITY_GROUPS = [
    "physical_disability",
    "intellectual_or_learning_disability",
    "psychiatric_or_mental_illness",
    "other_disability",
]

DEMOGRAPHIC_GROUPS = (
    RACE_GROUPS + GENDER_GROUPS + SEXUAL_ORIENTATION_GROUPS + RELIGION_GROUPS + DISABILITY_GROUPS
)


class ChannelKind(str, Enum):
    TOXICITY_ANNOTATION = "toxicity-annotation"
    DEMOGRAPHIC_ANNOTATION = "demographic-annotation"
    MODEL_SCORE = "model-score"


def score_channel_name(model_id: str, target: str) -> str:
    """Canonical column name for a model's score of one toxicity attribute"""
    return f"{model_id}__{target}"


class AttributeChannel(BaseModel):
    name: str
    kind: ChannelKind
    model_id: Optional[str] = None
    target_attribute: Optional[str] = None

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def check_model_fields(self):
        if self.kind == ChannelKind.MODEL_SCORE:
            if not self.model_id or not self.target_attribute:
                raise ValueError(f"model-score channel '{self.name}' needs model_id and target_attribute")
        elif self.model_id is not None:
            raise ValueError(f"channel '{self.name}' is not a model score but names a model")
        return self


class ModelScoreColumn(BaseModel):
    column: str
    model: str
    target: str


class SchemaConfig(BaseModel):
    """The JSON document mapping CSV headers to channel roles"""
    id_column: Optional[str] = None
    text_column: str
    toxicity_annotations: List[str]
    demographic_annotations: List[str]
    model_scores: List[ModelScoreColumn] = []

    @field_validator('toxicity_annotations')
    def validate_toxicity(cls, v):
        if not v:
            raise ValueError('at least one toxicity annotation column is required')
        return v

    @model_validator(mode="after")
    def check_targets(self):
        for score in self.model_scores:
            if score.target not in self.toxicity_annotations:
                raise ValueError(
                    f"model score column '{score.column}' targets unknown attribute '{score.target}'"
                )
        return self


def default_schema_config() -> SchemaConfig:
    """Column roles of the public toxicity dataset with identity annotations"""
    return SchemaConfig(
        id_column="id",
        text_column="comment_text",
        toxicity_annotations=list(TOXICITY_ATTRIBUTES),
        demographic_annotations=list(DEMOGRAPHIC_GROUPS),
    )


class CommentRecord(BaseModel):
    """Row view of one comment"""
    id: int
    text: str
    values: Dict[str, float]
    binary: Dict[str, int] = {}
    disagreement: Dict[str, float] = {}

    model_config = {"frozen": True}
