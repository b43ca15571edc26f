# margins/schemas/outlier_schema.py
"""
margins Outlier Detection Schemas
Configuration for LOF runs over the three feature spaces
"""

from pydantic import BaseModel, field_validator
from typing import Optional
from enum import Enum


class OutlierSpace(str, Enum):
    TEXT = "text"
    DEMOGRAPHIC = "demographic"
    DISAGREEMENT = "disagreement"


class OutlierConfig(BaseModel):
    space: OutlierSpace
    n_neighbors: Optional[int] = None  # None: size-dependent default
    contamination: float = 0.05
    metric: str = "euclidean"

    model_config = {"frozen": True}

    @field_validator('contamination')
    def validate_contamination(cls, v):
        if not (0.0 < v <= 0.5):
            raise ValueError('contamination must be in (0, 0.5]')
        return v

    @field_validator('n_neighbors')
    def validate_neighbors(cls, v):
        if v is not None and v < 1:
            raise ValueError('n_neighbors must be at least 1')
        return v

    @field_validator('metric')
    def validate_metric(cls, v):
        if v != "euclidean":
            raise ValueError('only the euclidean metric is supported')
        return v
