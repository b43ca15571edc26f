# margins/schemas/synthetic_schema.py
"""
margins Synthetic Data Schemas
"""

from pydantic import BaseModel, field_validator
from typing import Optional


class PlantedSpec(BaseModel):
    """A rare group whose model errors are inflated"""
    group: Optional[str] = None  # None: the last demographic channel
    prevalence: float = 0.02
    inflation: float = 3.0

    model_config = {"frozen": True}

    @field_validator('prevalence')
    def validate_prevalence(cls, v):
        if not (0.0 < v < 1.0):
            raise ValueError('prevalence must be in (0, 1)')
        return v

    @field_validator('inflation')
    def validate_inflation(cls, v):
        if v <= 0:
            raise ValueError('inflation must be positive')
        return v


class SyntheticConfig(BaseModel):
    n: int = 2000
    n_groups: int = 24
    planted: PlantedSpec = PlantedSpec()
    seed: int = 0
    model_id: str = "synthetic"
    noise_sigma: float = 0.1

    @field_validator('n')
    def validate_n(cls, v):
        if v < 2:
            raise ValueError('n must be at least 2')
        return v

    @field_validator('n_groups')
    def validate_groups(cls, v):
        if not (2 <= v <= 24):
            raise ValueError('n_groups must be between 2 and 24')
        return v

    @field_validator('noise_sigma')
    def validate_sigma(cls, v):
        if v <= 0:
            raise ValueError('noise_sigma must be positive')
        return v
