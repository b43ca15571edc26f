# margins/schemas/scorer_schema.py
"""
margins Scoring Service Schemas
Endpoint configuration and cache entries for Perspective-style scoring APIs
"""

from pydantic import BaseModel, field_validator
from typing import Dict, List, Optional


class ScorerEndpointConfig(BaseModel):
    base_url: str
    model_id: str = "perspective"
    attribute_map: Dict[str, str]  # local toxicity attribute -> remote attribute name
    api_key_env: str = "SCORER_API_KEY"
    requests_per_second: float = 1.0
    max_retries: int = 5
    timeout: float = 30.0
    max_concurrency: int = 1
    api_version: str = "v1alpha1"  # recorded in the report for provenance
    languages: List[str] = ["en"]

    @field_validator('requests_per_second')
    def validate_rate(cls, v):
        if v <= 0:
            raise ValueError('requests_per_second must be positive')
        return v

    @field_validator('max_retries')
    def validate_retries(cls, v):
        if v < 0 or v > 10:
            raise ValueError('max_retries must be between 0 and 10')
        return v

    @field_validator('max_concurrency')
    def validate_concurrency(cls, v):
        if v < 1:
            raise ValueError('max_concurrency must be at least 1')
        return v

    @field_validator('attribute_map')
    def validate_attribute_map(cls, v):
        if not v:
            raise ValueError('attribute_map must name at least one attribute')
        return v


class ScoreCacheEntry(BaseModel):
    text_hash: str
    model_id: str
    attribute: str
    value: float
    fetched_at: str

    @field_validator('value')
    def validate_value(cls, v):
        if not (0.0 <= v <= 1.0):
            raise ValueError('cached score must be in [0, 1]')
        return v

    @property
    def key(self):
        return (self.text_hash, self.model_id, self.attribute)


class ScoreImport(BaseModel):
    path: str
    model_id: str
