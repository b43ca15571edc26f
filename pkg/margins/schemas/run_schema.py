# margins/schemas/run_schema.py
"""
margins Run Configuration Schemas
The per-run JSON document passed with --config
"""

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from typing import Dict, List, Optional
from pathlib import Path
import json

from margins.config import settings
from margins.schemas.audit_schema import DEFAULT_MIN_SUPPORT, MARGINALIZED_UNIONS, BreakdownName
from margins.schemas.outlier_schema import OutlierConfig, OutlierSpace
from margins.schemas.scorer_schema import ScoreImport, ScorerEndpointConfig
from margins.utils.helpers import canonical_json, sha256_bytes
from margins.utils.validators import ConfigError

# Percentages; see SweepSettings.percent
DEFAULT_SWEEP_SCHEDULE = [0.1, 0.25, 0.5, 0.75, 1, 2.5, 5, 7.5, 10, 15, 20, 25, 30, 35, 40]

HASH_EXCLUDED_FIELDS = {"threads", "output_dir"}


class EmbeddingSettings(BaseModel):
    dim: int = 64
    min_df: int = 5
    external_path: Optional[str] = None

    @field_validator('dim')
    def validate_dim(cls, v):
        if v < 2:
            raise ValueError('embedding dim must be at least 2')
        return v

    @field_validator('min_df')
    def validate_min_df(cls, v):
        if v < 1:
            raise ValueError('min_df must be at least 1')
        return v


class BreakdownSettings(BaseModel):
    schemas: List[BreakdownName] = [BreakdownName.MARGINALIZED, BreakdownName.BINARY, BreakdownName.INTERSECTIONAL]
    min_support: int = DEFAULT_MIN_SUPPORT
    unions: Dict[str, List[str]] = MARGINALIZED_UNIONS

    @field_validator('schemas')
    def validate_schemas(cls, v):
        if BreakdownName.OUTLIER in v:
            raise ValueError('outlier groups join every breakdown pool; do not list them as a breakdown')
        return v


class SweepSettings(BaseModel):
    schedule: List[float] = DEFAULT_SWEEP_SCHEDULE
    percent: bool = True
    spaces: List[OutlierSpace] = [OutlierSpace.DEMOGRAPHIC]


def _default_outliers() -> List[OutlierConfig]:
    return [OutlierConfig(space=space) for space in OutlierSpace]


class RunConfig(BaseModel):
    dataset_path: str
    schema_path: Optional[str] = None  # None: the default identity-annotated schema
    seed: int = 0
    threads: int = Field(default_factory=lambda: settings.DEFAULT_THREADS)
    output_dir: str = "out"

    sample_fraction: Optional[float] = None
    dedup_text: bool = False
    toxicity_types: Optional[List[str]] = None

    embedding: EmbeddingSettings = EmbeddingSettings()
    outliers: List[OutlierConfig] = _default_outliers()
    spaces: List[OutlierSpace] = list(OutlierSpace)

    scorer: Optional[ScorerEndpointConfig] = None
    score_imports: List[ScoreImport] = []
    score_cache: str = ".margins_cache/scores.jsonl"

    breakdown: BreakdownSettings = BreakdownSettings()
    alpha: float = 0.05
    chi2_correction: bool = False
    sweep: SweepSettings = SweepSettings()

    @field_validator('threads')
    def validate_threads(cls, v):
        if v < 1:
            raise ValueError('threads must be at least 1')
        return v

    @field_validator('sample_fraction')
    def validate_fraction(cls, v):
        if v is not None and not (0.0 < v <= 1.0):
            raise ValueError('sample_fraction must be in (0, 1]')
        return v

    @field_validator('alpha')
    def validate_alpha(cls, v):
        if not (0.0 < v < 1.0):
            raise ValueError('alpha must be in (0, 1)')
        return v

    @model_validator(mode="after")
    def check_outliers(self):
        spaces = [c.space for c in self.outliers]
        if len(set(spaces)) != len(spaces):
            raise ValueError('each outlier space may be configured once')
        return self

    def outlier_config(self, space: OutlierSpace) -> OutlierConfig:
        for config in self.outliers:
            if config.space == space:
                return config
        return OutlierConfig(space=space)

    @property
    def active_spaces(self) -> List[OutlierSpace]:
        return [space for space in OutlierSpace if space in self.spaces]

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON, ignoring fields that never change results"""
        payload = self.model_dump(mode="json", exclude=HASH_EXCLUDED_FIELDS)
        return sha256_bytes(canonical_json(payload).encode("utf-8"))

    def check_paths(self) -> None:
        for field, value in (("dataset_path", self.dataset_path), ("schema_path", self.schema_path),
                             ("embedding.external_path", self.embedding.external_path)):
            if value is not None and not Path(value).exists():
                raise ConfigError(f"{field} does not exist: {value}", field=field)
        for entry in self.score_imports:
            if not Path(entry.path).exists():
                raise ConfigError(f"score import does not exist: {entry.path}", field="score_imports")


def _resolve(base: Path, value: Optional[str]) -> Optional[str]:
    if value is None or Path(value).is_absolute():
        return value
    return str(base / value)


def load_run_config(path: Path, **overrides) -> RunConfig:
    """
    Read a RunConfig JSON file. Relative paths are resolved against the
    config file's directory; non-None overrides replace top-level fields.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", field="config")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}", field="config")

    base = path.resolve().parent
    for key in ("dataset_path", "schema_path", "output_dir", "score_cache"):
        if key in data:
            data[key] = _resolve(base, data[key])
    if data.get("embedding", {}).get("external_path"):
        data["embedding"]["external_path"] = _resolve(base, data["embedding"]["external_path"])
    for entry in data.get("score_imports", []):
        entry["path"] = _resolve(base, entry["path"])

    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"invalid run config: {field}: {first['msg']}", field=field)
