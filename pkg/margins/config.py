"""
margins Configuration Management
Environment-based process settings with validation
"""

from pydantic_settings import BaseSettings
from pydantic import ConfigDict
from typing import Optional
import os


class Settings(BaseSettings):
    """Process-level settings with environment variable support"""

    model_config = ConfigDict(
        env_file=".env",
        case_sensitive=True,
        extra='ignore'
    )

    # App Configuration
    APP_NAME: str = "margins"
    ENVIRONMENT: str = "development"

    # Logging
    LOG_LEVEL: str = "INFO"
    LOG_FILE: Optional[str] = None
    LOG_JSON: bool = False

    # Scoring service
    SCORER_API_KEY: Optional[str] = None
    HTTP_USER_AGENT: str = "margins-audit/1.0"

    # Compute
    DEFAULT_THREADS: int = 1
    LOF_BLOCK_SIZE: int = 256  # query rows per distance block


def validate_settings(current: Settings) -> None:
    """Validate settings that would otherwise fail deep inside a stage"""
    errors = []

    if current.DEFAULT_THREADS < 1:
        errors.append("DEFAULT_THREADS must be at least 1")

    if current.LOF_BLOCK_SIZE < 1:
        errors.append("LOF_BLOCK_SIZE must be at least 1")

    if current.LOG_LEVEL.upper() not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
        errors.append(f"LOG_LEVEL '{current.LOG_LEVEL}' is not a logging level")

    if errors:
        raise ValueError(f"Configuration errors: {', '.join(errors)}")


class DevelopmentConfig(Settings):
    LOG_LEVEL: str = "DEBUG"


class ProductionConfig(Settings):
    LOG_LEVEL: str = "WARNING"
    LOG_JSON: bool = True


class TestingConfig(Settings):
    LOG_LEVEL: str = "WARNING"
    LOF_BLOCK_SIZE: int = 64


def get_settings() -> Settings:
    """Get settings based on environment"""
    env = os.getenv("ENVIRONMENT", "development").lower()

    if env == "production":
        return ProductionConfig()
    elif env == "testing":
        return TestingConfig()
    else:
        return DevelopmentConfig()


settings = get_settings()
