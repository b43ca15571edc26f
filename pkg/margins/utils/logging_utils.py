# margins/utils/logging_utils.py
"""
margins Logging Utilities
Root logger setup and structured stage logging (STAGE_START / STAGE_END / STAGE_ERROR)
"""

from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional
import json
import logging
import sys
import time
import traceback

from margins.config import settings

logger = logging.getLogger(__name__)
stage_logger = logging.getLogger("margins.stages")

# Keys redacted from structured log lines
SENSITIVE_FIELDS = {"api_key", "key", "token", "secret", "password"}

PLAIN_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "time": self.formatTime(record),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        return json.dumps(payload, default=str)


def configure_logging(
    level: Optional[str] = None,
    log_file: Optional[str] = None,
    json_lines: Optional[bool] = None,
) -> None:
    """Install stderr (and optional file) handlers on the root logger, replacing earlier ones"""
    level = (level or settings.LOG_LEVEL).upper()
    log_file = log_file if log_file is not None else settings.LOG_FILE
    json_lines = settings.LOG_JSON if json_lines is None else json_lines

    formatter = JsonLineFormatter() if json_lines else logging.Formatter(PLAIN_FORMAT)
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))

    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    for handler in handlers:
        handler.setFormatter(formatter)
        root.addHandler(handler)
    root.setLevel(getattr(logging, level, logging.INFO))


def sanitize(data: Dict[str, Any]) -> Dict[str, Any]:
    clean = {}
    for key, value in data.items():
        if any(sensitive == key.lower() or key.lower().endswith(f"_{sensitive}") for sensitive in SENSITIVE_FIELDS):
            clean[key] = "[REDACTED]"
        elif isinstance(value, dict):
            clean[key] = sanitize(value)
        else:
            clean[key] = value
    return clean


@contextmanager
def stage_timer(stage: str, context: Optional[Dict[str, Any]] = None) -> Iterator[Dict[str, Any]]:
    """
    Log a stage's start, end and failure as JSON lines. The yielded dict is
    merged into the end line, so stages can report what they wrote.
    """
    base = sanitize({"stage": stage, **(context or {})})
    stage_logger.info(f"STAGE_START: {json.dumps(base, default=str)}")
    extra: Dict[str, Any] = {}
    start = time.perf_counter()
    try:
        yield extra
    except Exception as e:
        error_log = {
            **base,
            "elapsed_ms": round((time.perf_counter() - start) * 1000, 1),
            "error_type": type(e).__name__,
            "error_message": str(e),
            "traceback": traceback.format_exc() if settings.ENVIRONMENT == "development" else None,
        }
        stage_logger.error(f"STAGE_ERROR: {json.dumps(error_log, default=str)}")
        raise
    end_log = {**base, **sanitize(extra), "elapsed_ms": round((time.perf_counter() - start) * 1000, 1)}
    stage_logger.info(f"STAGE_END: {json.dumps(end_log, default=str)}")
