# margins/utils/cache_utils.py
"""
margins Caching Utilities
Append-only JSON-lines cache of model scores keyed by text content hash
"""

from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple
import hashlib
import json
import logging
import threading

from pydantic import ValidationError

from margins.schemas.scorer_schema import ScoreCacheEntry
from margins.utils.helpers import utc_timestamp

logger = logging.getLogger(__name__)

CacheKey = Tuple[str, str, str]


def text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class ScoreCache:
    """
    In-memory view of a JSONL score cache; every put is appended to the file
    under a lock so concurrent fetchers never interleave lines.
    """

    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path else None
        self._entries: Dict[CacheKey, ScoreCacheEntry] = {}
        self._lock = threading.Lock()
        self._load()

    def _load(self) -> None:
        if not self.path or not self.path.exists():
            return
        skipped = 0
        with open(self.path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if not line:
                    continue
                try:
                    entry = ScoreCacheEntry(**json.loads(line))
                except (json.JSONDecodeError, TypeError, ValidationError):
                    skipped += 1
                    continue
                self._entries[entry.key] = entry
        if skipped:
            logger.warning(f"Skipped {skipped} unreadable lines in score cache {self.path}")
        logger.info(f"Score cache {self.path.name}: {len(self._entries)} entries")

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, text_digest: str, model_id: str, attribute: str) -> Optional[float]:
        entry = self._entries.get((text_digest, model_id, attribute))
        return entry.value if entry else None

    def put(self, text_digest: str, model_id: str, attribute: str, value: float) -> ScoreCacheEntry:
        entry = ScoreCacheEntry(
            text_hash=text_digest,
            model_id=model_id,
            attribute=attribute,
            value=value,
            fetched_at=utc_timestamp(),
        )
        with self._lock:
            self._entries[entry.key] = entry
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as handle:
                    handle.write(json.dumps(entry.model_dump(), sort_keys=True) + "\n")
        return entry

    def entries(self) -> Iterable[ScoreCacheEntry]:
        return list(self._entries.values())
