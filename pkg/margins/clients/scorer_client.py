"""
margins Scoring Service Client
Perspective-style HTTP scoring with rate limiting, retries and a content-hash cache
"""

from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence
import logging
import os
import time

import httpx
import numpy as np

from margins.config import settings
from margins.schemas.dataset_schema import AttributeChannel, ChannelKind, score_channel_name
from margins.schemas.scorer_schema import ScorerEndpointConfig
from margins.services.dataset import DatasetTable
from margins.utils.cache_utils import ScoreCache, text_hash
from margins.utils.rate_limiter import SlidingWindowRateLimiter
from margins.utils.validators import SchemaError, ScorerError, ScorerParseError, TransientScorerError

logger = logging.getLogger(__name__)

TRANSIENT_STATUSES = (429, 500, 502, 503, 504)
BACKOFF_BASE_SECONDS = 1.0
BACKOFF_FACTOR = 2.0


class RowError:
    """A row whose scores could not be obtained"""

    def __init__(self, row_id: int, error: ScorerError):
        self.row_id = row_id
        self.error = error

    def to_dict(self) -> dict:
        return {"id": self.row_id, **self.error.to_dict()}


class ScorerClient:
    """
    Synchronous httpx client for one scoring endpoint. Requests share a
    sliding-window limiter, so concurrent callers never exceed the rate.
    """

    def __init__(
        self,
        config: ScorerEndpointConfig,
        api_key: Optional[str] = None,
        transport: Optional[httpx.BaseTransport] = None,
        limiter: Optional[SlidingWindowRateLimiter] = None,
        sleep=time.sleep,
    ):
        self.config = config
        self.api_key = api_key if api_key is not None else (os.getenv(config.api_key_env) or settings.SCORER_API_KEY)
        if not self.api_key:
            logger.warning(f"{config.api_key_env} not set; requests will be sent without a key")
        self.limiter = limiter or SlidingWindowRateLimiter(config.requests_per_second)
        self._sleep = sleep
        self.client = httpx.Client(
            timeout=config.timeout,
            transport=transport,
            headers={"User-Agent": settings.HTTP_USER_AGENT},
        )
        self.requests_sent = 0

    def close(self) -> None:
        self.client.close()

    def __enter__(self) -> "ScorerClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _request_body(self, text: str, attributes: Sequence[str]) -> dict:
        return {
            "comment": {"text": text},
            "requestedAttributes": {self.config.attribute_map[a]: {} for a in attributes},
            "languages": self.config.languages,
        }

    def _parse(self, response: httpx.Response, attributes: Sequence[str]) -> Dict[str, float]:
        try:
            payload = response.json()
        except ValueError:
            raise ScorerParseError("response is not JSON", code="SCORER_PARSE_ERROR")
        scores = {}
        for attribute in attributes:
            remote = self.config.attribute_map[attribute]
            try:
                value = float(payload["attributeScores"][remote]["summaryScore"]["value"])
            except (KeyError, TypeError, ValueError):
                raise ScorerParseError(f"no summary score for '{remote}'", field=remote, code="SCORER_PARSE_ERROR")
            if not (0.0 <= value <= 1.0):
                raise ScorerParseError(f"score {value} for '{remote}' is outside [0, 1]", field=remote)
            scores[attribute] = value
        return scores

    def score_text(self, text: str, attributes: Sequence[str]) -> Dict[str, float]:
        """One request for all requested attributes, retried with exponential backoff"""
        body = self._request_body(text, attributes)
        params = {"key": self.api_key} if self.api_key else None
        last_error: Optional[Exception] = None

        for attempt in range(self.config.max_retries + 1):
            self.limiter.acquire()
            self.requests_sent += 1
            try:
                response = self.client.post(self.config.base_url, params=params, json=body)
            except httpx.TransportError as e:
                last_error = e
            else:
                if response.status_code in TRANSIENT_STATUSES:
                    last_error = TransientScorerError(f"HTTP {response.status_code}", code=str(response.status_code))
                elif response.status_code >= 400:
                    raise ScorerError(
                        f"HTTP {response.status_code}: {response.text[:200]}", code=str(response.status_code)
                    )
                else:
                    return self._parse(response, attributes)

            if attempt < self.config.max_retries:
                delay = BACKOFF_BASE_SECONDS * BACKOFF_FACTOR ** attempt
                logger.warning(f"Transient scorer failure ({last_error}); retry {attempt + 1} in {delay:.0f}s")
                self._sleep(delay)

        raise TransientScorerError(
            f"gave up after {self.config.max_retries} retries: {last_error}", code="RETRIES_EXHAUSTED"
        )


def fetch_scores(
    table: DatasetTable,
    config: ScorerEndpointConfig,
    cache_path: Optional[Path],
    client: Optional[ScorerClient] = None,
    errors: Optional[List[RowError]] = None,
) -> DatasetTable:
    """
    Add model-score channels for every mapped attribute. Cached scores are
    reused; each distinct uncached text costs one request.
    """
    attributes = list(config.attribute_map)
    for attribute in attributes:
        if attribute not in table.toxicity_names:
            raise SchemaError(f"attribute_map names unknown toxicity attribute '{attribute}'", field=attribute)
    if len(table) == 0:
        return table

    cache = ScoreCache(cache_path)
    digests = [text_hash(text) for text in table.texts]

    pending: Dict[str, List[str]] = {}
    first_row: Dict[str, int] = {}
    for index, digest in enumerate(digests):
        if digest in pending or digest in first_row:
            continue
        first_row[digest] = index
        missing = [a for a in attributes if cache.get(digest, config.model_id, a) is None]
        if missing:
            pending[digest] = missing

    failed: Dict[str, ScorerError] = {}
    if pending:
        owns_client = client is None
        client = client or ScorerClient(config)
        logger.info(f"Scoring {len(pending)} uncached texts against {config.base_url}")

        def fetch(digest: str) -> None:
            text = table.texts[first_row[digest]]
            try:
                scores = client.score_text(text, pending[digest])
            except ScorerError as e:
                failed[digest] = e
                return
            for attribute, value in scores.items():
                cache.put(digest, config.model_id, attribute, value)

        try:
            with ThreadPoolExecutor(max_workers=config.max_concurrency) as pool:
                list(pool.map(fetch, sorted(pending)))
        finally:
            if owns_client:
                client.close()

    for index, digest in enumerate(digests):
        if digest in failed:
            error = failed[digest]
            logger.warning(f"Row {int(table.ids[index])}: no scores ({error.message})")
            if errors is not None:
                errors.append(RowError(int(table.ids[index]), error))

    channels, values = [], {}
    for attribute in attributes:
        channel = AttributeChannel(
            name=score_channel_name(config.model_id, attribute),
            kind=ChannelKind.MODEL_SCORE,
            model_id=config.model_id,
            target_attribute=attribute,
        )
        column = np.full(len(table), np.nan)
        for index, digest in enumerate(digests):
            value = cache.get(digest, config.model_id, attribute)
            if value is not None:
                column[index] = value
        channels.append(channel)
        values[channel.name] = column
    return table.with_scores(channels, values)
