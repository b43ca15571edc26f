# margins/utils/rate_limiter.py
"""
margins Rate Limiting
Sliding-window limiter for outbound scoring requests
"""

from collections import deque
from typing import Callable, Deque
import logging
import math
import threading
import time

logger = logging.getLogger(__name__)


class SlidingWindowRateLimiter:
    """
    Blocks until a request may be sent without exceeding requests_per_second
    in any window. At >= 1 rps the window is one second holding floor(rps)
    requests; below 1 rps it is one request per 1/rps seconds.
    """

    def __init__(
        self,
        requests_per_second: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if requests_per_second <= 0:
            raise ValueError("requests_per_second must be positive")
        if requests_per_second >= 1:
            self.capacity = int(math.floor(requests_per_second))
            self.window = 1.0
        else:
            self.capacity = 1
            self.window = 1.0 / requests_per_second
        self._clock = clock
        self._sleep = sleep
        self._sent: Deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> float:
        """Reserve a slot; returns the send time"""
        with self._lock:
            while True:
                now = self._clock()
                while self._sent and now - self._sent[0] >= self.window:
                    self._sent.popleft()
                if len(self._sent) < self.capacity:
                    self._sent.append(now)
                    return now
                wait = self._sent[0] + self.window - now
                logger.debug(f"Rate limit reached, waiting {wait:.3f}s")
                self._sleep(wait)
