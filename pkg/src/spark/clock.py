"""Time sources: wall clock for live runs, a tick clock for deterministic replay."""

from __future__ import annotations

import threading
from datetime import datetime, timedelta, timezone


class WallClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)

    def now_iso(self) -> str:
        return self.now().isoformat(timespec="seconds")


class TickClock:
    """Logical clock: every read advances one second from a fixed epoch.

    Reads are strictly monotonic, so stage timestamps stay ordered, and two
    identical runs observe identical timestamps.
    """

    def __init__(self, start: datetime | None = None):
        self._current = start or datetime(2000, 1, 1, tzinfo=timezone.utc)
        self._lock = threading.Lock()

    def now(self) -> datetime:
        with self._lock:
            self._current = self._current + timedelta(seconds=1)
            return self._current

    def now_iso(self) -> str:
        return self.now().isoformat(timespec="seconds")
