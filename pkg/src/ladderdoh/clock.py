"""Wall and virtual clocks.

The daemons only ever call ``now()`` and ``sleep()``, so a
:class:`VirtualClock` lets tests run ten rotations in well under a second
of real time while the network path stays real.
"""

from __future__ import annotations

import threading
import time


class SystemClock:
    def now(self) -> float:
        return time.time()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class VirtualClock:
    """Manually advanced clock. ``sleep`` just moves time forward."""

    def __init__(self, start: float | None = None):
        self._now = time.time() if start is None else float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("time only moves forward")
        with self._lock:
            self._now += seconds
            return self._now

    def set(self, t: float) -> None:
        with self._lock:
            if t < self._now:
                raise ValueError("time only moves forward")
            self._now = t

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self.advance(seconds)
