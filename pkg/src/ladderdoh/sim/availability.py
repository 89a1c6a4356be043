"""Does a polling client ever aim at a released address?

The server starts with K live addresses and every rotation adds one and
retires the oldest.  Each rotation's record becomes visible ``d`` seconds
after publication; the client looks every ``poll`` seconds and instantly
adopts the newest visible address.  Queries arrive evenly at
``query_rate`` per second and fail when the client's target is no longer
live.

Addresses live on half-open intervals [assigned, released) and the
client's target is piecewise constant, so drops are counted per segment
without stepping through every query.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass


@dataclass(frozen=True)
class AvailabilityScenario:
    K: int = 2
    R: float | tuple[float, float] = 60.0
    d: float = 10.0
    poll: float = 5.0
    query_rate: float = 10.0
    horizon: float = 3600.0
    seed: int | None = 0

    def __post_init__(self):
        if isinstance(self.R, (list, tuple)):
            lo, hi = self.R
            object.__setattr__(self, "R", (float(lo), float(hi)))
            if not 0 < lo <= hi:
                raise ValueError("rotation range must satisfy 0 < min <= max")
        elif self.R <= 0:
            raise ValueError("R must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.d < 0 or self.poll <= 0 or self.query_rate <= 0 or self.horizon <= 0:
            raise ValueError("d >= 0, poll, query_rate and horizon > 0 required")

    @property
    def r_min(self) -> float:
        return self.R[0] if isinstance(self.R, tuple) else self.R

    def ladder_holds(self) -> bool:
        """poll + d < (K-1) * R_min: the client always moves before its address is retired."""
        return self.poll + self.d < (self.K - 1) * self.r_min


@dataclass(frozen=True)
class AvailabilityResult:
    dropped: int
    total: int

    @property
    def drop_rate(self) -> float:
        return self.dropped / self.total if self.total else 0.0


def _queries_in(a: float, b: float, rate: float, total: int) -> int:
    """Queries sit at i / rate for i in [0, total); count those in [a, b)."""
    if b <= a:
        return 0
    lo = max(0, math.ceil(a * rate - 1e-9))
    hi = min(total, math.ceil(b * rate - 1e-9))
    return max(0, hi - lo)


def rotation_times(s: AvailabilityScenario, rng: random.Random) -> list[float]:
    times, t = [], 0.0
    while True:
        t += rng.uniform(*s.R) if isinstance(s.R, tuple) else s.R
        if t >= s.horizon:
            return times
        times.append(t)


def simulate_availability(s: AvailabilityScenario) -> AvailabilityResult:
    rng = random.Random(s.seed)
    rot = rotation_times(s, rng)
    total = int(round(s.query_rate * s.horizon))

    # address ids: 0..K-1 bootstrap (K-1 newest); rotation n adds id K-1+n
    born = {i: 0.0 for i in range(s.K)}
    died: dict[int, float] = {}
    live = list(range(s.K))
    for n, t in enumerate(rot, start=1):
        new = s.K - 1 + n
        born[new] = t
        died[live.pop(0)] = t
        live.append(new)

    # newest address of each published record and when it becomes visible;
    # the client starts in sync with the bootstrap record
    visible = [(0.0, s.K - 1)] + [(t + s.d, s.K - 1 + n) for n, t in enumerate(rot, start=1)]

    # client target segments: (start, end, address id)
    phase = rng.uniform(0, s.poll)
    segments = []
    target, seg_start, v = s.K - 1, 0.0, 1
    k, tick = 0, phase
    while tick < s.horizon:
        while v < len(visible) and visible[v][0] <= tick:
            v += 1
        newest = visible[v - 1][1]
        if newest != target:
            segments.append((seg_start, tick, target))
            target, seg_start = newest, tick
        k += 1
        tick = phase + k * s.poll
    segments.append((seg_start, s.horizon, target))

    dropped = 0
    for a, b, addr in segments:
        lo, hi = born[addr], died.get(addr, math.inf)
        # queries in [a, b) outside [lo, hi)
        dropped += _queries_in(a, min(b, lo), s.query_rate, total)
        dropped += _queries_in(max(a, hi), b, s.query_rate, total)
    return AvailabilityResult(dropped, total)
