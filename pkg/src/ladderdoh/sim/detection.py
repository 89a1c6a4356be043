"""How much of the DoH traffic can a censor classify before the server moves?

Flows arrive as a Poisson process with log-normal durations.  A flow can
be handed to one of ``n_proc`` processors only after it ends; processing
starts at max(flow end, earliest free processor) and takes ``t_p``.  The
censor gains nothing from a verdict that lands after the flow end plus
one rotation interval, so such flows are dropped instead of queued.
"""

from __future__ import annotations

import csv
import heapq
import io
import itertools
import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from ..flows import fit_lognormal

log = logging.getLogger(__name__)

TPR_BASELINE = 0.52
# flow-duration row for the moving-target service: mean 742 ms, median 246 ms
_MU, _SIGMA = fit_lognormal(742.0, 246.0)

SWEEP_HEADER = ["lambda", "t_p", "n_proc", "analytic_p", "simulated_p"]


@dataclass(frozen=True)
class DetectionScenario:
    flows_per_minute: float
    t_p: float
    n_proc: int = 1
    t_rotation: float = 60.0
    tpr: float = TPR_BASELINE
    mu_log: float = _MU  # log-milliseconds
    sigma_log: float = _SIGMA
    doh_fraction: float = 0.3
    horizon: float = 3600.0
    n_flows: int | None = None
    warmup: float | None = None
    max_flows: int = 5_000_000
    seed: int | None = 0

    def __post_init__(self):
        if self.flows_per_minute <= 0 or self.t_p <= 0:
            raise ValueError("flow rate and processing time must be positive")
        if self.n_proc < 1:
            raise ValueError("need at least one processor")
        if not 0 <= self.tpr <= 1 or not 0 <= self.doh_fraction <= 1:
            raise ValueError("tpr and doh_fraction are probabilities")
        if self.t_rotation <= 0 or self.sigma_log < 0:
            raise ValueError("invalid rotation interval or duration spread")

    @property
    def lam(self) -> float:
        """Arrival rate in flows per second."""
        return self.flows_per_minute / 60.0

    @property
    def capacity_ratio(self) -> float:
        return self.n_proc / (self.lam * self.t_p)


def analytic_p_detect(s: DetectionScenario) -> float:
    return min(1.0, s.capacity_ratio) * s.tpr


@dataclass(frozen=True)
class DetectionResult:
    processed_fraction: float
    p_detect_doh: float
    n_flows: int
    n_doh: int
    mean_wait: float
    max_wait: float
    utilization: float
    dropped: int
    converged: bool = True


def default_warmup(s: DetectionScenario) -> float:
    """Time for an empty system to reach steady state, in seconds.

    Two parts: the rate of flow *ends* only reaches lambda once the
    duration distribution has played out (its 99.9th percentile), and an
    overloaded censor's backlog then grows at (rho - 1) seconds per second
    until it reaches the rotation interval.  Twice that fill time is used;
    without overload, two rotation intervals.
    """
    settle = math.exp(s.mu_log + 3.09 * s.sigma_log) / 1000.0
    rho = s.lam * s.t_p / s.n_proc
    fill = s.t_rotation / (rho - 1.0) if rho > 1.0 else s.t_rotation
    return settle + 2 * fill


def simulate_detection(s: DetectionScenario) -> DetectionResult:
    """Monte Carlo run of the censor's processing pipeline.

    Flows are served in order of end time, so a flow's fate depends only on
    flows that ended before it.  Statistics cover flows ending between the
    warm-up and the last arrival; later ends would be missing competitors.
    The run is lengthened so at least half its span is past the warm-up,
    up to ``max_flows``; ``converged`` is False if that cap was hit.
    """
    rng = np.random.default_rng(s.seed)
    warm = default_warmup(s) if s.warmup is None else s.warmup
    n = s.n_flows if s.n_flows is not None else rng.poisson(s.lam * s.horizon)
    needed = int(math.ceil(2 * warm * s.lam))
    converged = needed <= s.max_flows
    n = max(int(n), min(needed, s.max_flows), 1)
    arrivals = np.cumsum(rng.exponential(1.0 / s.lam, size=n))
    ends = arrivals + rng.lognormal(s.mu_log, s.sigma_log, size=n) / 1000.0
    is_doh = rng.random(n) < s.doh_fraction

    order = np.argsort(ends, kind="stable")
    free = [0.0] * s.n_proc
    processed = np.zeros(n, dtype=bool)
    waits = np.full(n, np.nan)
    busy = 0.0
    slack = s.t_rotation - s.t_p
    for i, e in zip(order.tolist(), ends[order].tolist()):
        start = max(e, free[0])
        if start - e <= slack:
            heapq.heapreplace(free, start + s.t_p)
            processed[i] = True
            waits[i] = start - e
            busy += s.t_p

    window = (ends >= arrivals[0] + warm) & (ends <= arrivals[-1])
    if not window.any():
        window = np.ones(n, dtype=bool)
    doh = window & is_doh
    frac_all = processed[window].mean()
    frac_doh = processed[doh].mean() if doh.any() else math.nan
    span = max(ends.max() - arrivals[0], s.t_p)
    return DetectionResult(
        processed_fraction=float(frac_all),
        p_detect_doh=float(frac_doh * s.tpr),
        n_flows=n,
        n_doh=int(doh.sum()),
        mean_wait=float(np.nanmean(waits)) if processed.any() else math.nan,
        max_wait=float(np.nanmax(waits)) if processed.any() else math.nan,
        utilization=float(min(1.0, busy / (span * s.n_proc))),
        dropped=int((~processed).sum()),
        converged=converged,
    )


def sweep_detection(flows_per_minute: Sequence[float], t_p: Sequence[float], n_proc: Sequence[int],
                    base: DetectionScenario | None = None, simulate: bool = True) -> list[dict]:
    """Evaluate every grid point. All points share the base seed (common random numbers)."""
    if not (flows_per_minute and t_p and n_proc):
        raise ValueError("every grid axis needs at least one value")
    base = base or DetectionScenario(flows_per_minute=flows_per_minute[0], t_p=t_p[0], n_flows=20000)
    rows = []
    for fpm, tp, k in itertools.product(flows_per_minute, t_p, n_proc):
        sc = replace(base, flows_per_minute=fpm, t_p=tp, n_proc=k)
        sim_p = math.nan
        if simulate:
            res = simulate_detection(sc)
            sim_p = res.p_detect_doh
            if not res.converged:
                log.warning("lambda=%g t_p=%g n_proc=%d is near critical load; "
                            "simulated value still carries start-up bias", sc.lam, tp, k)
        rows.append({
            "lambda": sc.lam,
            "t_p": tp,
            "n_proc": k,
            "analytic_p": analytic_p_detect(sc),
            "simulated_p": sim_p,
        })
    return rows


def sweep_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, SWEEP_HEADER, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(float(r[k])) if k != "n_proc" else r[k] for k in SWEEP_HEADER})
    return buf.getvalue()


def gnuplot_script(csv_path: str, tpr: float = TPR_BASELINE) -> str:
    """Plot analytic detection probability against lambda, one curve per (t_p, n_proc)."""
    return "\n".join([
        "set datafile separator ','",
        "set logscale x",
        "set xlabel 'flows per second'",
        "set ylabel 'P(detect DoH)'",
        "set yrange [0:1]",
        f"set arrow from graph 0, first {tpr} to graph 1, first {tpr} nohead dt 2",
        f"plot '{csv_path}' using 1:4 every ::1 with points title 'analytic', \\",
        f"     '{csv_path}' using 1:5 every ::1 with points title 'simulated'",
        "",
    ])
