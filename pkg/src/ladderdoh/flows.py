"""Packet logs to bidirectional flows, per-flow features, clump and duration statistics.

Input is JSONL, one packet per line::

    {"ts": 1.25, "src_ip": "10.0.0.2", "dst_ip": "10.0.0.9",
     "src_port": 50412, "dst_port": 443, "proto": "tcp", "payload_len": 517}
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize, stats

from .model import IpAddress, as_address

DEFAULT_IDLE_TIMEOUT = 30.0
DEFAULT_CLUMP_GAP = 0.1
LABELS = ("doh", "non_doh", "moving_doh", "unknown")

FLOW_HEADER = ["flow_id", "proto", "client_ip", "client_port", "server_ip", "server_port",
               "first_ts", "last_ts", "packets_c2s", "packets_s2c", "bytes_c2s", "bytes_s2c", "label"]
FEATURE_HEADER = ["flow_id", "mean_payload_size", "num_packets", "c2s_ratio",
                  "mean_time_between_packets", "duration_ms", "label"]
CLUMP_HEADER = ["flow_id", "clumps"]
DURATION_HEADER = ["label", "mean_ms", "median_ms", "skewness", "n"]


@dataclass(frozen=True)
class PacketRecord:
    ts: float
    src_ip: IpAddress
    dst_ip: IpAddress
    src_port: int
    dst_port: int
    proto: str
    payload_len: int

    def __post_init__(self):
        object.__setattr__(self, "src_ip", as_address(self.src_ip))
        object.__setattr__(self, "dst_ip", as_address(self.dst_ip))
        if not math.isfinite(self.ts):
            raise ValueError("timestamp must be finite")
        for port in (self.src_port, self.dst_port):
            if not 0 <= port <= 65535:
                raise ValueError(f"port {port} out of range")
        if self.proto not in ("tcp", "udp"):
            raise ValueError(f"unsupported protocol {self.proto!r}")
        if self.payload_len < 0:
            raise ValueError("payload length must be >= 0")

    @property
    def src(self):
        return (self.src_ip, self.src_port)

    @property
    def dst(self):
        return (self.dst_ip, self.dst_port)

    def flow_key(self):
        a, b = sorted([self.src, self.dst])
        return (self.proto, a, b)

    def as_dict(self) -> dict:
        return {"ts": self.ts, "src_ip": str(self.src_ip), "dst_ip": str(self.dst_ip),
                "src_port": self.src_port, "dst_port": self.dst_port, "proto": self.proto,
                "payload_len": self.payload_len}


def read_packets(lines: Iterable[str]) -> tuple[list[PacketRecord], int]:
    """Parse JSONL lines. Returns (packets, number of malformed lines skipped)."""
    packets, skipped = [], 0
    for line in lines:
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
            packets.append(PacketRecord(
                float(doc["ts"]), doc["src_ip"], doc["dst_ip"], int(doc["src_port"]),
                int(doc["dst_port"]), str(doc["proto"]).lower(), int(doc["payload_len"]),
            ))
        except (ValueError, KeyError, TypeError):
            skipped += 1
    return packets, skipped


def write_packets(packets: Iterable[PacketRecord], fh):
    for p in packets:
        fh.write(json.dumps(p.as_dict(), separators=(",", ":")) + "\n")


@dataclass(frozen=True)
class FlowRecord:
    key: tuple
    client: tuple
    server: tuple
    first_ts: float
    last_ts: float
    packets_c2s: int
    packets_s2c: int
    bytes_c2s: int
    bytes_s2c: int
    inter_arrival_gaps: tuple[float, ...]
    label: str = "unknown"

    @property
    def num_packets(self) -> int:
        return self.packets_c2s + self.packets_s2c

    @property
    def duration_ms(self) -> float:
        return (self.last_ts - self.first_ts) * 1000.0

    @property
    def times(self) -> np.ndarray:
        return self.first_ts + np.concatenate([[0.0], np.cumsum(self.inter_arrival_gaps)])


@dataclass
class _Open:
    client: tuple
    server: tuple
    first_ts: float
    last_ts: float
    counts: list = field(default_factory=lambda: [0, 0])
    sizes: list = field(default_factory=lambda: [0, 0])
    gaps: list = field(default_factory=list)

    def add(self, p: PacketRecord):
        if self.counts != [0, 0]:
            self.gaps.append(p.ts - self.last_ts)
        self.last_ts = p.ts
        d = 0 if p.src == self.client else 1
        self.counts[d] += 1
        self.sizes[d] += p.payload_len

    def close(self, key, label) -> FlowRecord:
        return FlowRecord(key, self.client, self.server, self.first_ts, self.last_ts,
                          self.counts[0], self.counts[1], self.sizes[0], self.sizes[1],
                          tuple(self.gaps), label)


def stitch_flows(packets: Iterable[PacketRecord], idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
                 labeler: Callable[[FlowRecord], str] | None = None) -> list[FlowRecord]:
    """Group packets into bidirectional flows.

    Both directions of a 5-tuple share one flow; the client side is whoever
    sent the flow's first packet.  Silence longer than ``idle_timeout``
    closes the flow and the next packet on that key opens a new one.
    Flows come back ordered by first packet time.
    """
    pkts = list(packets)
    if any(b.ts < a.ts for a, b in zip(pkts, pkts[1:])):
        pkts.sort(key=lambda p: p.ts)
    open_: dict[tuple, _Open] = {}
    done: list[tuple[tuple, _Open]] = []
    for p in pkts:
        key = p.flow_key()
        cur = open_.get(key)
        if cur is not None and p.ts - cur.last_ts > idle_timeout:
            done.append((key, cur))
            cur = None
        if cur is None:
            cur = open_[key] = _Open(p.src, p.dst, p.ts, p.ts)
        cur.add(p)
    done.extend(open_.items())
    flows = [o.close(k, "unknown") for k, o in done]
    if labeler is not None:
        flows = [_relabel(f, labeler(f)) for f in flows]
    flows.sort(key=lambda f: (f.first_ts, f.key))
    return flows


def _relabel(flow: FlowRecord, label: str) -> FlowRecord:
    if label not in LABELS:
        raise ValueError(f"unknown label {label!r}")
    return FlowRecord(**{**flow.__dict__, "label": label})


def label_by_server(servers: Iterable, label: str, default: str = "unknown"):
    """Labeler: flows whose server endpoint address is in ``servers`` get ``label``."""
    addrs = {as_address(s) for s in servers}
    return lambda f: label if f.server[0] in addrs else default


@dataclass(frozen=True)
class FlowFeatures:
    mean_payload_size: float
    num_packets: int
    c2s_ratio: float
    mean_time_between_packets: float
    duration_ms: float


def extract_features(flow: FlowRecord) -> FlowFeatures:
    n = flow.num_packets
    gaps = flow.inter_arrival_gaps
    return FlowFeatures(
        mean_payload_size=(flow.bytes_c2s + flow.bytes_s2c) / n,
        num_packets=n,
        c2s_ratio=flow.packets_c2s / max(flow.packets_s2c, 1),
        mean_time_between_packets=float(np.mean(gaps)) if gaps else 0.0,
        duration_ms=flow.duration_ms,
    )


def count_clumps(times: Sequence[float], threshold: float = DEFAULT_CLUMP_GAP) -> int:
    """Number of maximal runs whose consecutive gaps are all below ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if len(times) == 0:
        return 0
    return 1 + int(np.count_nonzero(np.diff(np.asarray(times, dtype=float)) >= threshold))


@dataclass(frozen=True)
class ClumpStats:
    counts: tuple[int, ...]
    mean: float
    std: float
    threshold: float


def clump_stats(flows: Sequence[FlowRecord], gap_threshold: float = DEFAULT_CLUMP_GAP) -> ClumpStats:
    counts = tuple(count_clumps(f.times, gap_threshold) for f in flows)
    arr = np.asarray(counts, dtype=float)
    mean = float(arr.mean()) if len(arr) else math.nan
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return ClumpStats(counts, mean, std, gap_threshold)


@dataclass(frozen=True)
class DurationSummary:
    mean: float
    median: float
    skewness: float
    n: int


def duration_stats(flows) -> DurationSummary:
    """Mean/median (ms), adjusted Fisher-Pearson skewness, count.

    Accepts flow records or plain durations in milliseconds.
    """
    values = np.array([f.duration_ms if isinstance(f, FlowRecord) else float(f) for f in flows])
    if values.size == 0:
        raise ValueError("need at least one flow")
    if values.size < 3:
        skew = math.nan
    elif np.ptp(values) == 0:
        skew = 0.0
    else:
        skew = float(stats.skew(values, bias=False))
    return DurationSummary(float(values.mean()), float(np.median(values)), skew, int(values.size))


def fit_lognormal(mean_ms: float, median_ms: float) -> tuple[float, float]:
    """Log-normal parameters matching a given mean and median.

    median = exp(mu) and mean = exp(mu + sigma^2 / 2), so
    mu = ln(median) and sigma = sqrt(2 ln(mean / median)).
    """
    if not (mean_ms > median_ms > 0):
        raise ValueError("need mean > median > 0 for a positively skewed log-normal")
    return math.log(median_ms), math.sqrt(2.0 * math.log(mean_ms / median_ms))


# -- synthetic traffic ---------------------------------------------------------

def _discrete_truncated_moments(mu: float, sigma: float, kmax: int = 400):
    """Mean and std of round(N(mu, sigma)) conditioned on being >= 1."""
    k = np.arange(1, kmax + 1)
    p = stats.norm.cdf(k + 0.5, mu, sigma) - stats.norm.cdf(k - 0.5, mu, sigma)
    p = p / p.sum()
    m = float((k * p).sum())
    return m, float(math.sqrt(((k - m) ** 2 * p).sum()))


def tune_clump_distribution(mean: float, std: float) -> tuple[float, float]:
    """Underlying normal parameters whose rounded, >=1-truncated draws have the target moments."""
    def resid(x):
        m, s = _discrete_truncated_moments(x[0], abs(x[1]))
        return [m - mean, s - std]
    mu, sigma = optimize.fsolve(resid, [mean, std], xtol=1e-10)
    return float(mu), float(abs(sigma))


def sample_clump_counts(n: int, mean: float, std: float, rng: np.random.Generator) -> np.ndarray:
    mu, sigma = tune_clump_distribution(mean, std)
    out = np.empty(0, dtype=int)
    while out.size < n:
        draw = np.rint(rng.normal(mu, sigma, size=2 * (n - out.size) + 16)).astype(int)
        out = np.concatenate([out, draw[draw >= 1]])
    return out[:n]


def synth_clumped_flow(clumps: int, rng: np.random.Generator, start: float = 0.0,
                       threshold: float = DEFAULT_CLUMP_GAP, client=("10.0.0.2", 50000),
                       server=("198.18.0.10", 443)) -> list[PacketRecord]:
    """Packets for one TCP flow with exactly ``clumps`` clumps at ``threshold``."""
    pkts, t = [], start
    for c in range(clumps):
        if c:
            t += rng.uniform(1.5 * threshold, 20 * threshold)
        for i in range(int(rng.integers(2, 7))):
            if i:
                t += rng.uniform(0.0005, 0.8 * threshold)
            outbound = i % 2 == 0
            src, dst = (client, server) if outbound else (server, client)
            pkts.append(PacketRecord(float(t), src[0], dst[0], src[1], dst[1], "tcp",
                                     int(rng.integers(60, 1400))))
    return pkts


def synth_clumped_trace(n_flows: int, mean: float, std: float, seed=None,
                        threshold: float = DEFAULT_CLUMP_GAP) -> tuple[list[PacketRecord], np.ndarray]:
    """Trace of ``n_flows`` flows on distinct client ports whose clump counts ~ Normal(mean, std)."""
    rng = np.random.default_rng(seed)
    counts = sample_clump_counts(n_flows, mean, std, rng)
    pkts = []
    for i, c in enumerate(counts):
        port = 20000 + i
        pkts += synth_clumped_flow(int(c), rng, start=float(i) * 0.001, threshold=threshold,
                                   client=("10.0.0.2", port))
    return pkts, counts


def sample_durations_ms(n: int, mean_ms: float, median_ms: float, seed=None) -> np.ndarray:
    mu, sigma = fit_lognormal(mean_ms, median_ms)
    return np.random.default_rng(seed).lognormal(mu, sigma, size=n)


# -- CSV -----------------------------------------------------------------------

def _endpoint(ep):
    return str(ep[0]), ep[1]


def flow_rows(flows: Sequence[FlowRecord]):
    for i, f in enumerate(flows):
        cip, cport = _endpoint(f.client)
        sip, sport = _endpoint(f.server)
        yield [i, f.key[0], cip, cport, sip, sport, repr(f.first_ts), repr(f.last_ts),
               f.packets_c2s, f.packets_s2c, f.bytes_c2s, f.bytes_s2c, f.label]


def feature_rows(flows: Sequence[FlowRecord]):
    for i, f in enumerate(flows):
        x = extract_features(f)
        yield [i, repr(x.mean_payload_size), x.num_packets, repr(x.c2s_ratio),
               repr(x.mean_time_between_packets), repr(x.duration_ms), f.label]


def write_csv(header: Sequence[str], rows: Iterable[Sequence], fh=None) -> str | None:
    """Write rows under ``header`` to ``fh``; with no handle, return the text."""
    buf = fh or io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return None if fh else buf.getvalue()
