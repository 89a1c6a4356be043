"""Ping-adjusted DNS resolution timing.

Each sample times one lookup and one "ping" against the same endpoint and
reports ``adjusted = total - ping``, which strips the network round trip
and leaves resolver-side work.  Ping is the TCP connect time to the
service port, which needs no privileges (unlike ICMP).
"""

from __future__ import annotations

import csv
import http.client
import io
import math
import random
import socket
import statistics
import time
import urllib.parse
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import dns.exception
import dns.message
import dns.query
import dns.rcode

from . import dnsutil

SAMPLE_HEADER = ["resolver_id", "domain", "total_ms", "ping_ms", "adjusted_ms"]
REPORT_HEADER = ["resolver_id", "n", "mean_ms", "median_ms", "std_ms", "ci_low_ms", "ci_high_ms", "status"]
PING_METHOD = "tcp-connect"


class ResolverDown(Exception):
    pass


def tcp_ping(host: str, port: int, timeout: float = 2.0) -> None:
    with socket.create_connection((host, port), timeout=timeout):
        pass


class DohTarget:
    """A DoH endpoint given as an https URL. ``context`` can pin a private root."""

    def __init__(self, url: str, context=None, timeout: float = 3.0, resolver_id: str | None = None):
        parts = urllib.parse.urlsplit(url)
        self.id = resolver_id or url
        self.host = parts.hostname
        self.port = parts.port or 443
        self.path = parts.path or "/dns-query"
        self.context = context
        self.timeout = timeout

    def ping(self):
        tcp_ping(self.host, self.port, self.timeout)

    def query(self, qname: str):
        wire = dnsutil.make_query(qname)
        conn = http.client.HTTPSConnection(self.host, self.port, timeout=self.timeout, context=self.context)
        try:
            conn.request("POST", self.path, body=wire, headers={"Content-Type": "application/dns-message"})
            resp = conn.getresponse()
            body = resp.read()
        except OSError as exc:
            raise ResolverDown(str(exc)) from exc
        finally:
            conn.close()
        if resp.status != 200:
            raise ResolverDown(f"HTTP {resp.status}")
        return dns.message.from_wire(body).rcode()


class Do53Target:
    """Plain DNS over UDP; ping is a TCP connect to the same port."""

    def __init__(self, host: str, port: int = 53, timeout: float = 3.0, resolver_id: str | None = None):
        self.id = resolver_id or f"{host}:{port}"
        self.host, self.port, self.timeout = host, port, timeout

    def ping(self):
        tcp_ping(self.host, self.port, self.timeout)

    def query(self, qname: str):
        q = dns.message.make_query(qname, "A")
        try:
            return dns.query.udp(q, self.host, port=self.port, timeout=self.timeout).rcode()
        except (OSError, dns.exception.Timeout) as exc:
            raise ResolverDown(str(exc)) from exc


class SyntheticTarget:
    """Resolver with injected latencies, for exercising the harness itself."""

    def __init__(self, resolver_id: str, service_ms: float, ping_ms: float, up: bool = True):
        self.id = resolver_id
        self.service_ms = service_ms
        self.ping_ms = ping_ms
        self.up = up

    def ping(self):
        if not self.up:
            raise ResolverDown("unreachable")
        time.sleep(self.ping_ms / 1000)

    def query(self, qname: str):
        if not self.up:
            raise ResolverDown("unreachable")
        time.sleep(self.service_ms / 1000)
        return dns.rcode.NOERROR


@dataclass(frozen=True)
class BenchSample:
    resolver_id: str
    domain: str
    total_ms: float
    ping_ms: float

    @property
    def adjusted_ms(self) -> float:
        return self.total_ms - self.ping_ms


@dataclass(frozen=True)
class ResolverStats:
    resolver_id: str
    n: int
    mean: float
    median: float
    std: float
    ci_low: float
    ci_high: float
    reachable: bool = True


@dataclass
class BenchReport:
    samples: list[BenchSample] = field(default_factory=list)
    stats: dict[str, ResolverStats] = field(default_factory=dict)
    errors: dict[str, int] = field(default_factory=dict)
    ping_method: str = PING_METHOD

    def ranking(self) -> list[str]:
        ok = [s for s in self.stats.values() if s.reachable]
        return [s.resolver_id for s in sorted(ok, key=lambda s: s.mean)]

    def samples_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SAMPLE_HEADER)
        for s in self.samples:
            w.writerow([s.resolver_id, s.domain, repr(s.total_ms), repr(s.ping_ms), repr(s.adjusted_ms)])
        return buf.getvalue()

    def report_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for s in self.stats.values():
            w.writerow([s.resolver_id, s.n, f"{s.mean:.3f}", f"{s.median:.3f}", f"{s.std:.3f}",
                        f"{s.ci_low:.3f}", f"{s.ci_high:.3f}", "ok" if s.reachable else "unreachable"])
        return buf.getvalue()


def summarize(resolver_id: str, adjusted: Sequence[float]) -> ResolverStats:
    """Mean, median, sample std and a normal-approximation 95% interval."""
    n = len(adjusted)
    if n == 0:
        nan = math.nan
        return ResolverStats(resolver_id, 0, nan, nan, nan, nan, nan, reachable=False)
    mean = statistics.fmean(adjusted)
    std = statistics.stdev(adjusted) if n > 1 else 0.0
    half = 1.96 * std / math.sqrt(n)
    return ResolverStats(resolver_id, n, mean, statistics.median(adjusted), std, mean - half, mean + half)


def _run_target(target, domains, n_per, randomize, rng):
    samples, errors = [], 0
    for i in range(n_per):
        domain = domains[i % len(domains)]
        qname = f"{dnsutil.random_label(rng)}.{domain}" if randomize else domain
        try:
            t0 = time.perf_counter()
            target.ping()
            t1 = time.perf_counter()
            target.query(qname)
            t2 = time.perf_counter()
        except (ResolverDown, OSError):
            errors += 1
            continue
        samples.append(BenchSample(target.id, domain, (t2 - t1) * 1000, (t1 - t0) * 1000))
    return samples, errors


def bench_dns(targets: Sequence, domains: Sequence[str], n_per: int = 100,
              randomize_subdomains: bool = True, seed=None, parallel: bool = False) -> BenchReport:
    """Time ``n_per`` lookups per target, cycling through ``domains``.

    ``total_ms`` covers only the lookup; ``ping_ms`` is measured right before
    it on the same endpoint.  A random label is prepended to each name when
    ``randomize_subdomains`` is set so upstream caches cannot help.
    """
    if not targets or not domains:
        raise ValueError("need at least one resolver and one domain")
    rngs = [random.Random(None if seed is None else f"{seed}:{t.id}") for t in targets]
    jobs = list(zip(targets, rngs))
    if parallel:
        with ThreadPoolExecutor(len(jobs)) as pool:
            results = list(pool.map(lambda j: _run_target(j[0], domains, n_per, randomize_subdomains, j[1]), jobs))
    else:
        results = [_run_target(t, domains, n_per, randomize_subdomains, r) for t, r in jobs]
    report = BenchReport()
    for target, (samples, errors) in zip(targets, results):
        report.samples += samples
        report.errors[target.id] = errors
        report.stats[target.id] = summarize(target.id, [s.adjusted_ms for s in samples])
    return report
