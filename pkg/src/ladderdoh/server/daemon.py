"""The rotation loop.

Each iteration: pull a fresh address, move the interface holding the
oldest one onto it, release the displaced address, reissue the leaf for
the live set, mint a new query path, swap credentials, then publish the
new record.  Publication always comes after the new address is served.
"""

from __future__ import annotations

import ipaddress
import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field

from .. import namechannel
from ..certs import CaBundle, ServerCertificate, issue_server_cert
from ..clock import SystemClock
from ..model import (
    RotationState,
    ServiceRecord,
    canonical_record_bytes,
    generate_query_path,
    initial_state,
    is_valid_query_path,
    rotation_step,
)
from ..provider import PoolExhausted
from .doh import FORBIDDEN_PORTS, CredentialSlot, HttpsListener, make_credentials
from .upstream import DohUpstream, Resolver

log = logging.getLogger(__name__)


class CredentialMismatch(ValueError):
    pass


@dataclass
class ServerConfig:
    name: str
    app_interfaces: int = 2
    rotation_interval: float = 60.0
    # if set, each interval is drawn uniformly from [min, max]
    rotation_range: tuple[float, float] | None = None
    upstreams: tuple[str, ...] = ()
    static_zone: dict[str, str] = field(default_factory=dict)
    listen: bool = True
    listen_port: int = 0
    fresh_keys: bool = False
    strict_verify: bool = False
    publish_retries: int = 3
    retry_backoff: float = 1.0

    def __post_init__(self):
        if not self.name:
            raise ValueError("a pointer name is required")
        if self.app_interfaces < 1:
            raise ValueError("need at least one application interface")
        if self.rotation_interval <= 0:
            raise ValueError("rotation interval must be positive")
        if self.rotation_range is not None:
            lo, hi = self.rotation_range
            if not 0 < lo <= hi:
                raise ValueError("rotation range must satisfy 0 < min <= max")
        if self.listen_port in FORBIDDEN_PORTS:
            raise ValueError(f"port {self.listen_port} is reserved for plain DNS/DoT")

    def next_interval(self, rng: random.Random) -> float:
        if self.rotation_range is None:
            return self.rotation_interval
        return rng.uniform(*self.rotation_range)


@dataclass(frozen=True)
class RotationReport:
    iteration: int
    new_ip: str
    released_ip: str | None
    cid: str | None
    path_len: int
    duration_ms: float

    def as_json(self) -> str:
        return json.dumps(self.__dict__, separators=(",", ":"))


class DohServer:
    def __init__(self, config: ServerConfig, provider, channel, ca: CaBundle,
                 clock=None, seed=None, upstreams=None):
        if config.app_interfaces != len(provider.interfaces):
            raise ValueError("provider interface count does not match config")
        self.config = config
        self.provider = provider
        self.channel = channel
        self.ca = ca
        self.clock = clock or SystemClock()
        self.rng = random.Random(seed)
        if upstreams is None:
            upstreams = [DohUpstream(u) for u in config.upstreams]
        self.resolver = Resolver(upstreams, config.static_zone, random.Random(self.rng.random()))
        self.slot = CredentialSlot()
        self.listeners: dict[ipaddress.IPv4Address, HttpsListener] = {}
        self.state: RotationState | None = None
        self.paths: tuple[str, ...] = ()
        self.port = config.listen_port
        self.iteration = 0
        self.published: list[tuple[ServiceRecord, str]] = []
        self.reports: list[RotationReport] = []
        self._lock = threading.RLock()

    # -- queries ---------------------------------------------------------
    @property
    def live_addresses(self) -> tuple:
        return self.state.addresses if self.state else ()

    @property
    def live_certificate(self) -> ServerCertificate | None:
        creds = self.slot.current()
        return creds.certificate if creds else None

    @property
    def active_paths(self) -> tuple[str, ...]:
        creds = self.slot.current()
        return creds.paths if creds else ()

    def bound_ports(self) -> set[int]:
        return {lst.server_address[1] for lst in self.listeners.values()}

    # -- lifecycle -------------------------------------------------------
    def start(self) -> ServiceRecord:
        """Bootstrap K addresses, credentials and listeners; publish the first record."""
        with self._lock:
            addrs = []
            for iface in self.provider.interfaces:
                addr = self.provider.allocate()
                self.provider.assign(addr, iface)
                addrs.append(addr)
            now = self.clock.now()
            self.state = initial_state(addrs, self.provider.interfaces, now, self.config.rotation_interval)
            paths = tuple(generate_query_path(self.rng) for _ in addrs)
            self.swap_live_credentials(self._issue(None), paths)
            for addr in addrs:
                self._listen(addr)
            record = ServiceRecord(self.state.addresses, paths[-1], int(now))
            cid = self._publish(record)
            log.info(json.dumps({"iteration": 0, "bootstrap": [str(a) for a in addrs],
                                 "cid": cid and cid[:16]}))
            return record

    def stop(self):
        with self._lock:
            for lst in self.listeners.values():
                lst.stop()
            self.listeners.clear()

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()

    # -- one iteration ---------------------------------------------------
    def rotate_once(self) -> RotationReport | None:
        """Run one rotation. Returns None if the pool is exhausted; the old ladder keeps serving."""
        with self._lock:
            t0 = time.perf_counter()
            try:
                new_addr = self.provider.allocate()
            except PoolExhausted as exc:
                log.warning("rotation skipped: %s", exc)
                return None
            iface = self.state.oldest.interface
            state, released = rotation_step(self.state, new_addr, self.clock.now())
            self.provider.assign(new_addr, iface)
            self.state = state

            # the released address leaves the interface: nothing answers there anymore
            listener = self.listeners.pop(released, None)
            if listener is not None:
                listener.stop()
            self.provider.release(released)

            cert = self._issue(self.live_certificate)
            path = generate_query_path(self.rng)
            self.swap_live_credentials(cert, self.paths[1:] + (path,))
            self._listen(new_addr)

            record = ServiceRecord(state.addresses, path, int(self.clock.now()))
            cid = self._publish(record)
            self.iteration += 1
            report = RotationReport(self.iteration, str(new_addr), str(released), cid, len(path) - 1,
                                    round((time.perf_counter() - t0) * 1000, 3))
            self.reports.append(report)
            log.info(report.as_json())
            return report

    def swap_live_credentials(self, cert: ServerCertificate, paths) -> None:
        paths = tuple(paths)
        live = set(self.state.addresses)
        if set(cert.san_ips) != live:
            raise CredentialMismatch("certificate SAN set does not match live addresses")
        if len(paths) != len(live) or not all(map(is_valid_query_path, paths)):
            raise CredentialMismatch("need one valid path per live lease")
        self.slot.swap(make_credentials(cert, paths))
        self.paths = paths

    def run_rotation_loop(self, stop: threading.Event | None = None, iterations: int | None = None):
        """Rotate every interval until ``stop`` is set or ``iterations`` rotations are done."""
        stop = stop or threading.Event()
        if self.state is None:
            self.start()
        done = 0
        backoff = self.config.retry_backoff
        while not stop.is_set() and (iterations is None or done < iterations):
            wait = self.config.next_interval(self.rng)
            self._sleep(wait, stop)
            if stop.is_set():
                break
            if self.rotate_once() is None:
                self._sleep(min(backoff, wait), stop)
                backoff *= 2
                continue
            backoff = self.config.retry_backoff
            done += 1

    # -- helpers ---------------------------------------------------------
    def _sleep(self, seconds, stop):
        if isinstance(self.clock, SystemClock):
            stop.wait(seconds)
        else:
            self.clock.sleep(seconds)

    def _issue(self, previous: ServerCertificate | None) -> ServerCertificate:
        key = None if (previous is None or self.config.fresh_keys) else previous.private_key
        # validity is judged by TLS peers on wall time, so issue on wall time
        return issue_server_cert(self.ca, self.state.addresses, key=key)

    def _listen(self, addr):
        if not self.config.listen:
            return
        lst = HttpsListener((str(addr), self.port), self.slot, self.resolver.resolve)
        if not self.port:
            self.port = lst.server_address[1]
        self.listeners[addr] = lst.start()

    def _publish(self, record: ServiceRecord) -> str | None:
        data = canonical_record_bytes(record)
        delay = self.config.retry_backoff
        for attempt in range(self.config.publish_retries):
            try:
                cid = namechannel.publish_and_verify(self.channel, self.config.name, data,
                                                     strict=self.config.strict_verify)
            except namechannel.TransportError as exc:
                log.warning("publish attempt %d failed: %s", attempt + 1, exc)
                if attempt + 1 < self.config.publish_retries:
                    # transport backoff is real time even under a virtual clock
                    time.sleep(delay)
                    delay *= 2
                continue
            self.published.append((record, cid))
            return cid
        log.error("record for %s not published; serving continues", record.newest)
        return None


def run_rotation_loop(config: ServerConfig, provider, channel, ca: CaBundle, **kwargs):
    server = DohServer(config, provider, channel, ca, **kwargs)
    with server:
        server.run_rotation_loop()
