"""The client update loop.

Every tick: resolve the pointer, fetch and validate the record, retarget
the forwarder when the newest address changed, probe, and emit a status
line.  Losing the record for two rotation intervals (or repeated probe
failures) switches the forwarder to fail-closed.
"""

from __future__ import annotations

import enum
import json
import logging
import random
import sys
import threading
import warnings
from dataclasses import dataclass
from pathlib import Path

from ..certs import load_root, root_digest
from ..clock import SystemClock
from ..model import StateError, parse_record
from ..namechannel import ChannelError, redact
from .forwarder import DohForwarder, ProbeResult
from .stamp import encode_stamp, proxy_config_fragment, stamp_for

log = logging.getLogger(__name__)


class ClientState(enum.Enum):
    FOLLOWING = "following"
    STALE = "stale"
    FAIL_CLOSED = "fail_closed"


_ALLOWED = {
    (ClientState.FOLLOWING, ClientState.STALE),
    (ClientState.STALE, ClientState.FOLLOWING),
    (ClientState.STALE, ClientState.FAIL_CLOSED),
    (ClientState.FAIL_CLOSED, ClientState.FOLLOWING),
}


@dataclass(frozen=True)
class ClientStatus:
    state: ClientState
    current_ip: str | None
    last_update_at: float | None
    last_probe_latency_ms: float | None

    def as_json(self) -> str:
        return json.dumps({
            "state": self.state.value,
            "current_ip": self.current_ip,
            "last_update_at": self.last_update_at,
            "last_probe_latency_ms": self.last_probe_latency_ms,
        }, separators=(",", ":"))


@dataclass
class ClientConfig:
    name: str
    ca_root_path: str
    update_interval: float = 5.0
    rotation_interval: float = 60.0
    local_listen: tuple[str, int] = ("127.0.0.1", 5353)
    probe_name: str = "example.test"
    probe_failure_threshold: int = 3
    probe_timeout: float = 2.0
    proxy_config_path: str | None = None
    # records carry addresses only; the service port is fixed per deployment
    server_port: int = 443

    def __post_init__(self):
        if not self.name:
            raise ValueError("a pointer name is required")
        if self.update_interval <= 0 or self.rotation_interval <= 0:
            raise ValueError("intervals must be positive")
        if self.update_interval > self.rotation_interval:
            warnings.warn("update interval exceeds rotation interval; the client may miss rotations")
        load_root(self.ca_root_path)

    def __repr__(self):
        return f"ClientConfig(name={redact(self.name)!r}, update_interval={self.update_interval})"


def _stdout_sink(status: ClientStatus):
    print(status.as_json(), file=sys.stdout, flush=True)


class DohClient:
    def __init__(self, config: ClientConfig, channel, forwarder: DohForwarder | None = None,
                 clock=None, status_sink=_stdout_sink, seed=None):
        self.config = config
        self.channel = channel
        root = load_root(config.ca_root_path)
        self.root_hash = root_digest(root)
        root_pem = Path(config.ca_root_path).read_bytes()
        self.forwarder = forwarder or DohForwarder(root_pem, timeout=config.probe_timeout)
        self.clock = clock or SystemClock()
        self.status_sink = status_sink
        self.rng = random.Random(seed)
        self.state = ClientState.STALE
        self.last_ip: str | None = None
        self.last_update_at: float | None = None
        self.last_probe: ProbeResult | None = None
        self.probe_failures = 0
        self.transitions: list[tuple[float, ClientState, ClientState]] = []
        self._started = self.clock.now()
        self.forwarder.fail_closed = False

    @property
    def status(self) -> ClientStatus:
        latency = self.last_probe.latency_ms if self.last_probe and self.last_probe.ok else None
        return ClientStatus(self.state, self.last_ip, self.last_update_at, latency)

    def _fetch_record(self):
        cid = self.channel.resolve_pointer(self.config.name)
        return parse_record(self.channel.fetch_content(cid))

    def tick(self) -> ClientStatus:
        now = self.clock.now()
        try:
            record = self._fetch_record()
        except (ChannelError, StateError) as exc:
            log.info("no usable record this tick: %s", exc)
            record = None

        probe = None
        if record is not None:
            self.last_update_at = now
            newest = str(record.newest)
            if newest != self.last_ip:
                stamp = stamp_for(newest, self.config.server_port, record.query_path, self.root_hash)
                candidates = [str(ip) for ip in reversed(record.ips)]
                self.forwarder.apply_config(stamp, candidates)
                self._emit_proxy_config(stamp)
                self.last_ip = newest
            elif self.forwarder.target and self.forwarder.target.stamp.path != record.query_path:
                # same address, new path: retarget without counting as a new ip
                stamp = stamp_for(newest, self.config.server_port, record.query_path, self.root_hash)
                self.forwarder.apply_config(stamp, [str(ip) for ip in reversed(record.ips)])
            probe = self.forwarder.probe(self.config.probe_name, self.rng)
            self.last_probe = probe
            self.probe_failures = 0 if probe.ok else self.probe_failures + 1

        self._advance(now, record is not None and probe is not None and probe.ok)
        status = self.status
        if self.status_sink:
            self.status_sink(status)
        return status

    def _advance(self, now, healthy: bool):
        since = self.last_update_at if self.last_update_at is not None else self._started
        if healthy:
            nxt = ClientState.FOLLOWING
        elif self.state is ClientState.FOLLOWING:
            nxt = ClientState.STALE
        elif (now + self.config.update_interval > since + 2 * self.config.rotation_interval
              or self.probe_failures >= self.config.probe_failure_threshold):
            # close on the last tick before the 2R staleness deadline would be overshot
            nxt = ClientState.FAIL_CLOSED
        else:
            nxt = self.state
        if nxt is not self.state:
            assert (self.state, nxt) in _ALLOWED, (self.state, nxt)
            self.transitions.append((now, self.state, nxt))
            log.info("client %s -> %s", self.state.value, nxt.value)
            self.state = nxt
        self.forwarder.fail_closed = self.state is ClientState.FAIL_CLOSED

    def _emit_proxy_config(self, stamp):
        if self.config.proxy_config_path:
            Path(self.config.proxy_config_path).write_text(proxy_config_fragment(encode_stamp(stamp)))

    def run_client_loop(self, stop: threading.Event | None = None, ticks: int | None = None):
        stop = stop or threading.Event()
        n = 0
        while not stop.is_set() and (ticks is None or n < ticks):
            self.tick()
            n += 1
            if isinstance(self.clock, SystemClock):
                stop.wait(self.config.update_interval)
            else:
                self.clock.sleep(self.config.update_interval)


def run_client_loop(config: ClientConfig, channel, **kwargs):
    client = DohClient(config, channel, **kwargs)
    client.forwarder.serve(*config.local_listen)
    try:
        client.run_client_loop()
    finally:
        client.forwarder.close()
