"""Whole-system runs on one host with an accelerated clock.

The server binds its rotating addresses inside a loopback block, the name
channel is simulated, and virtual time jumps from event to event while all
DNS and TLS traffic still crosses real sockets.
"""

from __future__ import annotations

import heapq
import random
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import dns.message
import dns.rcode

from . import dnsutil
from .certs import CaBundle, init_ca
from .client import ClientConfig, DohClient, udp_query
from .clock import VirtualClock
from .namechannel import SimulatedChannel
from .provider import ProviderConfig, SimulatedProvider
from .server import DohServer, ServerConfig

LOOPBACK_BLOCK = "127.77.0.0/24"


@dataclass
class RunStats:
    queries: int = 0
    failed: int = 0
    rotations: int = 0
    ticks: int = 0
    failures: list = field(default_factory=list)


class Testbed:
    __test__ = False  # not a pytest class

    def __init__(self, zone: dict[str, str], app_interfaces: int = 2, rotation_interval: float = 60.0,
                 delay: float = 10.0, poll: float = 5.0, pool_size: int = 16,
                 block: str = LOOPBACK_BLOCK, seed: int = 0, ca: CaBundle | None = None,
                 name: str = "testbed-pointer"):
        self.zone = dict(zone)
        self.poll = poll
        self.rotation_interval = rotation_interval
        self.delay = delay
        self.seed = seed
        self.clock = VirtualClock()
        self.channel = SimulatedChannel(self.clock, delay=delay, ttl=min(10.0, rotation_interval),
                                        rotation_interval=rotation_interval)
        self.ca = ca or init_ca("Testbed Root")
        self._tmp = tempfile.TemporaryDirectory()
        root_path = Path(self._tmp.name) / "root.pem"
        self.ca.export(root_path)
        provider = SimulatedProvider(
            ProviderConfig(pool_size=pool_size, address_block=block, app_interfaces=app_interfaces),
            seed=seed,
        )
        self.server = DohServer(
            ServerConfig(name=name, app_interfaces=app_interfaces, rotation_interval=rotation_interval,
                         static_zone=self.zone, retry_backoff=0.01),
            provider, self.channel, self.ca, clock=self.clock, seed=seed,
        )
        self.client_config = ClientConfig(name=name, ca_root_path=str(root_path), update_interval=poll,
                                          rotation_interval=rotation_interval, server_port=0)
        self.client: DohClient | None = None
        self.local: tuple[str, int] | None = None

    def start(self):
        self.server.start()
        self.client_config.server_port = self.server.port
        self.client = DohClient(self.client_config, self.channel, clock=self.clock,
                                status_sink=None, seed=self.seed)
        self.local = self.client.forwarder.serve("127.0.0.1", 0)
        # the client joins an already running service: let the bootstrap record propagate
        self.clock.advance(self.channel.delay)
        self.client.tick()
        return self

    def close(self):
        if self.client:
            self.client.forwarder.close()
        self.server.stop()
        self._tmp.cleanup()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()

    def query(self, name: str) -> bytes:
        return udp_query(self.local, dnsutil.make_query(name))

    def run(self, duration: float, query_rate: float = 5.0, rotate: bool = True) -> RunStats:
        """Advance ``duration`` virtual seconds, interleaving rotations, polls and queries.

        The first client poll lands at a random phase in [0, poll).
        """
        rng = random.Random(self.seed)
        t0 = self.clock.now()
        names = sorted(self.zone)
        events: list[tuple[float, int, str]] = []
        phase = rng.uniform(0, self.poll)
        k = 0
        while phase + k * self.poll < duration:
            events.append((t0 + phase + k * self.poll, 1, "tick"))
            k += 1
        if rotate:
            k = 1
            while k * self.rotation_interval < duration:
                events.append((t0 + k * self.rotation_interval, 0, "rotate"))
                k += 1
        n = int(round(duration * query_rate))
        events += [(t0 + i / query_rate, 2, "query") for i in range(n)]
        heapq.heapify(events)

        stats = RunStats()
        while events:
            t, _, kind = heapq.heappop(events)
            self.clock.set(t)
            if kind == "rotate":
                stats.rotations += self.server.rotate_once() is not None
            elif kind == "tick":
                self.client.tick()
                stats.ticks += 1
            else:
                name = names[stats.queries % len(names)]
                stats.queries += 1
                reply = dns.message.from_wire(self.query(name))
                expected = self.zone[name]
                got = [rr.address for rrset in reply.answer for rr in rrset]
                if reply.rcode() != dns.rcode.NOERROR or got != [expected]:
                    stats.failed += 1
                    stats.failures.append((t - t0, name, dns.rcode.to_text(reply.rcode())))
        self.clock.set(t0 + duration)
        return stats
