"""Local plain-DNS listener that forwards over DoH to the current server.

The forwarder owns all upstream egress.  It only ever opens TLS
connections to the server address/port taken from the applied stamp, and
when fail-closed it answers SERVFAIL without touching the network.
"""

from __future__ import annotations

import http.client
import logging
import random
import socket
import socketserver
import ssl
import struct
import threading
import time
from dataclasses import dataclass
from typing import Sequence

import dns.message
import dns.rcode

from .. import dnsutil
from ..certs import client_context
from .stamp import StampData

log = logging.getLogger(__name__)


class Egress:
    """Record of every upstream connection the forwarder attempted.

    Serves as the capture point for leak checks: if it is not in here,
    the client did not send it.
    """

    def __init__(self):
        self.events: list[tuple[float, str, int, str]] = []
        self._lock = threading.Lock()

    def note(self, host: str, port: int, proto: str = "tcp"):
        with self._lock:
            self.events.append((time.time(), host, port, proto))

    def count(self) -> int:
        with self._lock:
            return len(self.events)

    def ports(self) -> set[int]:
        with self._lock:
            return {e[2] for e in self.events}

    def since(self, n: int) -> list:
        with self._lock:
            return self.events[n:]


class ProbeFailure(Exception):
    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class Target:
    stamp: StampData
    candidates: tuple[str, ...]  # newest first; candidates[0] is the stamp address


@dataclass(frozen=True)
class ProbeResult:
    ok: bool
    latency_ms: float | None = None
    reason: str | None = None
    via: str | None = None


class DohForwarder:
    def __init__(self, root_pem: bytes, timeout: float = 2.0, egress: Egress | None = None):
        self.context = client_context(root_pem)
        self.timeout = timeout
        self.egress = egress or Egress()
        self.fail_closed = False
        self.reloads = 0
        self.last_used: str | None = None
        self._target: Target | None = None
        self._write_lock = threading.Lock()
        self._servers: list[socketserver.BaseServer] = []

    @property
    def target(self) -> Target | None:
        return self._target

    def apply_config(self, stamp: StampData, candidates: Sequence[str] = ()) -> bool:
        """Point future upstream connections at ``stamp``. Returns False if nothing changed."""
        order = [stamp.host] + [c for c in candidates if c != stamp.host]
        new = Target(stamp, tuple(order))
        with self._write_lock:
            if new == self._target:
                return False
            self._target = new
            self.reloads += 1
        log.info("forwarder now targets %s%s", stamp.address, "" if len(order) == 1 else f" (+{len(order) - 1} fallback)")
        return True

    def _exchange_one(self, host: str, port: int, path: str, wire: bytes) -> bytes:
        self.egress.note(host, port)
        conn = http.client.HTTPSConnection(host, port, timeout=self.timeout, context=self.context)
        try:
            conn.request("POST", path, body=wire, headers={
                "Content-Type": "application/dns-message",
                "Accept": "application/dns-message",
            })
            resp = conn.getresponse()
            body = resp.read()
        except socket.timeout as exc:
            raise ProbeFailure("timeout", str(exc)) from exc
        except ssl.SSLError as exc:
            raise ProbeFailure("tls", str(exc)) from exc
        except (ConnectionError, OSError, http.client.HTTPException) as exc:
            raise ProbeFailure("connection", str(exc)) from exc
        finally:
            conn.close()
        if resp.status != 200:
            raise ProbeFailure("http", f"status {resp.status}")
        return body

    def exchange(self, wire: bytes, target: Target | None = None) -> bytes:
        """Send one query over DoH, trying candidate addresses newest first."""
        target = target or self._target
        if target is None:
            raise ProbeFailure("unconfigured")
        first = None
        for host in target.candidates:
            try:
                reply = self._exchange_one(host, target.stamp.port, target.stamp.path, wire)
            except ProbeFailure as exc:
                first = first or exc
                continue
            self.last_used = host
            return reply
        raise first

    def resolve(self, wire: bytes) -> bytes:
        """Answer one local query. Never leaks: fail-closed means SERVFAIL, no egress."""
        target = self._target
        if self.fail_closed or target is None:
            return dnsutil.servfail(wire)
        try:
            return self.exchange(wire, target)
        except ProbeFailure as exc:
            log.debug("upstream failed: %s", exc)
            return dnsutil.servfail(wire)

    def probe(self, probe_name: str, rng: random.Random | None = None) -> ProbeResult:
        qname = f"{dnsutil.random_label(rng)}.{probe_name}"
        wire = dnsutil.make_query(qname)
        t0 = time.perf_counter()
        try:
            reply = self.exchange(wire)
            rcode = dns.message.from_wire(reply).rcode()
        except ProbeFailure as exc:
            return ProbeResult(False, reason=exc.reason)
        except Exception as exc:
            return ProbeResult(False, reason="dns")
        latency = (time.perf_counter() - t0) * 1000
        if rcode not in (dns.rcode.NOERROR, dns.rcode.NXDOMAIN):
            return ProbeResult(False, latency, reason="dns")
        return ProbeResult(True, max(latency, 1e-6), via=self.last_used)

    # -- local listener ------------------------------------------------------
    def serve(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        """Start UDP and TCP listeners on ``host``; returns the bound address."""
        fwd = self

        class UdpHandler(socketserver.BaseRequestHandler):
            def handle(self):
                data, sock = self.request
                sock.sendto(fwd.resolve(data), self.client_address)

        class TcpHandler(socketserver.StreamRequestHandler):
            def handle(self):
                while True:
                    head = self.rfile.read(2)
                    if len(head) < 2:
                        return
                    wire = self.rfile.read(struct.unpack("!H", head)[0])
                    reply = fwd.resolve(wire)
                    self.wfile.write(struct.pack("!H", len(reply)) + reply)

        udp = socketserver.ThreadingUDPServer((host, port), UdpHandler)
        udp.daemon_threads = True
        bound = udp.server_address
        try:
            tcp = socketserver.ThreadingTCPServer(bound, TcpHandler)
            tcp.daemon_threads = True
        except OSError:
            tcp = None
        for srv in filter(None, (udp, tcp)):
            threading.Thread(target=srv.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True).start()
            self._servers.append(srv)
        return bound

    def close(self):
        for srv in self._servers:
            srv.shutdown()
            srv.server_close()
        self._servers.clear()


def udp_query(addr: tuple[str, int], wire: bytes, timeout: float = 3.0) -> bytes:
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.settimeout(timeout)
        s.sendto(wire, addr)
        data, _ = s.recvfrom(65535)
        return data
