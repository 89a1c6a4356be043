"""Answering queries: a seeded static zone first, then random upstream DoH providers."""

from __future__ import annotations

import http.client
import logging
import random
import threading
import urllib.parse
from typing import Callable, Mapping, Sequence

import dns.message
import dns.name
import dns.rcode
import dns.rdatatype
import dns.rrset

from .. import dnsutil

log = logging.getLogger(__name__)


class UpstreamError(Exception):
    pass


class DohUpstream:
    """RFC 8484 POST to a public DoH resolver. Opens a fresh connection per query."""

    def __init__(self, url: str, timeout: float = 3.0, context=None):
        self.url = url
        self.name = url
        self.timeout = timeout
        self.context = context
        parts = urllib.parse.urlsplit(url)
        if parts.scheme != "https" or not parts.hostname:
            raise ValueError(f"not an https URL: {url}")
        self._host = parts.hostname
        self._port = parts.port or 443
        self._path = parts.path or "/dns-query"

    def query(self, wire: bytes) -> bytes:
        conn = http.client.HTTPSConnection(self._host, self._port, timeout=self.timeout, context=self.context)
        try:
            conn.request("POST", self._path, body=wire, headers={
                "Content-Type": "application/dns-message",
                "Accept": "application/dns-message",
            })
            resp = conn.getresponse()
            body = resp.read()
        except OSError as exc:
            raise UpstreamError(f"{self.name}: {exc}") from exc
        finally:
            conn.close()
        if resp.status != 200:
            raise UpstreamError(f"{self.name}: HTTP {resp.status}")
        return body


class StubUpstream:
    """In-process upstream for tests: answers from a table, counts calls, can be switched off."""

    def __init__(self, name: str, zone: Mapping[str, str] | None = None,
                 handler: Callable[[bytes], bytes] | None = None):
        self.name = name
        self.zone = {_norm(k): v for k, v in (zone or {}).items()}
        self.handler = handler
        self.up = True
        self.calls = 0
        self._lock = threading.Lock()

    def query(self, wire: bytes) -> bytes:
        with self._lock:
            self.calls += 1
        if not self.up:
            raise UpstreamError(f"{self.name} is down")
        if self.handler is not None:
            return self.handler(wire)
        return answer_from_zone(dns.message.from_wire(wire), self.zone).to_wire()


def _norm(name: str) -> str:
    return dns.name.from_text(name).to_text().lower()


def answer_from_zone(query: dns.message.Message, zone: Mapping[str, str], ttl: int = 60) -> dns.message.Message:
    resp = dns.message.make_response(query)
    q = query.question[0]
    addr = zone.get(q.name.to_text().lower())
    if addr is None:
        resp.set_rcode(dns.rcode.NXDOMAIN)
    elif q.rdtype == dns.rdatatype.A:
        resp.answer.append(dns.rrset.from_text(q.name, ttl, "IN", "A", addr))
    return resp


class Resolver:
    """Static-zone lookup, else forward to upstreams in random order until one answers.

    With no upstreams configured the static zone is authoritative and misses
    are NXDOMAIN; with upstreams configured and all failing, SERVFAIL.
    """

    def __init__(self, upstreams: Sequence = (), static_zone: Mapping[str, str] | None = None,
                 rng: random.Random | None = None):
        self.upstreams = list(upstreams)
        self.static_zone = {_norm(k): v for k, v in (static_zone or {}).items()}
        if not self.upstreams and not self.static_zone:
            raise ValueError("need at least one upstream or a static zone")
        self._rng = rng or random.Random()
        self._rng_lock = threading.Lock()

    def resolve(self, wire: bytes) -> bytes:
        query = dns.message.from_wire(wire)
        if len(query.question) != 1:
            return dnsutil.formerr(wire)
        qname = query.question[0].name.to_text().lower()
        if qname in self.static_zone or not self.upstreams:
            return answer_from_zone(query, self.static_zone).to_wire()
        with self._rng_lock:
            order = self._rng.sample(self.upstreams, len(self.upstreams))
        for upstream in order:
            try:
                reply = upstream.query(wire)
                dns.message.from_wire(reply)
                return reply
            except Exception as exc:
                log.warning("upstream %s failed: %s", getattr(upstream, "name", upstream), exc)
        return dnsutil.servfail(wire)


def resolve_upstream(query: bytes, resolver: Resolver) -> bytes:
    return resolver.resolve(query)
