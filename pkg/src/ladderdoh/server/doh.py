"""RFC 8484 endpoint with path gating, and the TLS listeners that carry it.

Anything that is not a well-formed DoH request on a live path gets the
same bare 404 a static web server would return.
"""

from __future__ import annotations

import logging
import socket
import ssl
import threading
import urllib.parse
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Sequence

import dns.exception
import dns.message

from .. import dnsutil
from ..certs import ServerCertificate, server_context

log = logging.getLogger(__name__)

DNS_MESSAGE = "application/dns-message"
FORBIDDEN_PORTS = frozenset({53, 853})

_NOT_FOUND_BODY = (
    b"<html>\r\n<head><title>404 Not Found</title></head>\r\n"
    b"<body>\r\n<center><h1>404 Not Found</h1></center>\r\n</body>\r\n</html>\r\n"
)


@dataclass(frozen=True)
class Response:
    status: int
    headers: tuple[tuple[str, str], ...]
    body: bytes = b""


def _response(status, ctype, body) -> Response:
    return Response(status, (("Content-Type", ctype), ("Content-Length", str(len(body)))), body)


NOT_FOUND = _response(404, "text/html", _NOT_FOUND_BODY)
TOO_LARGE = _response(413, "text/html", b"")


def dns_response(wire: bytes) -> Response:
    return Response(200, (
        ("Content-Type", DNS_MESSAGE),
        ("Content-Length", str(len(wire))),
        ("Cache-Control", "no-store"),
    ), wire)


def handle_doh_request(method: str, target: str, headers, body: bytes | None,
                       active_paths: Sequence[str], resolve) -> Response:
    """Pure request -> response mapping.

    ``headers`` is any mapping with case-insensitive ``get``; ``resolve``
    maps query wire bytes to answer wire bytes.
    """
    url = urllib.parse.urlsplit(target)
    if url.path not in active_paths:
        return NOT_FOUND
    if method == "GET":
        params = urllib.parse.parse_qs(url.query)
        if len(params.get("dns", ())) != 1:
            return NOT_FOUND
        try:
            wire = dnsutil.unb64url(params["dns"][0])
        except ValueError:
            return NOT_FOUND
    elif method == "POST":
        ctype = (headers.get("Content-Type") or "").split(";")[0].strip().lower()
        if ctype != DNS_MESSAGE or body is None:
            return NOT_FOUND
        wire = body
    else:
        return NOT_FOUND
    if len(wire) > dnsutil.MAX_MESSAGE:
        return TOO_LARGE
    try:
        dns.message.from_wire(wire)
    except (dns.exception.DNSException, ValueError):
        return dns_response(dnsutil.formerr(wire))
    return dns_response(resolve(wire))


@dataclass(frozen=True)
class Credentials:
    """The pair readers must never see torn: leaf certificate and live paths."""

    certificate: ServerCertificate
    paths: tuple[str, ...]
    context: ssl.SSLContext


class CredentialSlot:
    """Single-writer, many-reader holder. Readers take one reference and use it."""

    def __init__(self, creds: Credentials | None = None):
        self._creds = creds
        self._lock = threading.Lock()

    def current(self) -> Credentials:
        return self._creds

    def swap(self, creds: Credentials) -> Credentials:
        with self._lock:
            old, self._creds = self._creds, creds
            return old


def make_credentials(cert: ServerCertificate, paths: Sequence[str]) -> Credentials:
    return Credentials(cert, tuple(paths), server_context(cert))


class _DohRequestHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    timeout = 10

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.client_address[0], fmt % args)

    def _send(self, resp: Response):
        self.send_response_only(resp.status)
        for k, v in resp.headers:
            self.send_header(k, v)
        self.end_headers()
        if self.command != "HEAD":
            self.wfile.write(resp.body)
        self.server.count(resp.status)

    def _dispatch(self):
        creds = self.server.slot.current()
        path = urllib.parse.urlsplit(self.path).path
        body = None
        if self.command == "POST":
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                length = -1
            if length < 0:
                self.close_connection = True
                return self._send(NOT_FOUND)
            if length > dnsutil.MAX_MESSAGE:
                self.close_connection = True
                return self._send(TOO_LARGE if path in creds.paths else NOT_FOUND)
            body = self.rfile.read(length)
        resp = handle_doh_request(self.command, self.path, self.headers, body, creds.paths,
                                  self.server.resolve)
        self._send(resp)

    do_GET = do_POST = do_HEAD = do_PUT = do_DELETE = do_OPTIONS = do_PATCH = _dispatch

    def send_error(self, code, message=None, explain=None):
        # malformed request lines get the same bare 404
        self.close_connection = True
        try:
            self._send(NOT_FOUND)
        except OSError:
            pass


class HttpsListener(ThreadingHTTPServer):
    """HTTPS on one service address.

    The TLS context is taken from the slot at accept time, so a swap
    affects new handshakes only; accepted connections finish on the
    credentials they started with.
    """

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], slot: CredentialSlot, resolve):
        if address[1] in FORBIDDEN_PORTS:
            raise ValueError(f"refusing to listen on DNS port {address[1]}")
        self.slot = slot
        self.resolve = resolve
        self.status_counts: dict[int, int] = {}
        self.handshake_failures = 0
        self._conns: set = set()
        self._conns_lock = threading.Lock()
        super().__init__(address, _DohRequestHandler)
        self._thread: threading.Thread | None = None

    def count(self, status: int):
        with self._conns_lock:
            self.status_counts[status] = self.status_counts.get(status, 0) + 1

    def get_request(self):
        sock, addr = self.socket.accept()
        # headers and body go out in separate writes; avoid the delayed-ACK stall
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        ctx = self.slot.current().context
        tls = ctx.wrap_socket(sock, server_side=True, do_handshake_on_connect=False)
        with self._conns_lock:
            self._conns.add(tls)
        return tls, addr

    def finish_request(self, request, client_address):
        try:
            request.settimeout(10)
            request.do_handshake()
        except (ssl.SSLError, OSError) as exc:
            with self._conns_lock:
                self.handshake_failures += 1
            log.debug("handshake from %s failed: %s", client_address[0], exc)
            return
        super().finish_request(request, client_address)

    def shutdown_request(self, request):
        with self._conns_lock:
            self._conns.discard(request)
        super().shutdown_request(request)

    def handle_error(self, request, client_address):
        log.debug("connection from %s ended with an error", client_address[0], exc_info=True)

    def start(self):
        self._thread = threading.Thread(target=self.serve_forever, kwargs={"poll_interval": 0.05},
                                        name=f"doh-{self.server_address[0]}", daemon=True)
        self._thread.start()
        return self

    def stop(self, drop_connections: bool = True):
        """Stop accepting; with ``drop_connections`` also tear down open sockets,
        as happens when the address leaves the interface."""
        self.shutdown()
        self.server_close()
        if drop_connections:
            with self._conns_lock:
                conns = list(self._conns)
            for c in conns:
                try:
                    c.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
        if self._thread is not None:
            self._thread.join(timeout=2)
