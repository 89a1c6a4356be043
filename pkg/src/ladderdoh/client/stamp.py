"""``sdns://`` stamps for DoH endpoints (protocol 0x02).

Layout after the protocol byte::

    props (8 bytes LE) | LP(addr) | VLP(hashes) | LP(hostname) | LP(path)

LP is a one-byte length prefix.  In VLP every element except the last
has the high bit of its length byte set.
"""

from __future__ import annotations

import base64
import struct
from dataclasses import dataclass

from ..model import is_valid_query_path

DOH_PROTOCOL = 0x02
PREFIX = "sdns://"

# property bits
DNSSEC = 1
NO_LOGS = 2
NO_FILTER = 4


class StampError(ValueError):
    pass


class MalformedStamp(StampError):
    pass


class UnsupportedProtocol(StampError):
    pass


@dataclass(frozen=True)
class StampData:
    address: str
    hashes: tuple[bytes, ...]
    hostname: str
    path: str
    properties: int = 0
    protocol: int = DOH_PROTOCOL

    def __post_init__(self):
        object.__setattr__(self, "hashes", tuple(bytes(h) for h in self.hashes))
        if self.protocol != DOH_PROTOCOL:
            raise UnsupportedProtocol(f"protocol {self.protocol:#04x} is not DoH")
        if not 0 <= self.properties < 2**64:
            raise StampError("properties must fit in 64 bits")
        if len(self.hashes) != 1 or len(self.hashes[0]) != 32:
            raise StampError("exactly one 32-byte hash (the pinned root digest) is required")
        if not is_valid_query_path(self.path):
            raise StampError(f"invalid query path {self.path!r}")

    @property
    def host(self) -> str:
        return self.address.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        _, _, port = self.address.rpartition(":")
        return int(port) if port.isdigit() else 443


def _lp(raw: bytes) -> bytes:
    if len(raw) > 255:
        raise StampError("stamp field longer than 255 bytes")
    return bytes([len(raw)]) + raw


def _vlp(items) -> bytes:
    if not items:
        return b"\x00"
    out = bytearray()
    for n, item in enumerate(items):
        if len(item) > 0x7F:
            raise StampError("hash entry longer than 127 bytes")
        more = 0x80 if n < len(items) - 1 else 0
        out.append(len(item) | more)
        out += item
    return bytes(out)


def encode_stamp(data: StampData) -> str:
    body = (
        bytes([data.protocol])
        + struct.pack("<Q", data.properties)
        + _lp(data.address.encode())
        + _vlp(data.hashes)
        + _lp(data.hostname.encode())
        + _lp(data.path.encode())
    )
    return PREFIX + base64.urlsafe_b64encode(body).decode("ascii").rstrip("=")


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise MalformedStamp("stamp truncated")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def lp(self) -> bytes:
        return self.take(self.take(1)[0])

    def vlp(self) -> list[bytes]:
        items = []
        while True:
            head = self.take(1)[0]
            chunk = self.take(head & 0x7F)
            if chunk or head & 0x80 or items:
                items.append(chunk)
            if not head & 0x80:
                return items


def decode_stamp(s: str) -> StampData:
    if not isinstance(s, str) or not s.startswith(PREFIX):
        raise MalformedStamp("stamp must start with sdns://")
    payload = s[len(PREFIX):]
    try:
        raw = base64.urlsafe_b64decode(payload + "=" * (-len(payload) % 4))
    except (ValueError, base64.binascii.Error) as exc:
        raise MalformedStamp(f"bad base64: {exc}") from exc
    if not raw:
        raise MalformedStamp("empty stamp")
    if raw[0] != DOH_PROTOCOL:
        raise UnsupportedProtocol(f"protocol {raw[0]:#04x} is not DoH")
    r = _Reader(raw)
    r.take(1)
    (props,) = struct.unpack("<Q", r.take(8))
    try:
        address = r.lp().decode()
        hashes = r.vlp()
        hostname = r.lp().decode()
        path = r.lp().decode()
    except UnicodeDecodeError as exc:
        raise MalformedStamp(str(exc)) from exc
    # trailing bootstrap-IP set is allowed by the format; ignored here
    try:
        return StampData(address, tuple(hashes), hostname, path, props)
    except UnsupportedProtocol:
        raise
    except StampError as exc:
        raise MalformedStamp(str(exc)) from exc


def stamp_for(ip, port: int, path: str, root_hash: bytes, properties: int = 0) -> StampData:
    """Stamp for an IP-literal endpoint: hostname is the address itself."""
    return StampData(f"{ip}:{port}", (root_hash,), str(ip), path, properties)


def proxy_config_fragment(stamp: str, server_name: str = "moving-doh") -> str:
    """dnscrypt-proxy style config pointing at a single static stamp."""
    return (
        f"server_names = ['{server_name}']\n"
        f"\n[static.'{server_name}']\n"
        f"stamp = \"{stamp}\"\n"
    )
