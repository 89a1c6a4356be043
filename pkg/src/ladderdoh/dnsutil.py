"""Small wrappers around dnspython for the messages this package builds."""

from __future__ import annotations

import base64
import random
import re
import struct

import dns.exception
import dns.flags
import dns.message
import dns.rcode
import dns.rdatatype
import dns.rrset

MAX_MESSAGE = 65535


def make_query(name: str, rdtype: str = "A", id: int | None = None) -> bytes:
    q = dns.message.make_query(name, rdtype)
    q.id = random.getrandbits(16) if id is None else id
    return q.to_wire()


def random_label(rng: random.Random | None = None, length: int = 12) -> str:
    rng = rng or random
    return "".join(rng.choice("abcdefghijklmnopqrstuvwxyz0123456789") for _ in range(length))


_B64URL = re.compile(r"[A-Za-z0-9_-]+")


def b64url(wire: bytes) -> str:
    return base64.urlsafe_b64encode(wire).decode("ascii").rstrip("=")


def unb64url(text: str) -> bytes:
    """Strict base64url-without-padding decode; raises ValueError on anything else."""
    if not text or not _B64URL.fullmatch(text) or len(text) % 4 == 1:
        raise ValueError("not base64url")
    return base64.urlsafe_b64decode(text + "=" * (-len(text) % 4))


def error_reply(wire: bytes, rcode: int) -> bytes:
    """Reply carrying ``rcode`` for a query that may be unparseable.

    Keeps the question when it parses; otherwise echoes only the id.
    """
    try:
        q = dns.message.from_wire(wire)
    except Exception:
        qid = struct.unpack("!H", wire[:2])[0] if len(wire) >= 2 else 0
        flags = 0x8000 | (rcode & 0xF)
        return struct.pack("!HHHHHH", qid, flags, 0, 0, 0, 0)
    r = dns.message.make_response(q)
    r.set_rcode(rcode)
    return r.to_wire()


def servfail(wire: bytes) -> bytes:
    return error_reply(wire, dns.rcode.SERVFAIL)


def formerr(wire: bytes) -> bytes:
    return error_reply(wire, dns.rcode.FORMERR)


def rcode_of(wire: bytes) -> int:
    return dns.message.from_wire(wire).rcode()


def answer_addresses(wire: bytes) -> list[str]:
    msg = dns.message.from_wire(wire)
    out = []
    for rrset in msg.answer:
        if rrset.rdtype == dns.rdatatype.A:
            out.extend(r.address for r in rrset)
    return out
