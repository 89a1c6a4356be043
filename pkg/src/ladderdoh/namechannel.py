"""Rendezvous channel: immutable content blobs plus a mutable name pointer.

Three backends share one duck-typed surface (``publish_content``,
``update_pointer``, ``resolve_pointer``, ``fetch_content``):

``SimulatedChannel``
    in-memory, with a propagation delay measured on an injectable clock.
``DirectoryChannel``
    the same semantics persisted under a directory, so a server and a
    client in different processes can talk on one host.
``IpfsHttpChannel``
    a thin client for a local IPFS daemon's HTTP API.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path

import requests

from .clock import SystemClock

log = logging.getLogger(__name__)

DEFAULT_DELAY = 10.0
DEFAULT_TTL = 10.0
DEFAULT_LIFETIME = 24 * 3600.0

_HEX64 = re.compile(r"^[0-9a-f]{64}$")


class ChannelError(Exception):
    pass


class TransportError(ChannelError):
    """Backend unreachable. Retryable."""


class NotFound(ChannelError):
    """No propagated pointer value for this name yet."""


class UnknownContent(ChannelError):
    pass


class IntegrityError(ChannelError):
    """Fetched bytes do not hash to the requested identifier."""


def content_id(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def is_content_id(value) -> bool:
    return isinstance(value, str) and bool(_HEX64.match(value))


def redact(name: str) -> str:
    """Log-safe form of a pointer name; the full name is a capability."""
    return name[:6] + "..." if len(name) > 6 else "***"


@dataclass(frozen=True)
class PointerRecord:
    name: str
    cid: str
    published_at: float
    lifetime: float = DEFAULT_LIFETIME
    ttl: float = DEFAULT_TTL
    rotation_interval: float = 60.0

    def __post_init__(self):
        if not self.name:
            raise ValueError("pointer name must be non-empty")
        if self.ttl > self.rotation_interval:
            raise ValueError("ttl must not exceed the rotation interval")
        if self.lifetime < self.rotation_interval:
            raise ValueError("lifetime must cover at least one rotation interval")

    def __repr__(self):
        return f"PointerRecord(name={redact(self.name)!r}, cid={self.cid[:12]!r}, published_at={self.published_at})"


@dataclass(frozen=True)
class _Update:
    seq: int
    cid: str
    visible_at: float


class SimulatedChannel:
    """Content-addressed store with delayed, last-writer-wins pointers.

    A pointer update becomes visible ``delay`` seconds after it is made.
    Resolution returns the newest (by publish order) visible update, so a
    resolver never sees values out of order even when per-update delays
    differ.  ``delay=0`` models push propagation.
    """

    def __init__(self, clock=None, delay: float = DEFAULT_DELAY, ttl: float = DEFAULT_TTL,
                 lifetime: float = DEFAULT_LIFETIME, rotation_interval: float = 60.0):
        if delay < 0:
            raise ValueError("delay must be >= 0")
        self.clock = clock or SystemClock()
        self.delay = delay
        self.ttl = ttl
        self.lifetime = lifetime
        self.rotation_interval = rotation_interval
        self.online = True
        self._blobs: dict[str, bytes] = {}
        self._updates: dict[str, list[_Update]] = {}
        self._records: dict[str, PointerRecord] = {}
        self._seq = 0
        self._lock = threading.Lock()

    # fault injection
    def sever(self):
        self.online = False

    def restore(self):
        self.online = True

    def _check(self):
        if not self.online:
            raise TransportError("channel unreachable")

    def publish_content(self, data: bytes) -> str:
        self._check()
        if not data:
            raise ValueError("refusing to publish empty content")
        cid = content_id(bytes(data))
        with self._lock:
            self._blobs[cid] = bytes(data)
        return cid

    def update_pointer(self, name: str, cid: str, delay: float | None = None) -> PointerRecord:
        self._check()
        if not name:
            raise ValueError("pointer name must be non-empty")
        with self._lock:
            if cid not in self._blobs:
                raise UnknownContent(f"{cid[:12]} was never published")
            now = self.clock.now()
            record = PointerRecord(name, cid, now, self.lifetime, self.ttl, self.rotation_interval)
            self._seq += 1
            d = self.delay if delay is None else delay
            self._updates.setdefault(name, []).append(_Update(self._seq, cid, now + d))
            self._records[name] = record
        log.debug("pointer %s -> %s", redact(name), cid[:12])
        return record

    def resolve_pointer(self, name: str) -> str:
        self._check()
        now = self.clock.now()
        with self._lock:
            visible = [u for u in self._updates.get(name, ()) if u.visible_at <= now]
        if not visible:
            raise NotFound(f"no propagated value for {redact(name)}")
        return max(visible, key=lambda u: u.seq).cid

    def fetch_content(self, cid: str) -> bytes:
        self._check()
        with self._lock:
            data = self._blobs.get(cid)
        if data is None:
            raise UnknownContent(f"{str(cid)[:12]} unknown")
        if content_id(data) != cid:
            raise IntegrityError(f"content for {cid[:12]} does not match its hash")
        return data

    def tamper(self, cid: str, data: bytes):
        """Overwrite a stored blob without rehashing (test hook)."""
        with self._lock:
            self._blobs[cid] = data


class DirectoryChannel:
    """File-backed channel for running server and client as separate processes.

    Layout: ``blobs/<cid>`` and ``names/<sha256(name)>.json`` holding the
    update list.  Writes go through a temp file and ``os.replace``.
    """

    def __init__(self, root, clock=None, delay: float = 0.0):
        self.root = Path(root)
        self.clock = clock or SystemClock()
        self.delay = delay
        (self.root / "blobs").mkdir(parents=True, exist_ok=True)
        (self.root / "names").mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _name_file(self, name: str) -> Path:
        return self.root / "names" / (hashlib.sha256(name.encode()).hexdigest() + ".json")

    @staticmethod
    def _atomic_write(path: Path, data: bytes):
        fd, tmp = tempfile.mkstemp(dir=path.parent)
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)

    def publish_content(self, data: bytes) -> str:
        if not data:
            raise ValueError("refusing to publish empty content")
        cid = content_id(bytes(data))
        self._atomic_write(self.root / "blobs" / cid, bytes(data))
        return cid

    def _updates(self, name):
        path = self._name_file(name)
        try:
            return json.loads(path.read_text())
        except FileNotFoundError:
            return []
        except (OSError, ValueError) as exc:
            raise TransportError(str(exc)) from exc

    def update_pointer(self, name: str, cid: str) -> None:
        if not name:
            raise ValueError("pointer name must be non-empty")
        if not (self.root / "blobs" / cid).exists():
            raise UnknownContent(f"{cid[:12]} was never published")
        with self._lock:
            updates = self._updates(name)
            seq = updates[-1]["seq"] + 1 if updates else 1
            updates.append({"seq": seq, "cid": cid, "visible_at": self.clock.now() + self.delay})
            self._atomic_write(self._name_file(name), json.dumps(updates[-16:]).encode())

    def resolve_pointer(self, name: str) -> str:
        now = self.clock.now()
        visible = [u for u in self._updates(name) if u["visible_at"] <= now]
        if not visible:
            raise NotFound(f"no propagated value for {redact(name)}")
        return max(visible, key=lambda u: u["seq"])["cid"]

    def fetch_content(self, cid: str) -> bytes:
        if not is_content_id(cid):
            raise UnknownContent(f"{str(cid)[:12]} unknown")
        try:
            data = (self.root / "blobs" / cid).read_bytes()
        except FileNotFoundError:
            raise UnknownContent(f"{cid[:12]} unknown") from None
        if content_id(data) != cid:
            raise IntegrityError(f"content for {cid[:12]} does not match its hash")
        return data


class IpfsHttpChannel:
    """Client for the IPFS daemon RPC API (``/api/v0``).

    Identifiers are whatever the daemon returns and are treated as opaque.
    Integrity on fetch is checked by asking the daemon to hash the received
    bytes with ``add?only-hash=true`` and comparing.
    """

    def __init__(self, api: str = "http://127.0.0.1:5001", timeout: float = 10.0,
                 lifetime: str = "24h", ttl: str = "10s", key: str | None = None,
                 session: requests.Session | None = None):
        self.api = api.rstrip("/")
        self.timeout = timeout
        self.lifetime = lifetime
        self.ttl = ttl
        self.key = key
        self.session = session or requests.Session()

    def _post(self, endpoint, params=None, files=None) -> requests.Response:
        url = f"{self.api}/api/v0/{endpoint}"
        try:
            resp = self.session.post(url, params=params, files=files, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"{endpoint}: {exc}") from exc
        if resp.status_code >= 500 or resp.status_code in (404, 400):
            message = _error_message(resp)
            if endpoint == "name/resolve":
                raise NotFound(message)
            if endpoint == "cat":
                raise UnknownContent(message)
            if resp.status_code >= 500:
                raise TransportError(f"{endpoint}: {message}")
            raise ChannelError(f"{endpoint}: {message}")
        if not resp.ok:
            raise TransportError(f"{endpoint}: HTTP {resp.status_code}")
        return resp

    def _add(self, data: bytes, only_hash=False) -> str:
        params = {"pin": "true"}
        if only_hash:
            params = {"only-hash": "true"}
        resp = self._post("add", params=params, files={"file": ("record.json", data)})
        try:
            return resp.json()["Hash"]
        except (ValueError, KeyError) as exc:
            raise TransportError(f"add: unexpected reply {resp.text[:80]!r}") from exc

    def publish_content(self, data: bytes) -> str:
        if not data:
            raise ValueError("refusing to publish empty content")
        return self._add(bytes(data))

    def update_pointer(self, name: str, cid: str) -> None:
        params = {
            "arg": f"/ipfs/{cid}",
            "lifetime": self.lifetime,
            "ttl": self.ttl,
            "key": self.key or name,
        }
        self._post("name/publish", params=params)

    def resolve_pointer(self, name: str) -> str:
        resp = self._post("name/resolve", params={"arg": name})
        try:
            path = resp.json()["Path"]
        except (ValueError, KeyError) as exc:
            raise TransportError("name/resolve: unexpected reply") from exc
        return path.rsplit("/", 1)[-1]

    def fetch_content(self, cid: str) -> bytes:
        data = self._post("cat", params={"arg": cid}).content
        if self._add(data, only_hash=True) != cid:
            raise IntegrityError(f"content for {cid[:12]} does not match its identifier")
        return data


def _error_message(resp) -> str:
    try:
        return resp.json().get("Message", resp.text)
    except ValueError:
        return resp.text[:200]


def publish_and_verify(channel, name: str, data: bytes, strict: bool = False) -> str:
    """Publish ``data``, repoint ``name`` at it, then try resolving it back.

    A failed self-check is logged; with ``strict`` it raises instead.
    Under a propagation delay the check is expected to miss, so it is only
    informative.
    """
    cid = channel.publish_content(data)
    channel.update_pointer(name, cid)
    try:
        seen = channel.resolve_pointer(name)
    except ChannelError as exc:
        seen = None
        reason = str(exc)
    else:
        reason = "stale value"
    if seen != cid:
        if strict:
            raise ChannelError(f"self-verification failed: {reason}")
        log.info("pointer %s not yet visible locally (%s)", redact(name), reason)
    return cid
