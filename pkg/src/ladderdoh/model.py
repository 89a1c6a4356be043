"""Protocol state shared by the server, the client and the simulators.

Everything here is immutable; operations return new values.
"""

from __future__ import annotations

import enum
import ipaddress
import json
import random
import string
from dataclasses import dataclass
from typing import Sequence

IpAddress = ipaddress.IPv4Address

PATH_ALPHABET = string.ascii_lowercase + string.digits
PATH_MIN_LEN = 16
PATH_MAX_LEN = 64
WELL_KNOWN_PATH = "/dns-query"


class StateError(ValueError):
    """Raised when a rotation or record invariant would be violated."""


def as_address(value) -> IpAddress:
    """Coerce ``value`` to an IPv4 address, rejecting the unspecified address."""
    addr = ipaddress.IPv4Address(value) if not isinstance(value, ipaddress.IPv4Address) else value
    if addr == ipaddress.IPv4Address(0):
        raise StateError("0.0.0.0 is not a usable service address")
    return addr


class Role(enum.Enum):
    MANAGEMENT = "management"
    APPLICATION = "application"


@dataclass(frozen=True, order=True)
class InterfaceId:
    index: int
    role: Role = Role.APPLICATION

    def __post_init__(self):
        if self.index < 0:
            raise StateError("interface index must be non-negative")

    def __str__(self):
        return f"{self.role.value[:3]}{self.index}"


@dataclass(frozen=True)
class Lease:
    address: IpAddress
    interface: InterfaceId
    assigned_at: float


@dataclass(frozen=True)
class RotationState:
    """The ladder: one lease per application interface, oldest first."""

    leases: tuple[Lease, ...]
    rotation_interval: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "leases", tuple(self.leases))
        if not self.leases:
            raise StateError("rotation state needs at least one lease")
        addrs = [lease.address for lease in self.leases]
        if len(set(addrs)) != len(addrs):
            raise StateError("lease addresses must be distinct")
        ifaces = [lease.interface for lease in self.leases]
        if len(set(ifaces)) != len(ifaces):
            raise StateError("one lease per interface")
        if any(i.role is not Role.APPLICATION for i in ifaces):
            raise StateError("leases may only sit on application interfaces")
        stamps = [lease.assigned_at for lease in self.leases]
        if any(b <= a for a, b in zip(stamps, stamps[1:])):
            raise StateError("lease timestamps must be strictly increasing")
        if self.rotation_interval <= 0:
            raise StateError("rotation interval must be positive")

    @property
    def addresses(self) -> tuple[IpAddress, ...]:
        """Live addresses, newest last."""
        return tuple(lease.address for lease in self.leases)

    @property
    def oldest(self) -> Lease:
        return self.leases[0]

    @property
    def newest(self) -> Lease:
        return self.leases[-1]

    def __len__(self):
        return len(self.leases)

    def __contains__(self, addr) -> bool:
        return as_address(addr) in self.addresses


def rotation_step(state: RotationState, new_addr, now: float) -> tuple[RotationState, IpAddress]:
    """Move the oldest lease's interface onto ``new_addr``.

    Returns the new state and the displaced address, which the caller is
    expected to hand back to the pool.
    """
    if state is None or not state.leases:
        raise StateError("cannot rotate an empty state")
    new_addr = as_address(new_addr)
    if new_addr in state.addresses:
        raise StateError(f"{new_addr} is already live")
    if now <= state.newest.assigned_at:
        raise StateError("rotation time must be after the newest assignment")
    oldest = state.oldest
    fresh = Lease(new_addr, oldest.interface, now)
    return RotationState(state.leases[1:] + (fresh,), state.rotation_interval), oldest.address


def is_valid_query_path(path) -> bool:
    if not isinstance(path, str) or not path.startswith("/"):
        return False
    body = path[1:]
    return (
        PATH_MIN_LEN <= len(body) <= PATH_MAX_LEN
        and all(c in PATH_ALPHABET for c in body)
        and path != WELL_KNOWN_PATH
    )


def generate_query_path(rng: random.Random) -> str:
    """Random DoH path: a slash then 16-64 lowercase alphanumerics."""
    length = rng.randint(PATH_MIN_LEN, PATH_MAX_LEN)
    # "dns-query" has a hyphen and is 9 chars, so it can never come out of here
    return "/" + "".join(rng.choice(PATH_ALPHABET) for _ in range(length))


@dataclass(frozen=True)
class ServiceRecord:
    """What the server publishes each rotation."""

    ips: tuple[IpAddress, ...]
    query_path: str
    timestamp: int

    def __post_init__(self):
        ips = tuple(as_address(ip) for ip in self.ips)
        object.__setattr__(self, "ips", ips)
        if not ips:
            raise StateError("record must carry at least one address")
        if len(set(ips)) != len(ips):
            raise StateError("record addresses must be distinct")
        if not is_valid_query_path(self.query_path):
            raise StateError(f"invalid query path {self.query_path!r}")
        if isinstance(self.timestamp, bool) or not isinstance(self.timestamp, int):
            raise StateError("timestamp must be integer seconds")

    @property
    def newest(self) -> IpAddress:
        return self.ips[-1]


def canonical_record_bytes(record: ServiceRecord) -> bytes:
    doc = {
        "ips": [str(ip) for ip in record.ips],
        "query_path": record.query_path,
        "timestamp": record.timestamp,
    }
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def parse_record(data: bytes | str) -> ServiceRecord:
    """Inverse of :func:`canonical_record_bytes`; validates every field."""
    try:
        doc = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise StateError(f"record is not JSON: {exc}") from exc
    if not isinstance(doc, dict) or set(doc) != {"ips", "query_path", "timestamp"}:
        raise StateError("record must have exactly ips, query_path, timestamp")
    if not isinstance(doc["ips"], list):
        raise StateError("ips must be a list")
    try:
        ips = tuple(as_address(ip) for ip in doc["ips"])
    except ValueError as exc:
        raise StateError(str(exc)) from exc
    return ServiceRecord(ips, doc["query_path"], doc["timestamp"])


def record_for(state: RotationState, query_path: str, timestamp: int) -> ServiceRecord:
    return ServiceRecord(state.addresses, query_path, int(timestamp))


def initial_state(
    addresses: Sequence, interfaces: Sequence[InterfaceId], start: float, rotation_interval: float = 60.0
) -> RotationState:
    """Build a ladder from a bootstrap assignment; the first address is treated as oldest."""
    if len(addresses) != len(interfaces):
        raise StateError("need one address per interface")
    # spaced a microsecond apart so the ordering invariant holds
    leases = tuple(
        Lease(as_address(a), i, start + n * 1e-6) for n, (a, i) in enumerate(zip(addresses, interfaces))
    )
    return RotationState(leases, rotation_interval)
