"""Cloud address pool abstraction and a deterministic in-memory stand-in.

A real cloud backend would implement the same four calls
(``allocate``, ``assign``, ``release``, ``snapshot``) against the
provider's elastic-IP API.
"""

from __future__ import annotations

import collections
import enum
import ipaddress
import random
import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping

from .model import InterfaceId, IpAddress, Role, as_address


class ProviderError(RuntimeError):
    pass


class PoolExhausted(ProviderError):
    """No free address left; the caller should back off and retry."""


class ReusePolicy(enum.Enum):
    UNIFORM_RANDOM_FREE = "uniform-random-free"
    LRU_FREE = "lru-free"


@dataclass(frozen=True)
class ProviderConfig:
    pool_size: int = 64
    address_block: str = "198.18.0.0/15"
    app_interfaces: int = 2
    allocation_latency: float = 0.0
    reuse_policy: ReusePolicy = ReusePolicy.UNIFORM_RANDOM_FREE

    def __post_init__(self):
        object.__setattr__(self, "reuse_policy", ReusePolicy(self.reuse_policy))
        if self.app_interfaces < 1:
            raise ValueError("need at least one application interface")
        if self.pool_size < self.app_interfaces + 1:
            raise ValueError("pool_size must be at least app_interfaces + 1")
        net = ipaddress.IPv4Network(self.address_block)
        if net.num_addresses - 2 < self.pool_size:
            raise ValueError(f"{self.address_block} cannot hold {self.pool_size} hosts")
        if self.allocation_latency < 0:
            raise ValueError("allocation latency must be >= 0")


@dataclass(frozen=True)
class PoolSnapshot:
    free: frozenset
    assigned: Mapping[InterfaceId, IpAddress] = field(default_factory=dict)
    held: frozenset = frozenset()


class SimulatedProvider:
    """Flat synthetic pool carved from ``config.address_block``.

    Addresses move free -> held (allocated) -> assigned -> held (displaced)
    -> free.  Mutations are serialized by a lock.
    """

    def __init__(self, config: ProviderConfig | None = None, seed=None, sleep=None):
        self.config = config or ProviderConfig()
        self._rng = random.Random(seed)
        self._sleep = sleep
        net = ipaddress.IPv4Network(self.config.address_block)
        hosts = net.hosts()
        self._pool = [next(hosts) for _ in range(self.config.pool_size)]
        self._free = collections.OrderedDict((a, None) for a in self._pool)
        self._held: set[IpAddress] = set()
        self._assigned: dict[InterfaceId, IpAddress] = {}
        self._lock = threading.Lock()
        self.management = InterfaceId(0, Role.MANAGEMENT)
        self.interfaces = tuple(
            InterfaceId(i + 1, Role.APPLICATION) for i in range(self.config.app_interfaces)
        )

    @property
    def pool(self) -> tuple[IpAddress, ...]:
        return tuple(self._pool)

    def allocate(self) -> IpAddress:
        if self.config.allocation_latency and self._sleep:
            self._sleep(self.config.allocation_latency)
        with self._lock:
            if not self._free:
                raise PoolExhausted(f"all {self.config.pool_size} addresses in use")
            if self.config.reuse_policy is ReusePolicy.LRU_FREE:
                addr = next(iter(self._free))
            else:
                addr = self._rng.choice(list(self._free))
            del self._free[addr]
            self._held.add(addr)
            return addr

    def assign(self, addr, iface: InterfaceId) -> None:
        """Attach ``addr`` to ``iface``; any address already there becomes held."""
        addr = as_address(addr)
        with self._lock:
            if iface.role is not Role.APPLICATION:
                raise ProviderError("service addresses never go on the management interface")
            if iface not in self.interfaces:
                raise ProviderError(f"unknown interface {iface}")
            if addr in self._assigned.values():
                raise ProviderError(f"{addr} is already assigned")
            if addr not in self._held:
                raise ProviderError(f"{addr} was not allocated")
            self._held.discard(addr)
            displaced = self._assigned.get(iface)
            if displaced is not None:
                self._held.add(displaced)
            self._assigned[iface] = addr

    def release(self, addr) -> None:
        addr = as_address(addr)
        with self._lock:
            if addr in self._assigned.values():
                raise ProviderError(f"{addr} is still assigned to an interface")
            if addr not in self._held:
                raise ProviderError(f"{addr} was never allocated")
            self._held.discard(addr)
            self._free[addr] = None

    def snapshot(self) -> PoolSnapshot:
        with self._lock:
            return PoolSnapshot(
                frozenset(self._free), MappingProxyType(dict(self._assigned)), frozenset(self._held)
            )

    def assigned_address(self, iface: InterfaceId) -> IpAddress | None:
        with self._lock:
            return self._assigned.get(iface)
