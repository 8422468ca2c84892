"""Ring-based state synchronization, membership and fault bypass.

Servers form a ring and exchange cached cluster state with their two
neighbors once per interval. Entries propagate one hop per round in each
direction, so any peer's state reaches a server within ceil(n/2) rounds.
Faulty servers are spliced out of the ring and flagged unavailable;
join/exit takes effect only at placement-cycle boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Tuple

from .model import ClusterView, DeviceSpec, ServiceSpec, ValidationError, ViewEntry


class UnknownServer(ValidationError):
    """A ring operation referenced a server that is not in the ring."""


class NoEligibleService(ValidationError):
    """No single-GPU service exists for a registering edge device."""


@dataclass(frozen=True)
class RingTopology:
    """Live servers in ring order plus the central registry's static info."""

    order: Tuple[str, ...]
    sync_interval_ms: int = 100
    messager: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.order)) != len(self.order):
            raise ValidationError("ring order: duplicate server id")

    def index_of(self, server_id: str) -> int:
        try:
            return self.order.index(server_id)
        except ValueError:
            raise UnknownServer(f"{server_id} not in ring") from None

    def neighbors_of(self, server_id: str) -> Tuple[str, str]:
        left, right = ring_neighbors(self.index_of(server_id), len(self.order))
        return self.order[left], self.order[right]


def ring_neighbors(idx: int, n: int) -> Tuple[int, int]:
    """Indices of the two adjacent peers; a singleton ring talks to itself."""
    if n < 1:
        raise ValidationError("ring size must be >= 1")
    return (idx - 1) % n, (idx + 1) % n


def exchange_round(views: Dict[str, ClusterView], ring: RingTopology,
                   snapshots: Dict[str, ViewEntry],
                   interval_ms: Optional[int] = None) -> Dict[str, ClusterView]:
    """One synchronization round over the ring.

    Every server ages its cached entries by one interval, merges both
    neighbors' aged caches keeping the smallest-staleness entry per source,
    then refreshes its own entry from the fresh local snapshot. Entries are
    never invented: everything in the output existed in an input view or is
    the owner's snapshot.
    """
    interval = ring.sync_interval_ms if interval_ms is None else interval_ms
    aged: Dict[str, Dict[str, ViewEntry]] = {}
    for server_id in ring.order:
        view = views.get(server_id) or ClusterView(owner=server_id)
        cache = {}
        for src, entry in view.per_server.items():
            e = entry.copy()
            e.staleness_ms += interval
            cache[src] = e
        # the outgoing message carries this round's fresh local snapshot,
        # aged one transit interval on arrival like everything else
        own = snapshots[server_id].copy()
        own.staleness_ms = interval
        cache[server_id] = own
        aged[server_id] = cache

    out: Dict[str, ClusterView] = {}
    for server_id in ring.order:
        left, right = ring.neighbors_of(server_id)
        merged: Dict[str, ViewEntry] = {}
        for cache in (aged[server_id], aged[left], aged[right]):
            for src, entry in cache.items():
                cur = merged.get(src)
                if cur is None or (entry.staleness_ms, -entry.epoch) < (cur.staleness_ms, -cur.epoch):
                    merged[src] = entry.copy()
        own = snapshots[server_id].copy()
        own.staleness_ms = 0
        merged[server_id] = own
        out[server_id] = ClusterView(owner=server_id, per_server=merged)
    return out


def bypass_faulty(ring: RingTopology, faulty_id: str) -> RingTopology:
    """Splice a failed server out; its neighbors become adjacent."""
    if faulty_id not in ring.order:
        raise UnknownServer(f"{faulty_id} not in ring")
    order = tuple(s for s in ring.order if s != faulty_id)
    return replace(ring, order=order)


def mark_unavailable(views: Dict[str, ClusterView], server_id: str) -> None:
    """Flag a server unavailable in every cached view (registry broadcast)."""
    for view in views.values():
        entry = view.per_server.get(server_id)
        if entry is not None:
            entry.available = False


def corrupt_entry(view: ClusterView, server_id: str) -> None:
    """Scramble one cached entry (silent data error); ages out on next merge."""
    entry = view.per_server.get(server_id)
    if entry is None or server_id == view.owner:
        return
    for svc in entry.theoretical:
        entry.theoretical[svc] *= 10.0
    entry.actual.clear()
    entry.staleness_ms += 10 * max(1, entry.window_ms)


def apply_membership(ring: RingTopology, pending_joins: Iterable[str],
                     pending_exits: Iterable[str]) -> RingTopology:
    """Apply joins and exits atomically at a placement-epoch boundary.

    Exits of unknown servers are ignored; ring indices stay contiguous.
    """
    exits = set(pending_exits)
    order = [s for s in ring.order if s not in exits]
    for server_id in pending_joins:
        if server_id not in order:
            order.append(server_id)
    return replace(ring, order=tuple(order))


@dataclass(frozen=True)
class DeviceAssignment:
    device_id: str
    service_id: str
    ready_at_ms: int


def device_load_ms(service: ServiceSpec, device: DeviceSpec) -> int:
    """Model transfer plus load time for shipping weights to a device."""
    transfer = 0
    if service.model_bytes > 0:
        transfer = -(-service.model_bytes * 8 // int(device.load_bandwidth_mbps * 1000))
    return int(service.model_load_ms + transfer)


def register_device(device: DeviceSpec, services: Dict[str, ServiceSpec],
                    now: int, loader_free_at: int,
                    preferred: Iterable[str] = ()) -> Tuple[DeviceAssignment, int]:
    """Assign a single-GPU service replica to a freshly registered device.

    Only services solvable on one GPU are eligible. Loads are serialized per
    server (bandwidth cap), so queued registrations see growing latency.
    Returns (assignment, new loader_free_at).
    """
    eligible = [s for s in services.values()
                if not s.needs_multi_gpu and device.gpu_model in s.compute_ms]
    if not eligible:
        raise NoEligibleService(f"device {device.id}: only multi-GPU services in scenario")
    preferred = [p for p in preferred if any(s.id == p for s in eligible)]
    if preferred:
        chosen = services[sorted(preferred)[0]]
    else:
        chosen = sorted(eligible, key=lambda s: s.id)[0]
    start = max(now, loader_free_at)
    ready = start + device_load_ms(chosen, device)
    return DeviceAssignment(device.id, chosen.id, ready), ready
