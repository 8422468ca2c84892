"""Per-server request handling: the decision ladder and offload sampling.

Each server resolves a request through a strict priority ladder: timeout,
local solve, locally-anchored cross-server parallel solve, registered
device, probabilistic offload, then the two terminal outcomes. Offload
targets are drawn proportionally to each candidate's idle goodput as seen
through the server's (stale) cluster view.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

from .model import ClusterView, Request, ServiceSpec, extend_hop_path


class DecisionKind(enum.Enum):
    TIMEOUT = "timeout"
    SOLVE_LOCAL = "solve_local"
    SOLVE_CROSS_SERVER = "solve_cross_server"
    SOLVE_ON_DEVICE = "solve_on_device"
    OFFLOAD = "offload"
    OFFLOAD_EXCEEDED = "offload_exceeded"
    RESOURCE_INSUFFICIENT = "resource_insufficient"


@dataclass(frozen=True)
class HandlingDecision:
    kind: DecisionKind
    target: Optional[object] = None  # runtime token, device id or server id


class LocalState(Protocol):
    """Capacity queries the engine answers for its own server."""

    server_id: str

    def local_feasible(self, request: Request, now: int) -> Optional[object]: ...

    def cross_feasible(self, request: Request, now: int) -> Optional[object]: ...

    def device_feasible(self, request: Request, now: int) -> Optional[object]: ...


def idle_goodput(view: ClusterView, server_id: str, service_id: str) -> float:
    """Theoretical minus recent actual goodput, floored at zero."""
    entry = view.entry(server_id)
    if entry is None or not entry.available:
        return 0.0
    theoretical = entry.theoretical.get(service_id)
    if theoretical is None:
        return 0.0
    actual = entry.actual.get(service_id, 0.0)
    return max(0.0, theoretical - actual)


def offload_candidates(request: Request, view: ClusterView,
                       service: ServiceSpec) -> Sequence[tuple]:
    """Feasible (server, idle_goodput) pairs for the offload lottery.

    Excludes hop-path members (loop rule), unavailable servers, servers whose
    estimated queue backlog exceeds staleness + SLO, and saturated servers.
    """
    out = []
    for server_id in sorted(view.per_server):
        if server_id in request.hop_path:
            continue
        entry = view.per_server[server_id]
        if not entry.available or service.id not in entry.theoretical:
            continue
        backlog = entry.backlog_ms.get(service.id, 0.0)
        if backlog > entry.staleness_ms + service.latency_slo_ms:
            continue
        idle = idle_goodput(view, server_id, service.id)
        if idle <= 0.0:
            continue
        out.append((server_id, idle))
    return out


def offload_target(request: Request, view: ClusterView, service: ServiceSpec,
                   rng: random.Random, expected: bool = False) -> Optional[str]:
    """Sample a destination with probability idle/sum(idle); None if no candidate.

    With expected=True the draw is replaced by the deterministic argmax of
    idle goodput (used by placement evaluation's expected mode).
    """
    candidates = offload_candidates(request, view, service)
    if not candidates:
        return None
    if expected:
        return max(candidates, key=lambda c: (c[1], c[0]))[0]
    total = sum(idle for _, idle in candidates)
    pick = rng.random() * total
    acc = 0.0
    for server_id, idle in candidates:
        acc += idle
        if pick < acc:
            return server_id
    return candidates[-1][0]


def record_hop(request: Request, server_id: str) -> Request:
    """Extend the hop path; raises LoopViolation on a revisit."""
    return extend_hop_path(request, server_id)


def handle(request: Request, local_state: LocalState, view: ClusterView,
           service: ServiceSpec, now: int, rng: random.Random,
           max_offload: int = 5, expected: bool = False) -> HandlingDecision:
    """Walk the ladder; the first matching rung wins."""
    if now > request.deadline:
        return HandlingDecision(DecisionKind.TIMEOUT)
    token = local_state.local_feasible(request, now)
    if token is not None:
        return HandlingDecision(DecisionKind.SOLVE_LOCAL, token)
    token = local_state.cross_feasible(request, now)
    if token is not None:
        return HandlingDecision(DecisionKind.SOLVE_CROSS_SERVER, token)
    token = local_state.device_feasible(request, now)
    if token is not None:
        return HandlingDecision(DecisionKind.SOLVE_ON_DEVICE, token)
    if request.offload_count >= max_offload:
        return HandlingDecision(DecisionKind.OFFLOAD_EXCEEDED)
    target = offload_target(request, view, service, rng, expected=expected)
    if target is not None:
        return HandlingDecision(DecisionKind.OFFLOAD, target)
    return HandlingDecision(DecisionKind.RESOURCE_INSUFFICIENT)
