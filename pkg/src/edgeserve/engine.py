"""Deterministic event-driven simulation core.

Virtual time is integer milliseconds. Events are processed in (time,
insertion sequence) order, so two runs with the same scenario and seed
produce identical event logs. Compute latency comes from lookup tables
derived from profiles; network transfers are modeled from payload size and
link bandwidth, never actually transmitted.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import heapq
import math
import os
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from . import handler as _handler
from . import sync as _sync
from .model import (
    ClusterView,
    DeviceSpec,
    Gpu,
    Metrics,
    Placement,
    PlacementList,
    Request,
    Sensitivity,
    ServerSpec,
    ServiceSpec,
    ValidationError,
    ViewEntry,
    satisfied_count,
    submitted_units,
)
from .allocator import ProfileTable
from .handler import DecisionKind, HandlingDecision
from .scenario import ScenarioModel, TraceRow


class ZeroBandwidth(ValidationError):
    """Transfer latency is undefined for non-positive bandwidth."""


class EventKind(enum.Enum):
    REQUEST_ARRIVAL = "arrival"
    BATCH_COMPLETE = "batch_complete"
    STREAM_COMPLETE = "stream_complete"
    BATCH_TIMER = "batch_timer"
    SYNC_ROUND = "sync_round"
    PLACEMENT_EPOCH = "placement_epoch"
    DEVICE_REGISTER = "device_register"
    FAULT = "fault"
    MEMBERSHIP_CHANGE = "membership"


@dataclass(frozen=True)
class Event:
    time: int
    seq: int
    kind: EventKind
    payload: object = None


def transmit_latency(n_bytes: int, bandwidth_mbps: float, overhead_ms: int = 1) -> int:
    """Milliseconds to ship a payload over one hop, plus fixed overhead."""
    if bandwidth_mbps <= 0:
        raise ZeroBandwidth(f"bandwidth must be positive, got {bandwidth_mbps}")
    return math.ceil(n_bytes * 8 / (bandwidth_mbps * 1000.0)) + overhead_ms


class LatencyTable:
    """Per-batch compute times indexed by GPU model and service settings."""

    def __init__(self, scenario: ScenarioModel, profiles: Optional[ProfileTable] = None):
        self._scenario = scenario
        self._profiles = profiles or ProfileTable.from_scenario(scenario)

    def batch_ms(self, service: ServiceSpec, gpu_model: str, bs: int, mt: int) -> float:
        if self._profiles.has(service.id, gpu_model, bs, mt):
            _, latency = self._profiles.lookup(service.id, gpu_model, bs, mt)
        else:
            # affine batching model on the single-request compute time
            latency = service.compute_ms[gpu_model] * (1.0 + 0.5 * (bs - 1))
        if latency <= 0:
            raise ValidationError(f"latency table: non-positive entry for {service.id}/{gpu_model}")
        return latency

    def load_ms(self, service: ServiceSpec) -> int:
        return service.model_load_ms


# ---------------------------------------------------------------------------
# Workload generation


@dataclass(frozen=True)
class StreamSpec:
    service_id: str
    rate_per_s: float
    pattern: str = "poisson"  # "poisson" | "bursty"
    frame_count: int = 1
    on_ms: int = 1000
    off_ms: int = 1000


def generate_workload(streams: Sequence[StreamSpec], servers: Sequence[str],
                      duration_ms: int, seed: int) -> List[TraceRow]:
    """Synthesize a sorted arrival trace; origins rotate round-robin."""
    rng = random.Random(f"{seed}:trace")
    rows: List[TraceRow] = []
    origin_idx = 0
    for stream in streams:
        if stream.rate_per_s <= 0:
            continue
        t = 0.0
        while t < duration_ms:
            t += rng.expovariate(stream.rate_per_s) * 1000.0
            if stream.pattern == "bursty":
                cycle = stream.on_ms + stream.off_ms
                phase = t % cycle
                if phase >= stream.on_ms:
                    t += cycle - phase  # restart at the next on window
                    continue
            if t >= duration_ms:
                break
            rows.append(TraceRow(int(t), stream.service_id,
                                 servers[origin_idx % len(servers)], stream.frame_count))
            origin_idx += 1
    rows.sort(key=lambda r: (r.arrival_ms, r.service_id, r.origin_server))
    return rows


# ---------------------------------------------------------------------------
# Runtime state


class PlacementRuntime:
    """Serving state for one placement: lanes, a queue and rate accounting."""

    def __init__(self, sim: "Simulation", placement: Placement, service: ServiceSpec,
                 batch_ms: float, active_at: int):
        self.sim = sim
        self.placement = placement
        self.service = service
        self.plan = placement.plan
        self.lanes = self.plan.lanes
        self.bs = self.plan.bs
        self.batch_ms = batch_ms
        self.active_at = active_at
        self.dead = False
        self.queue: deque = deque()  # (request, enqueue_time)
        self.busy = 0
        self.committed_fps = 0.0
        self.dispatched_units = 0.0
        self.timer_at: Optional[int] = None
        self.timeout_ms = max(1, service.latency_slo_ms // sim.control.batch_timeout_divisor)

    @property
    def key(self):
        p = self.placement
        return (p.service_id, p.server_id, p.gpu_ids, p.plan)

    @property
    def is_frequency(self) -> bool:
        return self.service.sensitivity is Sensitivity.FREQUENCY

    @property
    def capacity_fps(self) -> float:
        return self.lanes * self.bs * 1000.0 / self.batch_ms

    @property
    def rate_rps(self) -> float:
        return self.lanes * self.bs * 1000.0 / self.batch_ms

    # -- admission ---------------------------------------------------------

    def projected_completion(self, now: int) -> int:
        start = max(now, self.active_at)
        pending = len(self.queue) + 1
        batches_ahead = math.ceil(pending / self.bs)
        free = self.lanes - self.busy
        if free >= batches_ahead:
            wait = 0 if pending >= self.bs else self.timeout_ms
        else:
            rounds = math.ceil((batches_ahead - free) / self.lanes)
            wait = int(rounds * self.batch_ms)
        return start + wait + math.ceil(self.batch_ms)

    def can_admit(self, request: Request, now: int) -> bool:
        if self.dead:
            return False
        if self.is_frequency:
            return self.capacity_fps - self.committed_fps > 1e-6
        return self.projected_completion(now) <= request.deadline

    def backlog_estimate_ms(self) -> float:
        if self.is_frequency:
            sat = self.committed_fps / self.capacity_fps if self.capacity_fps else 1.0
            return 0.0 if sat < 1.0 else 1e9
        batches = math.ceil(len(self.queue) / self.bs) + self.busy
        return batches * self.batch_ms / self.lanes

    # -- execution ---------------------------------------------------------

    def admit(self, request: Request, now: int) -> None:
        if self.is_frequency:
            self._admit_stream(request, now)
        else:
            self.queue.append((request, now))
            self._try_dispatch(now)

    def _admit_stream(self, request: Request, now: int) -> None:
        spare = max(0.0, self.capacity_fps - self.committed_fps)
        achieved = min(self.service.native_fps, spare)
        start = max(now, self.active_at)
        if achieved <= 1e-9:
            self.sim.finish_request(request, 0, now, DecisionKind.RESOURCE_INSUFFICIENT)
            return
        self.committed_fps += achieved
        duration = max(1, math.ceil(request.frame_count / achieved * 1000.0))
        self.sim.schedule(start + duration, EventKind.STREAM_COMPLETE,
                          (self, request, achieved))

    def _try_dispatch(self, now: int, force: bool = False) -> None:
        if self.dead or now < self.active_at:
            if self.queue and not self.dead:
                self._ensure_timer(self.active_at, now)
            return
        while self.queue and self.busy < self.lanes:
            oldest_wait = now - self.queue[0][1]
            if len(self.queue) >= self.bs or force or oldest_wait >= self.timeout_ms:
                batch = [self.queue.popleft() for _ in range(min(self.bs, len(self.queue)))]
                self._launch(batch, now)
            else:
                self._ensure_timer(self.queue[0][1] + self.timeout_ms, now)
                return
        if self.queue:
            self._ensure_timer(self.queue[0][1] + self.timeout_ms, now)

    def _launch(self, batch, now: int) -> None:
        self.busy += 1
        self.dispatched_units += len(batch)
        duration = max(1, math.ceil(self.batch_ms))
        for srv, idx in self.placement.gpu_ids:
            key = f"{srv}/gpu{idx}"
            busy = self.sim.metrics.gpu_busy_ms
            busy[key] = busy.get(key, 0.0) + duration / max(1, self.lanes)
        self.sim.schedule(now + duration, EventKind.BATCH_COMPLETE, (self, batch))

    def _ensure_timer(self, at: int, now: int) -> None:
        at = max(at, now + 1)  # never refire at the current instant (livelock)
        if self.timer_at is None or at < self.timer_at:
            self.timer_at = at
            self.sim.schedule(at, EventKind.BATCH_TIMER, self)

    def on_timer(self, now: int) -> None:
        self.timer_at = None
        if not self.dead:
            self._try_dispatch(now)

    def on_batch_complete(self, batch, now: int) -> None:
        self.busy -= 1
        if not self.dead:
            for request, _ in batch:
                met = now <= request.deadline
                credit = satisfied_count(request, self.service, deadline_met=met)
                self.sim.finish_request(request, credit, now, DecisionKind.SOLVE_LOCAL)
            # work conservation: free lane plus queued work dispatches now
            self._try_dispatch(now, force=True)
            if self.queue and self.busy < self.lanes:
                self.sim.conservation_violations.append((now, self.placement.server_id))

    def on_stream_complete(self, request: Request, achieved: float, now: int) -> None:
        self.committed_fps = max(0.0, self.committed_fps - achieved)
        if self.dead:
            return
        credit = satisfied_count(request, self.service, achieved_rate=achieved)
        self.sim.achieved_rates[request.id] = achieved
        self.sim.finish_request(request, credit, now, DecisionKind.SOLVE_LOCAL)

    def drop_all(self, now: int) -> None:
        self.dead = True
        for request, _ in self.queue:
            self.sim.finish_request(request, 0, now, DecisionKind.RESOURCE_INSUFFICIENT)
        self.queue.clear()

    def requeue_into(self, sim: "Simulation", now: int) -> None:
        """Queued (not in-flight) work is re-handled after a placement change."""
        self.dead = True
        for request, _ in self.queue:
            sim.schedule(now, EventKind.REQUEST_ARRIVAL, request)
        self.queue.clear()


class DeviceRuntime:
    """A registered edge device serving one single-GPU service, batch of one."""

    def __init__(self, sim: "Simulation", device: DeviceSpec, service: ServiceSpec,
                 ready_at: int):
        self.sim = sim
        self.device = device
        self.service = service
        self.ready_at = ready_at
        self.busy_until = 0
        self.compute_ms = service.compute_ms[device.gpu_model]

    def can_admit(self, request: Request, now: int) -> bool:
        if self.service.sensitivity is Sensitivity.FREQUENCY:
            return False  # devices serve one-shot requests only
        start = max(now, self.ready_at, self.busy_until)
        return start + math.ceil(self.compute_ms) <= request.deadline

    def admit(self, request: Request, now: int) -> None:
        start = max(now, self.ready_at, self.busy_until)
        done = start + max(1, math.ceil(self.compute_ms))
        self.busy_until = done
        self.sim.schedule(done, EventKind.BATCH_COMPLETE, (self, [(request, now)]))

    def on_batch_complete(self, batch, now: int) -> None:
        for request, _ in batch:
            met = now <= request.deadline
            credit = satisfied_count(request, self.service, deadline_met=met)
            self.sim.finish_request(request, credit, now, DecisionKind.SOLVE_ON_DEVICE)


class ServerState:
    """Engine-owned mutable state of one edge server."""

    def __init__(self, sim: "Simulation", spec: ServerSpec):
        self.sim = sim
        self.spec = spec
        self.server_id = spec.id
        self.alive = True
        self.runtimes: Dict[str, List[PlacementRuntime]] = {}
        self.cross: List[PlacementRuntime] = []
        self.devices: List[DeviceRuntime] = []
        self.rng = random.Random(f"{sim.seed}:{spec.id}")
        self.view = ClusterView(owner=spec.id)
        self.dispatch_prev: Dict[str, float] = {}
        self.loader_free_at = 0
        self.rr_counter = 0

    # handler LocalState protocol -----------------------------------------

    def local_feasible(self, request: Request, now: int):
        for runtime in self.runtimes.get(request.service_id, ()):
            if runtime.can_admit(request, now):
                return runtime
        return None

    def cross_feasible(self, request: Request, now: int):
        for runtime in self.cross:
            if runtime.service.id == request.service_id and runtime.can_admit(request, now):
                return runtime
        return None

    def device_feasible(self, request: Request, now: int):
        for dev in self.devices:
            if dev.service.id == request.service_id and dev.can_admit(request, now):
                return dev
        return None

    # snapshots for synchronization ---------------------------------------

    def all_runtimes(self):
        for lst in self.runtimes.values():
            yield from lst
        yield from self.cross

    def snapshot(self, interval_ms: int, epoch: int) -> ViewEntry:
        theoretical: Dict[str, float] = {}
        actual: Dict[str, float] = {}
        backlog: Dict[str, float] = {}
        interval_s = interval_ms / 1000.0
        for runtime in self.all_runtimes():
            if runtime.dead or runtime.placement.server_id != self.server_id:
                continue
            svc = runtime.service.id
            if runtime.is_frequency:
                theoretical[svc] = theoretical.get(svc, 0.0) + runtime.capacity_fps
                actual[svc] = actual.get(svc, 0.0) + runtime.committed_fps
            else:
                theoretical[svc] = theoretical.get(svc, 0.0) + runtime.rate_rps
                prev = self.dispatch_prev.get(id(runtime), 0.0)
                actual[svc] = actual.get(svc, 0.0) + (runtime.dispatched_units - prev) / interval_s
                self.dispatch_prev[id(runtime)] = runtime.dispatched_units
            backlog[svc] = max(backlog.get(svc, 0.0), runtime.backlog_estimate_ms())
        return ViewEntry(source=self.server_id, epoch=epoch, window_ms=interval_ms,
                         available=self.alive, theoretical=theoretical,
                         actual=actual, backlog_ms=backlog)


# ---------------------------------------------------------------------------
# Handling strategies (the flexibility seam)


def strategy_default(request, state: ServerState, view, service, now, rng, control):
    return _handler.handle(request, state, view, service, now, rng,
                           max_offload=control.max_offload,
                           expected=control.eval_expected)


def strategy_no_offload(request, state, view, service, now, rng, control):
    decision = _handler.handle(request, state, view, service, now, rng,
                               max_offload=control.max_offload)
    if decision.kind is DecisionKind.OFFLOAD:
        return HandlingDecision(DecisionKind.RESOURCE_INSUFFICIENT)
    return decision


def strategy_round_robin(request, state, view, service, now, rng, control):
    decision = _handler.handle(request, state, view, service, now, rng,
                               max_offload=control.max_offload)
    if decision.kind not in (DecisionKind.OFFLOAD, DecisionKind.RESOURCE_INSUFFICIENT):
        return decision
    if request.offload_count >= control.max_offload:
        return HandlingDecision(DecisionKind.OFFLOAD_EXCEEDED)
    ring = state.sim.ring.order
    n = len(ring)
    for step in range(1, n + 1):
        candidate = ring[(state.rr_counter + step) % n]
        if candidate != state.server_id and candidate not in request.hop_path:
            state.rr_counter = (state.rr_counter + step) % n
            return HandlingDecision(DecisionKind.OFFLOAD, candidate)
    return HandlingDecision(DecisionKind.RESOURCE_INSUFFICIENT)


def strategy_centralized(request, state, view, service, now, rng, control):
    """Group-central scheduler with fresh in-group state (delay paid upstream)."""
    fresh = state.sim.fresh_group_view(state.server_id)
    return _handler.handle(request, state, fresh, service, now, rng,
                           max_offload=control.max_offload)


STRATEGIES: Dict[str, Callable] = {
    "default": strategy_default,
    "no_offload": strategy_no_offload,
    "round_robin": strategy_round_robin,
    "centralized": strategy_centralized,
}

BASELINE_NAMES = {"RoundRobin": "round_robin", "NoOffload": "no_offload",
                  "CentralizedGroup": "centralized"}


# ---------------------------------------------------------------------------
# The simulation


class Simulation:
    def __init__(self, scenario: ScenarioModel, seed: Optional[int] = None,
                 strategy: str = "default",
                 fixed_placement: Optional[PlacementList] = None,
                 trace: Optional[Sequence[TraceRow]] = None,
                 record_log: bool = True):
        self.scenario = scenario
        self.control = scenario.control
        self.seed = scenario.control.seed if seed is None else seed
        self.strategy_name = strategy
        self.strategy = STRATEGIES[strategy]
        self.fixed_placement = fixed_placement
        self.trace = list(scenario.trace if trace is None else trace)
        self.record_log = record_log

        self.latency_table = LatencyTable(scenario)
        self.clock = 0
        self._heap: List[Tuple[int, int, EventKind, object]] = []
        self._seq = 0
        self.servers: Dict[str, ServerState] = {
            sid: ServerState(self, spec) for sid, spec in scenario.servers.items()
        }
        self.ring = _sync.RingTopology(order=tuple(scenario.servers),
                                       sync_interval_ms=self.control.sync_interval_ms)
        self.placements = PlacementList()
        self.epoch = 0
        self.metrics = Metrics(duration_ms=self.control.duration_ms)
        self.event_log: List[str] = []
        self.achieved_rates: Dict[int, float] = {}
        self.request_records: List[Request] = []  # terminal requests
        self.offload_log: List[Tuple[int, str, str]] = []  # (t, from, to)
        self.conservation_violations: List[Tuple[int, str]] = []
        self.timeline: Dict[int, List[int]] = {}  # second -> [credits, offloads]
        self._pending_membership: List = []
        self._next_req_id = 0

    # -- plumbing ----------------------------------------------------------

    def schedule(self, time: int, kind: EventKind, payload=None) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, kind, payload))

    def log(self, time: int, what: str) -> None:
        if self.record_log:
            self.event_log.append(f"{time} {what}")

    def log_hash(self) -> str:
        digest = hashlib.sha256()
        for line in self.event_log:
            digest.update(line.encode())
            digest.update(b"\n")
        return digest.hexdigest()

    def _bucket(self, time: int) -> List[int]:
        return self.timeline.setdefault(time // 1000, [0, 0])

    # -- lifecycle ---------------------------------------------------------

    def run(self) -> Metrics:
        self.schedule(0, EventKind.PLACEMENT_EPOCH, None)
        interval = self.control.sync_interval_ms
        t = interval
        while t <= self.control.duration_ms:
            self.schedule(t, EventKind.SYNC_ROUND, None)
            t += interval
        for row in self.trace:
            req = Request(
                id=self._next_req_id, service_id=row.service_id,
                origin_server=row.origin_server, arrival_time=row.arrival_ms,
                deadline=row.arrival_ms + self.scenario.services[row.service_id].latency_slo_ms,
                frame_count=row.frame_count, hop_path=(row.origin_server,),
            )
            self._next_req_id += 1
            self.metrics.submitted += submitted_units(req, self.scenario.services[row.service_id])
            self.schedule(row.arrival_ms, EventKind.REQUEST_ARRIVAL, req)
        for fault in self.scenario.faults:
            self.schedule(fault.t_ms, EventKind.FAULT, fault)
        if self.control.device_policy == "register":
            for dev in self.scenario.devices:
                self.schedule(dev.register_at_ms, EventKind.DEVICE_REGISTER, dev)

        while self._heap:
            time, _, kind, payload = heapq.heappop(self._heap)
            self.clock = max(self.clock, time)
            self._dispatch_event(time, kind, payload)
        return self.metrics

    def _dispatch_event(self, time: int, kind: EventKind, payload) -> None:
        if kind is EventKind.REQUEST_ARRIVAL:
            self._on_arrival(payload, time)
        elif kind is EventKind.BATCH_COMPLETE:
            runtime, batch = payload
            self.log(time, f"batch_done {runtime.service.id} n={len(batch)}")
            runtime.on_batch_complete(batch, time)
        elif kind is EventKind.STREAM_COMPLETE:
            runtime, request, achieved = payload
            self.log(time, f"stream_done req={request.id}")
            runtime.on_stream_complete(request, achieved, time)
        elif kind is EventKind.BATCH_TIMER:
            payload.on_timer(time)
        elif kind is EventKind.SYNC_ROUND:
            self._on_sync(time)
        elif kind is EventKind.PLACEMENT_EPOCH:
            self._on_epoch(time)
        elif kind is EventKind.FAULT:
            self._on_fault(payload, time)
        elif kind is EventKind.DEVICE_REGISTER:
            self._on_device_register(payload, time)

    # -- request handling --------------------------------------------------

    def _on_arrival(self, request: Request, now: int) -> None:
        server = self.servers.get(request.current_server)
        if server is None or not server.alive:
            self.finish_request(request, 0, now, DecisionKind.RESOURCE_INSUFFICIENT)
            return
        service = self.scenario.services[request.service_id]
        if self.strategy_name == "centralized" and not getattr(request, "_sched", False):
            delay = self.control.central_sched_ms_per_server * len(self._group_of(server.server_id))
            delayed = dataclasses.replace(request)
            object.__setattr__(delayed, "_sched", True)
            self.schedule(now + delay, EventKind.REQUEST_ARRIVAL, delayed)
            return
        self.metrics.scheduling_cost_ms += self.control.scheduling_cost_ms
        decision = self.strategy(request, server, server.view, service, now,
                                 server.rng, self.control)
        self.log(now, f"handle req={request.id} at={server.server_id} -> {decision.kind.value}")
        if decision.kind is DecisionKind.TIMEOUT:
            self.metrics.timeouts += 1
            self.finish_request(request, 0, now, DecisionKind.TIMEOUT)
        elif decision.kind in (DecisionKind.SOLVE_LOCAL, DecisionKind.SOLVE_CROSS_SERVER,
                               DecisionKind.SOLVE_ON_DEVICE):
            decision.target.admit(request, now)
        elif decision.kind is DecisionKind.OFFLOAD:
            target = decision.target
            hopped = _handler.record_hop(request, target)
            delay = transmit_latency(self.scenario.payload_bytes(request.service_id),
                                     self.scenario.bandwidth(server.server_id, target),
                                     self.control.hop_overhead_ms)
            self.offload_log.append((now, server.server_id, target))
            self._bucket(now)[1] += 1
            self.log(now, f"offload req={request.id} {server.server_id}->{target}")
            self.schedule(now + delay, EventKind.REQUEST_ARRIVAL, hopped)
        elif decision.kind is DecisionKind.OFFLOAD_EXCEEDED:
            self.metrics.offload_exceeded += 1
            self.finish_request(request, 0, now, DecisionKind.OFFLOAD_EXCEEDED)
        else:
            self.metrics.resource_insufficient += 1
            self.finish_request(request, 0, now, DecisionKind.RESOURCE_INSUFFICIENT)

    def finish_request(self, request: Request, credit: int, now: int,
                       outcome: DecisionKind) -> None:
        service = self.scenario.services[request.service_id]
        self.metrics.satisfied += credit
        self.metrics.completed_requests += 1
        category = f"{service.sensitivity.value}"
        per_cat = self.metrics.per_category_satisfied
        per_cat[category] = per_cat.get(category, 0) + credit
        hist = self.metrics.offload_histogram
        hist[request.offload_count] = hist.get(request.offload_count, 0) + 1
        if credit > 0:
            latency = now - request.arrival_time
            bucket = min(60, latency // 50)  # 50 ms buckets, capped
            lh = self.metrics.latency_histogram_ms
            lh[bucket] = lh.get(bucket, 0) + 1
            self._bucket(now)[0] += credit
        self.request_records.append(request)
        self.log(now, f"finish req={request.id} credit={credit} outcome={outcome.value}")

    # -- synchronization ---------------------------------------------------

    def _group_of(self, server_id: str) -> Tuple[str, ...]:
        size = self.control.group_size
        order = self.ring.order
        if size <= 0 or size >= len(order):
            return order
        idx = order.index(server_id)
        start = (idx // size) * size
        return order[start:start + size]

    def fresh_group_view(self, server_id: str) -> ClusterView:
        """Zero-staleness view over the server's management group."""
        view = ClusterView(owner=server_id)
        for sid in self._group_of(server_id):
            state = self.servers.get(sid)
            if state is None:
                continue
            entry = state.snapshot(self.control.sync_interval_ms, self.epoch)
            view.per_server[sid] = entry
        return view

    def _snapshots(self) -> Dict[str, ViewEntry]:
        return {sid: self.servers[sid].snapshot(self.control.sync_interval_ms, self.epoch)
                for sid in self.ring.order if sid in self.servers}

    def _on_sync(self, now: int) -> None:
        if not self.ring.order:
            return
        size = self.control.group_size
        order = self.ring.order
        groups = [order] if size <= 0 or size >= len(order) else [
            order[i:i + size] for i in range(0, len(order), size)
        ]
        snapshots = self._snapshots()
        for group in groups:
            subring = _sync.RingTopology(order=tuple(group),
                                         sync_interval_ms=self.control.sync_interval_ms)
            views = {sid: self.servers[sid].view for sid in group}
            merged = _sync.exchange_round(views, subring, snapshots)
            for sid, view in merged.items():
                self.servers[sid].view = view
        for sid, state in self.servers.items():
            if not state.alive:
                _sync.mark_unavailable({s.server_id: s.view for s in self.servers.values()}, sid)
        for fault in self.scenario.faults:
            if fault.kind == "corrupt" and 0 <= now - fault.t_ms < self.control.sync_interval_ms:
                victim = self.servers.get(fault.server)
                if victim is not None:
                    others = [s for s in victim.view.per_server if s != fault.server]
                    if others:
                        target = others[victim.rng.randrange(len(others))]
                        _sync.corrupt_entry(victim.view, target)
                        self.log(now, f"corrupt view@{fault.server} entry={target}")
        self.log(now, "sync_round")

    # -- placement epochs --------------------------------------------------

    def _on_epoch(self, now: int) -> None:
        joins = [ev for ev in self.scenario.membership
                 if ev.kind == "join" and ev.t_ms <= now and ev.server not in self.servers]
        exits = [ev for ev in self.scenario.membership
                 if ev.kind == "exit" and ev.t_ms <= now and ev.server in self.servers]
        if joins or exits:
            self.ring = _sync.apply_membership(
                self.ring, [ev.server for ev in joins], [ev.server for ev in exits])
            for ev in exits:
                self._retire_server(ev.server, now)
            for ev in joins:
                spec = ServerSpec(id=ev.server, gpu_models=ev.gpu_models,
                                  ring_index=len(self.servers))
                self.servers[ev.server] = ServerState(self, spec)
            self.log(now, f"membership join={len(joins)} exit={len(exits)}")

        if self.fixed_placement is not None:
            theta = self.fixed_placement if self.epoch == 0 else self.placements
        else:
            from . import placement as _placement
            horizon = now + self.control.placement_interval_ms
            window = [r for r in self.trace if now <= r.arrival_ms < horizon]
            if window or self.epoch == 0:
                theta = _placement.sssp(window, self.scenario,
                                        servers=list(self.ring.order),
                                        priority=list(self.scenario.priority))
            else:
                theta = self.placements
        self._install_placements(theta, now)
        self.epoch += 1
        nxt = now + self.control.placement_interval_ms
        if nxt <= self.control.duration_ms and (self.fixed_placement is None
                                                or self.scenario.membership):
            self.schedule(nxt, EventKind.PLACEMENT_EPOCH, None)

    def _install_placements(self, theta: PlacementList, now: int) -> None:
        existing: Dict[tuple, PlacementRuntime] = {}
        for state in self.servers.values():
            for runtime in state.all_runtimes():
                if not runtime.dead:
                    existing[runtime.key] = runtime
        keep = set()
        for state in self.servers.values():
            state.runtimes = {}
            state.cross = []
        for placement in theta.entries:
            anchor = self.servers.get(placement.server_id if not placement.cross_server
                                      else placement.member_servers[0])
            if anchor is None or not anchor.alive:
                continue
            key = (placement.service_id, placement.server_id, placement.gpu_ids, placement.plan)
            runtime = existing.get(key)
            if runtime is None:
                service = self.scenario.services[placement.service_id]
                gpu_model = self._gpu_model_of(placement, anchor)
                batch_ms = self.latency_table.batch_ms(service, gpu_model,
                                                       placement.plan.bs, placement.plan.mt)
                if placement.cross_server and placement.plan.pp_degree > 1:
                    stage = transmit_latency(self.scenario.payload_bytes(service.id),
                                             self.scenario.bandwidth_default,
                                             self.control.hop_overhead_ms)
                    batch_ms += stage * (placement.plan.pp_degree - 1)
                active_at = now + self.latency_table.load_ms(service)
                runtime = PlacementRuntime(self, placement, service, batch_ms, active_at)
            keep.add(id(runtime))
            if placement.cross_server:
                for member in placement.member_servers:
                    if member in self.servers:
                        self.servers[member].cross.append(runtime)
            else:
                target = self.servers[placement.server_id]
                target.runtimes.setdefault(placement.service_id, []).append(runtime)
        for runtime in existing.values():
            if id(runtime) not in keep:
                runtime.requeue_into(self, now)
        self.placements = theta
        self.log(now, f"placement epoch={self.epoch} entries={len(theta.entries)}")

    def _gpu_model_of(self, placement: Placement, anchor: ServerState) -> str:
        if placement.gpu_ids:
            srv, idx = placement.gpu_ids[0]
            state = self.servers.get(srv)
            if state is not None and idx < len(state.spec.gpu_models):
                return state.spec.gpu_models[idx]
        return anchor.spec.gpu_models[0]

    def _retire_server(self, server_id: str, now: int) -> None:
        state = self.servers.pop(server_id, None)
        if state is None:
            return
        for runtime in list(state.all_runtimes()):
            runtime.drop_all(now)

    # -- faults and devices ------------------------------------------------

    def _on_fault(self, fault, now: int) -> None:
        if fault.kind != "fail":
            return  # corruption is applied at the next sync round
        state = self.servers.get(fault.server)
        if state is None or not state.alive:
            return
        state.alive = False
        for runtime in list(state.all_runtimes()):
            runtime.drop_all(now)
        state.runtimes = {}
        state.cross = []
        self.ring = _sync.bypass_faulty(self.ring, fault.server)
        _sync.mark_unavailable({s.server_id: s.view for s in self.servers.values()},
                               fault.server)
        self.placements = PlacementList(
            tuple(p for p in self.placements.entries
                  if fault.server not in p.member_servers),
            self.placements.epoch)
        self.log(now, f"fault fail {fault.server}")

    def _on_device_register(self, device: DeviceSpec, now: int) -> None:
        state = self.servers.get(device.server)
        if state is None or not state.alive:
            return
        preferred = sorted(state.runtimes)
        try:
            assignment, state.loader_free_at = _sync.register_device(
                device, self.scenario.services, now, state.loader_free_at, preferred)
        except _sync.NoEligibleService:
            self.log(now, f"device {device.id} rejected: no eligible service")
            return
        service = self.scenario.services[assignment.service_id]
        state.devices.append(DeviceRuntime(self, device, service, assignment.ready_at_ms))
        self.log(now, f"device {device.id} -> {assignment.service_id} ready={assignment.ready_at_ms}")


# ---------------------------------------------------------------------------
# Public entry points


def run(scenario: ScenarioModel, seed: Optional[int] = None,
        fixed_placement: Optional[PlacementList] = None) -> Metrics:
    return Simulation(scenario, seed=seed, fixed_placement=fixed_placement).run()


def run_simulation(scenario: ScenarioModel, seed: Optional[int] = None,
                   strategy: str = "default",
                   fixed_placement: Optional[PlacementList] = None) -> Simulation:
    sim = Simulation(scenario, seed=seed, strategy=strategy,
                     fixed_placement=fixed_placement)
    sim.run()
    return sim


def run_baseline(scenario: ScenarioModel, baseline: str,
                 seed: Optional[int] = None,
                 fixed_placement: Optional[PlacementList] = None) -> Metrics:
    """Run with a swapped-in handling strategy; placement machinery unchanged."""
    if baseline not in BASELINE_NAMES:
        raise ValidationError(f"unknown baseline {baseline!r}")
    sim = Simulation(scenario, seed=seed, strategy=BASELINE_NAMES[baseline],
                     fixed_placement=fixed_placement)
    sim.run()
    return sim.metrics


def emit_metrics(sim: Simulation, outdir: str) -> List[str]:
    """Write run_summary.csv, timeseries.csv and placement_report.txt."""
    os.makedirs(outdir, exist_ok=True)
    written = []
    m = sim.metrics
    try:
        path = os.path.join(outdir, "run_summary.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("metric,value\n")
            fh.write(f"satisfied,{m.satisfied}\n")
            fh.write(f"submitted,{m.submitted}\n")
            fh.write(f"satisfaction_rate,{m.satisfaction_rate:.6f}\n")
            fh.write(f"completed_requests,{m.completed_requests}\n")
            fh.write(f"timeouts,{m.timeouts}\n")
            fh.write(f"offload_exceeded,{m.offload_exceeded}\n")
            fh.write(f"resource_insufficient,{m.resource_insufficient}\n")
            fh.write(f"mean_offload_count,{m.mean_offload_count:.6f}\n")
            fh.write(f"duration_ms,{m.duration_ms}\n")
            fh.write(f"event_log_sha256,{sim.log_hash()}\n")
        written.append(path)

        path = os.path.join(outdir, "timeseries.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("second,goodput,offloads\n")
            for second in sorted(sim.timeline):
                credits, offloads = sim.timeline[second]
                fh.write(f"{second},{credits},{offloads}\n")
        written.append(path)

        path = os.path.join(outdir, "placement_report.txt")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(format_placement_report(sim.placements))
        written.append(path)
    except OSError as exc:
        raise OSError(f"writing metrics under {outdir}: {exc}") from exc
    return written


def format_placement_report(theta: PlacementList) -> str:
    lines = [f"epoch {theta.epoch}: {len(theta.entries)} placements"]
    for p in theta.entries:
        gpus = " ".join(f"{srv}:{idx}" for srv, idx in p.gpu_ids)
        plan = p.plan
        lines.append(
            f"{p.service_id} @ {p.server_id} gpus=[{gpus}] "
            f"bs={plan.bs} mt={plan.mt} tp={plan.tp_degree} pp={plan.pp_degree} "
            f"mf={plan.mf} dp={plan.dp_groups}"
            + (" cross-server" if p.cross_server else "")
        )
    return "\n".join(lines) + "\n"
