"""Core domain types shared by the allocator, handler, placement and engine."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Tuple


class ParseError(ValueError):
    """Scenario text could not be parsed."""


class ValidationError(ValueError):
    """A scenario or model invariant is broken; the message names the field."""


class LoopViolation(RuntimeError):
    """A request was about to revisit a server already on its hop path."""


class Sensitivity(enum.Enum):
    LATENCY = "latency"
    FREQUENCY = "frequency"


class GpuClass(enum.Enum):
    SINGLE_GPU = "single"
    MULTI_GPU = "multi"


@dataclass(frozen=True)
class TaskCategory:
    """One of the four quadrants: {latency, frequency} x {single, multi GPU}."""

    sensitivity: Sensitivity
    gpu_class: GpuClass


@dataclass(frozen=True)
class AllocationPlan:
    """Chosen operator settings for one service on one GPU model.

    bs/mt are powers of two within their profiling ranges; dp_groups > 1 is
    only ever emitted for frequency-sensitive services.
    """

    bs: int = 1
    mt: int = 1
    tp_degree: int = 1
    pp_degree: int = 1
    mf: int = 1
    dp_groups: int = 1
    inter_request_count: int = 1

    def validate(self) -> None:
        if self.bs not in _POW2_BS:
            raise ValidationError(f"bs: {self.bs} not a power of two in [1, 512]")
        if self.mt not in _POW2_MT:
            raise ValidationError(f"mt: {self.mt} not a power of two in [1, 16]")
        if self.dp_groups < 1:
            raise ValidationError("dp_groups: must be >= 1")
        if self.mf < 1:
            raise ValidationError("mf: must be >= 1")
        if self.inter_request_count != self.bs // self.mf:
            raise ValidationError(
                f"inter_request_count: {self.inter_request_count} != floor({self.bs}/{self.mf})"
            )

    @property
    def mp_slices(self) -> int:
        return self.tp_degree * self.pp_degree

    @property
    def lanes(self) -> int:
        """Independent dispatch lanes: MT replicas times DP groups."""
        return self.mt * self.dp_groups


_POW2_BS = {1, 2, 4, 8, 16, 32, 64, 128, 256, 512}
_POW2_MT = {1, 2, 4, 8, 16}


@dataclass(frozen=True)
class ServiceSpec:
    """An AI service with per-slice resource demands and SLOs.

    compute_demand / vram_demand are fractions of one GPU consumed by a
    single slice (after any model-parallel slicing). compute_ms maps GPU
    model -> milliseconds to run a batch of one request on one slice.
    """

    id: str
    compute_demand: float
    vram_demand: float
    compute_ms: Mapping[str, float]
    latency_slo_ms: int
    frequency_slo: Optional[float] = None
    input_fps: Optional[float] = None
    frame_latency_budget_ms: Optional[int] = None
    needs_multi_gpu: bool = False
    model_load_ms: int = 0
    model_bytes: int = 0
    tp_degree: int = 1
    pp_degree: int = 1
    payload_bytes: int = 0

    def validate(self, gpu_models=None) -> None:
        if not 0.0 < self.compute_demand <= 1.0:
            raise ValidationError(f"compute_demand: {self.id} has {self.compute_demand}, need (0, 1]")
        if not 0.0 < self.vram_demand <= 1.0:
            raise ValidationError(f"vram_demand: {self.id} has {self.vram_demand}, need (0, 1]")
        if self.latency_slo_ms <= 0:
            raise ValidationError(f"latency_slo_ms: {self.id} must be positive")
        if self.frequency_slo is not None and self.frequency_slo <= 0:
            raise ValidationError(f"frequency_slo: {self.id} must be positive when present")
        if gpu_models is not None:
            missing = set(gpu_models) - set(self.compute_ms)
            if missing:
                raise ValidationError(
                    f"compute_ms: {self.id} missing entry for GPU model(s) {sorted(missing)}"
                )

    @property
    def sensitivity(self) -> Sensitivity:
        return Sensitivity.FREQUENCY if self.frequency_slo is not None else Sensitivity.LATENCY

    @property
    def native_fps(self) -> float:
        """Rate at which frames of one stream arrive; defaults to the SLO rate."""
        if self.input_fps is not None:
            return self.input_fps
        return self.frequency_slo or 0.0


@dataclass(frozen=True)
class Request:
    """One user task: a target service, an origin and a hop history."""

    id: int
    service_id: str
    origin_server: str
    arrival_time: int
    deadline: int
    frame_count: int = 1
    hop_path: Tuple[str, ...] = ()

    def __post_init__(self):
        if len(set(self.hop_path)) != len(self.hop_path):
            raise LoopViolation(f"request {self.id}: duplicate server in hop path {self.hop_path}")

    @property
    def offload_count(self) -> int:
        return max(0, len(self.hop_path) - 1)

    @property
    def current_server(self) -> str:
        return self.hop_path[-1] if self.hop_path else self.origin_server


@dataclass(frozen=True)
class DeviceSpec:
    """A registered computing-capable edge device (one GPU equivalent)."""

    id: str
    server: str
    gpu_model: str
    load_bandwidth_mbps: float = 100.0
    register_at_ms: int = 0


@dataclass(frozen=True)
class ServerSpec:
    id: str
    gpu_models: Tuple[str, ...]
    ring_index: int = 0

    @property
    def gpu_count(self) -> int:
        return len(self.gpu_models)


@dataclass
class Gpu:
    """Mutable per-GPU resource accounting, owned by the engine/placement."""

    model: str
    index: int
    vram_free: float = 1.0
    compute_free: float = 1.0
    resident: list = field(default_factory=list)  # (service_id, mt_degree)

    def fits(self, compute: float, vram: float) -> bool:
        return self.compute_free >= compute - 1e-9 and self.vram_free >= vram - 1e-9

    def take(self, service_id: str, mt: int, compute: float, vram: float) -> None:
        if not self.fits(compute, vram):
            raise ValidationError(f"gpu {self.index}: over-committed placing {service_id}")
        self.compute_free -= compute
        self.vram_free -= vram
        self.resident.append((service_id, mt))


# Identifier of the hypothetical server aggregating all GPUs (stage S3).
EPSILON_SERVER = "@all"


@dataclass(frozen=True)
class Placement:
    """Service placed on a server with a concrete GPU set and operator plan."""

    service_id: str
    server_id: str
    gpu_ids: Tuple[Tuple[str, int], ...]  # (server, gpu index) per slice
    plan: AllocationPlan
    cross_server: bool = False

    @property
    def member_servers(self) -> Tuple[str, ...]:
        seen = []
        for srv, _ in self.gpu_ids:
            if srv not in seen:
                seen.append(srv)
        return tuple(seen)


@dataclass(frozen=True)
class PlacementList:
    entries: Tuple[Placement, ...] = ()
    epoch: int = 0

    def __add__(self, placement: Placement) -> "PlacementList":
        return PlacementList(self.entries + (placement,), self.epoch)

    def services_on(self, server_id: str):
        return {p.service_id for p in self.entries if server_id in p.member_servers}

    def __len__(self):
        return len(self.entries)


@dataclass
class ViewEntry:
    """What one server believes about one (possibly remote) server."""

    source: str
    epoch: int = 0
    staleness_ms: int = 0
    window_ms: int = 0
    available: bool = True
    theoretical: Dict[str, float] = field(default_factory=dict)  # service -> p_hat
    actual: Dict[str, float] = field(default_factory=dict)       # service -> p over window
    backlog_ms: Dict[str, float] = field(default_factory=dict)

    def copy(self) -> "ViewEntry":
        return ViewEntry(
            source=self.source,
            epoch=self.epoch,
            staleness_ms=self.staleness_ms,
            window_ms=self.window_ms,
            available=self.available,
            theoretical=dict(self.theoretical),
            actual=dict(self.actual),
            backlog_ms=dict(self.backlog_ms),
        )


@dataclass
class ClusterView:
    """A server's (possibly stale) snapshot of every live server."""

    owner: str
    per_server: Dict[str, ViewEntry] = field(default_factory=dict)

    def entry(self, server_id: str) -> Optional[ViewEntry]:
        return self.per_server.get(server_id)


@dataclass
class Metrics:
    """SLO-satisfaction accounting over one simulation run (objective units)."""

    satisfied: int = 0
    submitted: int = 0
    timeouts: int = 0
    offload_exceeded: int = 0
    resource_insufficient: int = 0
    completed_requests: int = 0
    per_category_satisfied: Dict[str, int] = field(default_factory=dict)
    latency_histogram_ms: Dict[int, int] = field(default_factory=dict)
    offload_histogram: Dict[int, int] = field(default_factory=dict)
    gpu_busy_ms: Dict[str, float] = field(default_factory=dict)
    duration_ms: int = 0
    scheduling_cost_ms: float = 0.0

    @property
    def satisfaction_rate(self) -> float:
        return self.satisfied / self.submitted if self.submitted else 0.0

    @property
    def mean_offload_count(self) -> float:
        total = sum(self.offload_histogram.values())
        if not total:
            return 0.0
        return sum(k * v for k, v in self.offload_histogram.items()) / total


def satisfied_count(request: Request, service: ServiceSpec,
                    achieved_rate: Optional[float] = None,
                    deadline_met: bool = True) -> int:
    """Satisfaction credit of one completed request.

    Latency-sensitive: 1 if the deadline was met, else 0.
    Frequency-sensitive: frame_count * min(1, achieved / slo), rounded down;
    exceeding the SLO rate earns no extra credit.
    """
    if service.sensitivity is Sensitivity.LATENCY:
        return 1 if deadline_met else 0
    rate = max(0.0, achieved_rate or 0.0)
    frac = min(1.0, rate / service.frequency_slo)
    return math.floor(request.frame_count * frac + 1e-9)


def submitted_units(request: Request, service: ServiceSpec) -> int:
    """Objective units a request contributes to the denominator."""
    if service.sensitivity is Sensitivity.FREQUENCY:
        return request.frame_count
    return 1


def extend_hop_path(request: Request, server_id: str) -> Request:
    if server_id in request.hop_path:
        raise LoopViolation(f"request {request.id}: {server_id} already on path {request.hop_path}")
    return replace(request, hop_path=request.hop_path + (server_id,))
