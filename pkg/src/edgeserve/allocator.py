"""Task categorization and parallelism-operator selection.

Maps each service onto one of four quadrants (latency/frequency x
single/multi GPU) and picks operator settings: batch size and multi-task
degree from offline profiles, model-parallel degrees from the scenario,
and the frame-level operators (multi-frame grouping, data-parallel group
count) from the service's rate requirements.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Dict, Optional, Tuple

from .model import (
    AllocationPlan,
    GpuClass,
    Sensitivity,
    ServiceSpec,
    TaskCategory,
    ValidationError,
)
from .scenario import ScenarioModel, SynthProfile

BS_RANGE = tuple(2 ** i for i in range(10))   # profiling range for batch size
MT_RANGE = tuple(2 ** i for i in range(5))    # profiling range for replication


class NoFeasibleBS(ValidationError):
    """Even a batch of one violates the latency SLO."""


class ZeroGroupRate(ValidationError):
    """A data-parallel group with non-positive frame rate cannot be scaled."""


class ProfileTable:
    """Measured (goodput, latency) per (service, gpu, bs, mt).

    Rows come from the scenario's [profiles] section; missing rows fall back
    to the service's analytic profile when one is declared in [profile_synth].
    """

    def __init__(self, rows=(), synth: Optional[Dict[str, SynthProfile]] = None):
        self._rows: Dict[Tuple[str, str, int, int], Tuple[float, float]] = {}
        self._synth = dict(synth or {})
        for svc, gpu, bs, mt, goodput, latency in rows:
            self._rows[(svc, gpu, bs, mt)] = (goodput, latency)

    @classmethod
    def from_scenario(cls, scenario: ScenarioModel) -> "ProfileTable":
        return cls(scenario.profile_rows, scenario.synth)

    def lookup(self, service_id: str, gpu_model: str, bs: int, mt: int) -> Tuple[float, float]:
        """Returns (goodput, latency_ms); raises ValidationError if unknown."""
        key = (service_id, gpu_model, bs, mt)
        if key in self._rows:
            return self._rows[key]
        synth = self._synth.get(service_id)
        if synth is not None:
            return synth.goodput(bs, mt), synth.latency_ms(bs, mt)
        raise ValidationError(
            f"profiles: no row or synth profile for ({service_id}, {gpu_model}, bs={bs}, mt={mt})"
        )

    def has(self, service_id: str, gpu_model: str, bs: int, mt: int) -> bool:
        try:
            self.lookup(service_id, gpu_model, bs, mt)
            return True
        except ValidationError:
            return False


def categorize(service: ServiceSpec) -> TaskCategory:
    """Pure quadrant assignment from the service declaration."""
    sensitivity = (Sensitivity.FREQUENCY if service.frequency_slo is not None
                   else Sensitivity.LATENCY)
    gpu_class = GpuClass.MULTI_GPU if service.needs_multi_gpu else GpuClass.SINGLE_GPU
    return TaskCategory(sensitivity, gpu_class)


def select_batch_size(service: ServiceSpec, gpu_model: str, profiles: ProfileTable,
                      mt: int = 1) -> int:
    """Largest-goodput batch size whose latency fits the SLO; ties go small."""
    best_bs = None
    best_goodput = -1.0
    for bs in BS_RANGE:
        goodput, latency = profiles.lookup(service.id, gpu_model, bs, mt)
        if latency > service.latency_slo_ms:
            continue
        if goodput > best_goodput + 1e-9:
            best_goodput = goodput
            best_bs = bs
    if best_bs is None:
        raise NoFeasibleBS(f"{service.id}: latency at bs=1 already exceeds SLO on {gpu_model}")
    return best_bs


def select_multitask_degree(service: ServiceSpec, gpu_model: str, profiles: ProfileTable,
                            bs: int) -> int:
    """Replication degree maximizing per-GPU goodput at the fixed batch size.

    Resource feasibility (demand * mt <= 1 per GPU) is enforced; ties break
    toward the smaller degree. mt=1 is always feasible for valid services.
    """
    best_mt = 1
    best_goodput = -1.0
    for mt in MT_RANGE:
        if service.compute_demand * mt > 1.0 + 1e-9 or service.vram_demand * mt > 1.0 + 1e-9:
            continue
        goodput, _ = profiles.lookup(service.id, gpu_model, bs, mt)
        if goodput > best_goodput + 1e-9:
            best_goodput = goodput
            best_mt = mt
    return best_mt


def dp_group_count(frame_rate_requirement: float, rate_of_one_group: float) -> int:
    """Number of replicated GPU groups needed to reach the required rate."""
    if rate_of_one_group <= 0:
        raise ZeroGroupRate(f"rate_of_one_group must be positive, got {rate_of_one_group}")
    if frame_rate_requirement <= 0:
        raise ValidationError(f"frame_rate_requirement must be positive, got {frame_rate_requirement}")
    return math.ceil(frame_rate_requirement / rate_of_one_group - 1e-9)


def max_inter_frame_count(inter_frame_latency_budget_ms: float, fps: float) -> int:
    """Frames that may share a batch before per-frame latency busts the budget."""
    if inter_frame_latency_budget_ms <= 0 or fps <= 0:
        raise ValidationError("inter-frame budget and fps must be positive")
    return max(1, math.floor(inter_frame_latency_budget_ms * fps / 1000.0 + 1e-9))


def inter_request_count(bs: int, mf_max: int) -> int:
    """Requests per batch once frames are grouped; 0 means MF must be lowered."""
    if bs < 1 or mf_max < 1:
        raise ValidationError("bs and mf must be >= 1")
    return bs // mf_max


def build_allocation_plan(service: ServiceSpec, category: TaskCategory,
                          profiles: ProfileTable, gpu_model: str) -> AllocationPlan:
    """Quadrant rules: BS+MT everywhere, MP for multi-GPU, MF/DP for frequency."""
    tp, pp = 1, 1
    if category.gpu_class is GpuClass.MULTI_GPU:
        tp, pp = service.tp_degree, service.pp_degree

    bs = select_batch_size(service, gpu_model, profiles)
    mt = select_multitask_degree(service, gpu_model, profiles, bs)

    mf = 1
    dp = 1
    if category.sensitivity is Sensitivity.FREQUENCY:
        fps = service.frequency_slo or 0.0
        if service.frame_latency_budget_ms is not None:
            mf = max_inter_frame_count(service.frame_latency_budget_ms, fps)
        # lower MF until a batch holds at least one full frame group
        while mf > 1 and inter_request_count(bs, mf) < 1:
            mf -= 1
        group_rate, _ = profiles.lookup(service.id, gpu_model, bs, mt)
        if category.gpu_class is GpuClass.MULTI_GPU:
            dp = dp_group_count(fps, group_rate)

    plan = AllocationPlan(
        bs=bs, mt=mt, tp_degree=tp, pp_degree=pp, mf=mf, dp_groups=dp,
        inter_request_count=inter_request_count(bs, mf),
    )
    plan.validate()
    return plan
