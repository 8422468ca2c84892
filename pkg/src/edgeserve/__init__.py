"""Deterministic trace-driven simulator for edge-cloud AI inference serving."""

from .model import (
    AllocationPlan,
    ClusterView,
    GpuClass,
    LoopViolation,
    Metrics,
    ParseError,
    Placement,
    PlacementList,
    Request,
    Sensitivity,
    ServiceSpec,
    TaskCategory,
    ValidationError,
    ViewEntry,
)
from .scenario import ScenarioModel, load_scenario, load_scenario_file, serialize
from .engine import Simulation, run, run_baseline, run_simulation

__all__ = [
    "AllocationPlan",
    "ClusterView",
    "GpuClass",
    "LoopViolation",
    "Metrics",
    "ParseError",
    "Placement",
    "PlacementList",
    "Request",
    "ScenarioModel",
    "Sensitivity",
    "ServiceSpec",
    "Simulation",
    "TaskCategory",
    "ValidationError",
    "ViewEntry",
    "load_scenario",
    "load_scenario_file",
    "run",
    "run_baseline",
    "run_simulation",
    "serialize",
]

__version__ = "0.1.0"
