"""Scenario file loading, validation and round-trip serialization.

The scenario format is plain sectioned text. Sections hold either
``key = value`` lines or comma-separated rows:

    [control]     key = value run parameters (all optional, defaults below)
    [gpus]        one GPU model id per row
    [servers]     server = model:count[,model:count...]
    [bandwidth]   default = mbps ; a,b = mbps overrides (symmetric)
    [services]    dotted keys: svc.field = value
    [profiles]    rows: service, gpu, bs, mt, goodput, latency_ms
    [profile_synth] dotted keys for the analytic profile fallback
    [trace]       rows: arrival_ms, service_id, origin_server, frame_count
    [devices]     dotted keys: dev.server / dev.gpu_model / ...
    [faults]      rows: fail|corrupt, server, t_ms
    [membership]  rows: join, server, model:count, t_ms  |  exit, server, t_ms
    [priority]    rows: service, server (stage-one placement priority)

Unknown sections and unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Tuple

from .model import (
    DeviceSpec,
    ParseError,
    ServerSpec,
    ServiceSpec,
    ValidationError,
)

_SECTIONS = (
    "control", "gpus", "servers", "bandwidth", "services", "profiles",
    "profile_synth", "trace", "devices", "faults", "membership", "priority",
)

_SERVICE_KEYS = {
    "compute_demand": float,
    "vram_demand": float,
    "latency_slo_ms": int,
    "frequency_slo": float,
    "input_fps": float,
    "frame_latency_budget_ms": int,
    "needs_multi_gpu": None,  # bool, parsed specially
    "model_load_ms": int,
    "model_bytes": int,
    "tp_degree": int,
    "pp_degree": int,
    "payload_bytes": int,
}

_SYNTH_KEYS = {"base_ms": float, "per_item_ms": float, "peak_bs": int, "mt_overhead": float}

_DEVICE_KEYS = {"server": str, "gpu_model": str, "load_bandwidth_mbps": float,
                "register_at_ms": int}


@dataclass(frozen=True)
class Control:
    """Run-control parameters from the [control] section."""

    seed: int = 0
    duration_ms: int = 10_000
    sync_interval_ms: int = 100
    placement_interval_ms: int = 10_000
    max_offload: int = 5
    hop_overhead_ms: int = 1
    payload_default_bytes: int = 50_000
    batch_timeout_divisor: int = 4
    bytes_per_server: int = 1024
    group_size: int = 0  # 0 = one ring over all servers
    placement_mode: str = "offline"
    eval_expected: bool = False
    central_sched_ms_per_server: int = 10
    scheduling_cost_ms: float = 0.1
    device_policy: str = "register"  # or "ignore"

    def validate(self) -> None:
        if self.sync_interval_ms < 1:
            raise ValidationError("sync_interval_ms: must be >= 1")
        if self.placement_interval_ms < self.sync_interval_ms:
            raise ValidationError("placement_interval_ms: must be >= sync_interval_ms")
        if self.max_offload < 0:
            raise ValidationError("max_offload: must be >= 0")
        if self.placement_mode not in ("offline", "online"):
            raise ValidationError(f"placement_mode: unknown mode {self.placement_mode!r}")
        if self.device_policy not in ("register", "ignore"):
            raise ValidationError(f"device_policy: unknown policy {self.device_policy!r}")


@dataclass(frozen=True)
class TraceRow:
    arrival_ms: int
    service_id: str
    origin_server: str
    frame_count: int = 1


@dataclass(frozen=True)
class FaultEvent:
    kind: str  # "fail" | "corrupt"
    server: str
    t_ms: int


@dataclass(frozen=True)
class MembershipEvent:
    kind: str  # "join" | "exit"
    server: str
    t_ms: int
    gpu_models: Tuple[str, ...] = ()


@dataclass(frozen=True)
class SynthProfile:
    """Analytic profile fallback: latency affine in bs, goodput concave."""

    base_ms: float = 5.0
    per_item_ms: float = 1.0
    peak_bs: int = 512
    mt_overhead: float = 0.0

    def latency_ms(self, bs: int, mt: int) -> float:
        return (self.base_ms + self.per_item_ms * bs) * (1.0 + self.mt_overhead * (mt - 1))

    def goodput(self, bs: int, mt: int) -> float:
        raw = mt * bs * 1000.0 / self.latency_ms(bs, mt)
        if bs <= self.peak_bs:
            return raw
        return raw * self.peak_bs / bs  # decays past the measured peak


@dataclass(frozen=True)
class ScenarioModel:
    services: Dict[str, ServiceSpec]
    servers: Dict[str, ServerSpec]
    gpu_models: Tuple[str, ...]
    bandwidth_default: float
    bandwidth_overrides: Tuple[Tuple[str, str, float], ...]
    trace: Tuple[TraceRow, ...]
    control: Control
    profile_rows: Tuple[Tuple[str, str, int, int, float, float], ...] = ()
    synth: Dict[str, SynthProfile] = field(default_factory=dict)
    devices: Tuple[DeviceSpec, ...] = ()
    faults: Tuple[FaultEvent, ...] = ()
    membership: Tuple[MembershipEvent, ...] = ()
    priority: Tuple[Tuple[str, str], ...] = ()

    def __eq__(self, other):
        if not isinstance(other, ScenarioModel):
            return NotImplemented
        return serialize(self) == serialize(other)

    def __hash__(self):
        return hash(serialize(self))

    def bandwidth(self, a: str, b: str) -> float:
        for x, y, mbps in self.bandwidth_overrides:
            if {x, y} == {a, b}:
                return mbps
        return self.bandwidth_default

    def payload_bytes(self, service_id: str) -> int:
        svc = self.services[service_id]
        return svc.payload_bytes or self.control.payload_default_bytes


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ParseError(f"{key}: expected boolean, got {raw!r}")


def _sectionize(text: str) -> Dict[str, List[str]]:
    sections: Dict[str, List[str]] = {}
    current: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in _SECTIONS:
                raise ParseError(f"line {lineno}: unknown section [{current}]")
            sections.setdefault(current, [])
            continue
        if current is None:
            raise ParseError(f"line {lineno}: content before any section header")
        sections[current].append(line)
    return sections


def _kv(lines: List[str], section: str) -> List[Tuple[str, str]]:
    pairs = []
    for line in lines:
        if "=" not in line:
            raise ParseError(f"[{section}]: expected key = value, got {line!r}")
        key, val = line.split("=", 1)
        pairs.append((key.strip(), val.strip()))
    return pairs


def _parse_gpu_list(spec: str, where: str) -> Tuple[str, ...]:
    models: List[str] = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            model, count = part.split(":", 1)
            try:
                n = int(count)
            except ValueError:
                raise ParseError(f"{where}: bad GPU count in {part!r}")
            models.extend([model.strip()] * n)
        else:
            models.append(part)
    if not models:
        raise ParseError(f"{where}: empty GPU list")
    return tuple(models)


def load_scenario(config_text: str) -> ScenarioModel:
    """Parse and validate a scenario; raises ParseError / ValidationError."""
    sections = _sectionize(config_text)

    control_fields = {f.name: f for f in fields(Control)}
    control_kwargs = {}
    for key, val in _kv(sections.get("control", []), "control"):
        if key not in control_fields:
            raise ValidationError(f"control.{key}: unknown control key")
        ftype = control_fields[key].type
        if key == "eval_expected":
            control_kwargs[key] = _parse_bool(val, f"control.{key}")
        elif ftype == "float":
            control_kwargs[key] = float(val)
        elif ftype == "int":
            control_kwargs[key] = int(val)
        else:
            control_kwargs[key] = val
    control = Control(**control_kwargs)
    control.validate()

    gpu_models = tuple(sections.get("gpus", []))
    if len(set(gpu_models)) != len(gpu_models):
        raise ValidationError("gpus: duplicate GPU model id")

    servers: Dict[str, ServerSpec] = {}
    for idx, (name, spec) in enumerate(_kv(sections.get("servers", []), "servers")):
        if name in servers:
            raise ValidationError(f"servers.{name}: duplicate server id")
        models = _parse_gpu_list(spec, f"servers.{name}")
        for m in models:
            if m not in gpu_models:
                raise ValidationError(f"servers.{name}: undeclared GPU model {m!r}")
        servers[name] = ServerSpec(id=name, gpu_models=models, ring_index=idx)
    if not servers:
        raise ValidationError("servers: at least one server required")

    bandwidth_default = 1000.0
    overrides: List[Tuple[str, str, float]] = []
    for key, val in _kv(sections.get("bandwidth", []), "bandwidth"):
        if key == "default":
            bandwidth_default = float(val)
        elif "," in key:
            a, b = (p.strip() for p in key.split(",", 1))
            for s in (a, b):
                if s not in servers:
                    raise ValidationError(f"bandwidth.{key}: unknown server {s!r}")
            overrides.append((a, b, float(val)))
        else:
            raise ValidationError(f"bandwidth.{key}: unknown bandwidth key")
    if bandwidth_default <= 0:
        raise ValidationError("bandwidth.default: must be positive")

    raw_services: Dict[str, Dict[str, object]] = {}
    for key, val in _kv(sections.get("services", []), "services"):
        if "." not in key:
            raise ValidationError(f"services.{key}: expected svc.field = value")
        svc, attr = key.split(".", 1)
        entry = raw_services.setdefault(svc, {})
        if attr.startswith("compute_ms."):
            model = attr.split(".", 1)[1]
            entry.setdefault("compute_ms", {})[model] = float(val)
        elif attr == "needs_multi_gpu":
            entry[attr] = _parse_bool(val, f"services.{key}")
        elif attr in _SERVICE_KEYS:
            entry[attr] = _SERVICE_KEYS[attr](val)
        else:
            raise ValidationError(f"services.{key}: unknown service field {attr!r}")
    services: Dict[str, ServiceSpec] = {}
    for svc, attrs in raw_services.items():
        try:
            spec = ServiceSpec(id=svc, **attrs)
        except TypeError as exc:
            raise ValidationError(f"services.{svc}: {exc}") from exc
        spec.validate(gpu_models=gpu_models)
        for model in spec.compute_ms:
            if model not in gpu_models:
                raise ValidationError(f"services.{svc}.compute_ms.{model}: undeclared GPU model")
        services[svc] = spec
    if not services:
        raise ValidationError("services: at least one service required")

    profile_rows: List[Tuple[str, str, int, int, float, float]] = []
    for line in sections.get("profiles", []):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 6:
            raise ParseError(f"[profiles]: expected 6 fields, got {line!r}")
        svc, gpu, bs, mt, goodput, latency = parts
        if svc not in services:
            raise ValidationError(f"profiles: unknown service {svc!r}")
        if gpu not in gpu_models:
            raise ValidationError(f"profiles: unknown GPU model {gpu!r}")
        row = (svc, gpu, int(bs), int(mt), float(goodput), float(latency))
        if row[4] < 0:
            raise ValidationError(f"profiles: negative goodput for {svc}")
        profile_rows.append(row)

    synth: Dict[str, SynthProfile] = {}
    synth_raw: Dict[str, Dict[str, object]] = {}
    for key, val in _kv(sections.get("profile_synth", []), "profile_synth"):
        if "." not in key:
            raise ValidationError(f"profile_synth.{key}: expected svc.param = value")
        svc, param = key.split(".", 1)
        if svc not in services:
            raise ValidationError(f"profile_synth.{key}: unknown service {svc!r}")
        if param not in _SYNTH_KEYS:
            raise ValidationError(f"profile_synth.{key}: unknown parameter {param!r}")
        synth_raw.setdefault(svc, {})[param] = _SYNTH_KEYS[param](val)
    for svc, params in synth_raw.items():
        synth[svc] = SynthProfile(**params)

    trace: List[TraceRow] = []
    for line in sections.get("trace", []):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) not in (3, 4):
            raise ParseError(f"[trace]: expected 'arrival_ms, service, origin[, frames]', got {line!r}")
        arrival, svc, origin = parts[:3]
        frames = int(parts[3]) if len(parts) == 4 else 1
        if svc not in services:
            raise ValidationError(f"trace: unknown service {svc!r}")
        if origin not in servers:
            raise ValidationError(f"trace: unknown origin server {origin!r}")
        if frames < 1:
            raise ValidationError(f"trace: frame_count must be >= 1 in {line!r}")
        trace.append(TraceRow(int(arrival), svc, origin, frames))
    trace.sort(key=lambda r: r.arrival_ms)

    raw_devices: Dict[str, Dict[str, object]] = {}
    for key, val in _kv(sections.get("devices", []), "devices"):
        if "." not in key:
            raise ValidationError(f"devices.{key}: expected dev.field = value")
        dev, attr = key.split(".", 1)
        if attr not in _DEVICE_KEYS:
            raise ValidationError(f"devices.{key}: unknown device field {attr!r}")
        raw_devices.setdefault(dev, {})[attr] = _DEVICE_KEYS[attr](val)
    devices: List[DeviceSpec] = []
    for dev, attrs in sorted(raw_devices.items()):
        try:
            spec = DeviceSpec(id=dev, **attrs)
        except TypeError as exc:
            raise ValidationError(f"devices.{dev}: {exc}") from exc
        if spec.server not in servers:
            raise ValidationError(f"devices.{dev}.server: unknown server {spec.server!r}")
        if spec.gpu_model not in gpu_models:
            raise ValidationError(f"devices.{dev}.gpu_model: undeclared GPU model")
        devices.append(spec)

    faults: List[FaultEvent] = []
    for line in sections.get("faults", []):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3 or parts[0] not in ("fail", "corrupt"):
            raise ParseError(f"[faults]: expected 'fail|corrupt, server, t_ms', got {line!r}")
        if parts[1] not in servers:
            raise ValidationError(f"faults: unknown server {parts[1]!r}")
        faults.append(FaultEvent(parts[0], parts[1], int(parts[2])))

    membership: List[MembershipEvent] = []
    for line in sections.get("membership", []):
        parts = [p.strip() for p in line.split(",")]
        if parts and parts[0] == "join":
            if len(parts) != 4:
                raise ParseError(f"[membership]: expected 'join, server, gpus, t_ms', got {line!r}")
            membership.append(MembershipEvent(
                "join", parts[1], int(parts[3]), _parse_gpu_list(parts[2], "membership")))
        elif parts and parts[0] == "exit":
            if len(parts) != 3:
                raise ParseError(f"[membership]: expected 'exit, server, t_ms', got {line!r}")
            membership.append(MembershipEvent("exit", parts[1], int(parts[2])))
        else:
            raise ParseError(f"[membership]: unknown membership row {line!r}")

    priority: List[Tuple[str, str]] = []
    for line in sections.get("priority", []):
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise ParseError(f"[priority]: expected 'service, server', got {line!r}")
        if parts[0] not in services:
            raise ValidationError(f"priority: unknown service {parts[0]!r}")
        if parts[1] not in servers:
            raise ValidationError(f"priority: unknown server {parts[1]!r}")
        priority.append((parts[0], parts[1]))

    return ScenarioModel(
        services=services,
        servers=servers,
        gpu_models=gpu_models,
        bandwidth_default=bandwidth_default,
        bandwidth_overrides=tuple(overrides),
        trace=tuple(trace),
        control=control,
        profile_rows=tuple(profile_rows),
        synth=synth,
        devices=tuple(devices),
        faults=tuple(faults),
        membership=tuple(membership),
        priority=tuple(priority),
    )


def load_scenario_file(path) -> ScenarioModel:
    with open(path, "r", encoding="utf-8") as fh:
        return load_scenario(fh.read())


def apply_overrides(model: ScenarioModel, overrides: Dict[str, str]) -> ScenarioModel:
    """Re-load with [control] keys replaced; invalid overrides fail validation."""
    text = serialize(model)
    lines = []
    in_control = False
    pending = dict(overrides)
    for line in text.splitlines():
        stripped = line.strip()
        if stripped.startswith("["):
            if in_control:
                for key, val in pending.items():
                    lines.append(f"{key} = {val}")
                pending = {}
            in_control = stripped == "[control]"
        elif in_control and "=" in stripped:
            key = stripped.split("=", 1)[0].strip()
            if key in pending:
                line = f"{key} = {pending.pop(key)}"
        lines.append(line)
    for key, val in pending.items():
        lines.append(f"{key} = {val}")
    return load_scenario("\n".join(lines))


def serialize(model: ScenarioModel) -> str:
    """Render a model back to scenario text; load(serialize(m)) == m."""
    out: List[str] = ["[control]"]
    defaults = Control()
    for f in fields(Control):
        val = getattr(model.control, f.name)
        out.append(f"{f.name} = {val}")
    out.append("")
    out.append("[gpus]")
    out.extend(model.gpu_models)
    out.append("")
    out.append("[servers]")
    for name in model.servers:
        spec = model.servers[name]
        parts = []
        for m in dict.fromkeys(spec.gpu_models):
            parts.append(f"{m}:{spec.gpu_models.count(m)}")
        out.append(f"{name} = {','.join(parts)}")
    out.append("")
    out.append("[bandwidth]")
    out.append(f"default = {model.bandwidth_default}")
    for a, b, mbps in model.bandwidth_overrides:
        out.append(f"{a},{b} = {mbps}")
    out.append("")
    out.append("[services]")
    for svc_id, svc in model.services.items():
        for f in fields(ServiceSpec):
            if f.name == "id":
                continue
            val = getattr(svc, f.name)
            if f.name == "compute_ms":
                for gpu, ms in val.items():
                    out.append(f"{svc_id}.compute_ms.{gpu} = {ms}")
            elif val is not None:
                out.append(f"{svc_id}.{f.name} = {val}")
    if model.profile_rows:
        out.append("")
        out.append("[profiles]")
        for row in model.profile_rows:
            out.append(", ".join(str(x) for x in row))
    if model.synth:
        out.append("")
        out.append("[profile_synth]")
        for svc_id, synth in model.synth.items():
            for f in fields(SynthProfile):
                out.append(f"{svc_id}.{f.name} = {getattr(synth, f.name)}")
    out.append("")
    out.append("[trace]")
    for row in model.trace:
        out.append(f"{row.arrival_ms}, {row.service_id}, {row.origin_server}, {row.frame_count}")
    if model.devices:
        out.append("")
        out.append("[devices]")
        for dev in model.devices:
            for f in fields(DeviceSpec):
                if f.name == "id":
                    continue
                out.append(f"{dev.id}.{f.name} = {getattr(dev, f.name)}")
    if model.faults:
        out.append("")
        out.append("[faults]")
        for ev in model.faults:
            out.append(f"{ev.kind}, {ev.server}, {ev.t_ms}")
    if model.membership:
        out.append("")
        out.append("[membership]")
        for ev in model.membership:
            if ev.kind == "join":
                gpus = ",".join(ev.gpu_models)
                out.append(f"join, {ev.server}, {gpus}, {ev.t_ms}")
            else:
                out.append(f"exit, {ev.server}, {ev.t_ms}")
    if model.priority:
        out.append("")
        out.append("[priority]")
        for svc, srv in model.priority:
            out.append(f"{svc}, {srv}")
    out.append("")
    return "\n".join(out)
