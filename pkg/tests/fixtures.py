"""Shared scenario builders used across the test suite."""

import random

from edgeserve.scenario import ScenarioModel, load_scenario

FLAT_SERVICE = """
[services]
svc.compute_demand = 0.5
svc.vram_demand = 0.5
svc.compute_ms.g = 10
svc.latency_slo_ms = {slo}

[profile_synth]
svc.base_ms = 0.0
svc.per_item_ms = 10.0
svc.peak_bs = 8
svc.mt_overhead = 1.0
"""
# flat profile: goodput 100/s per replica at any bs; mt doubling is
# exactly offset by the overhead so ties resolve to mt=1 everywhere the
# resource cap doesn't bind. One GPU at demand 0.5 fits two replicas.


def flat_scenario(n_servers: int, trace_rows, slo: int = 200, seed: int = 0,
                  duration_ms: int = 3000, sync_interval_ms: int = 100,
                  extra: str = "") -> ScenarioModel:
    servers = "\n".join(f"s{i} = g:1" for i in range(n_servers))
    trace = "\n".join(f"{t}, svc, {origin}" for t, origin in trace_rows)
    return load_scenario(f"""
[control]
seed = {seed}
duration_ms = {duration_ms}
sync_interval_ms = {sync_interval_ms}
placement_interval_ms = {duration_ms}

[gpus]
g

[servers]
{servers}

[bandwidth]
default = 1000
{FLAT_SERVICE.format(slo=slo)}
[trace]
{trace}
{extra}
""")


def hotspot_scenario() -> ScenarioModel:
    """All arrivals hit s0 at ~400 rps against a 200 rps server; s1 idle."""
    rows = []
    t = 0
    for k in range(720):
        rows.append((t, "s0"))
        t += 3 if k % 2 else 2
    return flat_scenario(2, rows, slo=60, seed=3, duration_ms=2500)


def bursty_scenario(sync_interval_ms: int, seed: int = 11) -> ScenarioModel:
    """Near-saturation everywhere plus a hotspot rotating every 300 ms."""
    rng = random.Random(seed)
    rows = []
    servers = ["s0", "s1", "s2", "s3"]
    for s in servers:
        t = 0.0
        while t < 3600:
            t += rng.expovariate(170.0) * 1000.0
            if t < 3600:
                rows.append((int(t), s))
    t = 0.0
    while t < 3600:
        hot = servers[int(t // 300) % 4]
        t += rng.expovariate(180.0) * 1000.0
        if t < 3600:
            rows.append((int(t), hot))
    rows.sort()
    return flat_scenario(4, rows, slo=60, seed=2, duration_ms=4200,
                         sync_interval_ms=sync_interval_ms)


def fault_scenario(n_servers: int, with_fault: bool) -> ScenarioModel:
    """Origins s0..s6 at ~210 rps each; optionally s7 fails at t=3000."""
    rng = random.Random(21)
    rows = []
    for i in range(7):
        t = 0.0
        while t < 5400:
            t += rng.expovariate(210.0) * 1000.0
            if t < 5400:
                rows.append((int(t), f"s{i}"))
    rows.sort()
    extra = "\n[faults]\nfail, s7, 3000\n" if with_fault else ""
    return flat_scenario(n_servers, rows, slo=80, seed=4, duration_ms=6000,
                         extra=extra)


def dp_scenario() -> ScenarioModel:
    """Two-group data-parallel stream calibrated to 49 fps per group."""
    return load_scenario("""
[control]
seed = 1
duration_ms = 11000
sync_interval_ms = 500
placement_interval_ms = 11000

[gpus]
g

[servers]
s0 = g:2

[bandwidth]
default = 1000

[services]
cam.compute_demand = 0.5
cam.vram_demand = 0.5
cam.compute_ms.g = 20.408
cam.latency_slo_ms = 30000
cam.frequency_slo = 96
cam.input_fps = 120
cam.needs_multi_gpu = true

[profile_synth]
cam.base_ms = 0.0
cam.per_item_ms = 20.408
cam.peak_bs = 1
cam.mt_overhead = 1.0

[trace]
0, cam, s0, 980
""")


def undercap_scenario() -> ScenarioModel:
    """Poisson 80 rps against a 200 rps server: 40% load."""
    from edgeserve.engine import StreamSpec, generate_workload
    rows = generate_workload([StreamSpec("svc", 80.0)], ["s0"], 2000, 5)
    return flat_scenario(1, [(r.arrival_ms, r.origin_server) for r in rows],
                         slo=200, seed=5)


def random_instance(seed: int) -> ScenarioModel:
    """Small random instance for the approximation-bound harness.

    Demands come from a bounded set so the demand-spread parameter stays
    small and brute-force enumeration stays tractable.
    """
    rng = random.Random(seed)
    n_srv = rng.randint(2, 3)
    n_svc = rng.randint(2, 3)
    lines = ["[control]", f"seed = {seed}", "duration_ms = 2000",
             "sync_interval_ms = 200", "placement_interval_ms = 2000",
             "", "[gpus]", "g", "", "[servers]"]
    for i in range(n_srv):
        lines.append(f"s{i} = g:1")
    lines += ["", "[bandwidth]", "default = 100", "", "[services]"]
    for j in range(n_svc):
        d = rng.choice([0.34, 0.5, 1.0])
        lines += [f"svc{j}.compute_demand = {d}", f"svc{j}.vram_demand = {d}",
                  f"svc{j}.compute_ms.g = {rng.choice([5, 10, 20])}",
                  f"svc{j}.latency_slo_ms = {rng.choice([100, 200])}"]
    lines += ["", "[profile_synth]"]
    for j in range(n_svc):
        lines += [f"svc{j}.base_ms = 0.0",
                  f"svc{j}.per_item_ms = {rng.choice([5.0, 10.0])}",
                  f"svc{j}.peak_bs = 8", f"svc{j}.mt_overhead = 0.1"]
    lines += ["", "[trace]"]
    t = 0
    for _ in range(rng.randint(10, 30)):
        t += rng.randint(10, 120)
        lines.append(f"{t}, svc{rng.randrange(n_svc)}, s{rng.randrange(n_srv)}")
    return load_scenario("\n".join(lines))
