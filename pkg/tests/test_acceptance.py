"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""

import math
import random

import pytest

from edgeserve import placement as pl
from edgeserve.engine import Simulation, emit_metrics
from edgeserve.handler import offload_target
from edgeserve.model import ClusterView, Request, ServiceSpec, ViewEntry, satisfied_count
from fixtures import (
    bursty_scenario,
    dp_scenario,
    fault_scenario,
    flat_scenario,
    hotspot_scenario,
    random_instance,
    undercap_scenario,
)
from edgeserve import sync


def report(criterion, ok, detail):
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def test_criterion_01_approximation_bound():
    worst = 1.0
    violations = 0
    for seed in range(100):
        scn = random_instance(seed)
        res = pl.verify_bound(scn, max_configs=500_000)
        if res["optimal"]:
            worst = min(worst, res["achieved"] / res["optimal"])
        if not res["ok"]:
            violations += 1
    report(1, violations == 0,
           f"100 instances, worst ratio {worst:.3f}, {violations} violations")


def test_criterion_02_offload_sampling_frequencies():
    fixtures = [
        {"s1": 1.0, "s2": 3.0},
        {"s1": 2.0, "s2": 3.0, "s3": 5.0},
        {"s1": 1.0, "s2": 2.0, "s3": 3.0, "s4": 4.0, "s5": 10.0},
    ]
    service = ServiceSpec(id="svc", compute_demand=0.5, vram_demand=0.5,
                          compute_ms={"g": 10.0}, latency_slo_ms=100)
    request = Request(id=1, service_id="svc", origin_server="s0",
                      arrival_time=0, deadline=100, hop_path=("s0",))
    worst = 0.0
    for i, idles in enumerate(fixtures):
        view = ClusterView(owner="s0")
        for server, idle in idles.items():
            view.per_server[server] = ViewEntry(source=server,
                                                theoretical={"svc": idle})
        rng = random.Random(1000 + i)
        n = 100_000
        counts = {s: 0 for s in idles}
        for _ in range(n):
            counts[offload_target(request, view, service, rng)] += 1
        total = sum(idles.values())
        for server, idle in idles.items():
            worst = max(worst, abs(counts[server] / n - idle / total))
    report(2, worst <= 0.01, f"max |empirical - expected| = {worst:.4f}")


def test_criterion_03_frequency_accounting_worked_example():
    service = ServiceSpec(id="svc", compute_demand=0.5, vram_demand=0.5,
                          compute_ms={"g": 10.0}, latency_slo_ms=10_000,
                          frequency_slo=60.0)
    request = Request(id=1, service_id="svc", origin_server="s0",
                      arrival_time=0, deadline=10_000, frame_count=120,
                      hop_path=("s0",))
    credit = satisfied_count(request, service, achieved_rate=30.0)
    report(3, credit == 60, f"F=120, SLO 60 fps, achieved 30 fps -> {credit}")


def test_criterion_04_dp_scaling():
    sim = Simulation(dp_scenario())
    sim.run()
    dp = max((p.plan.dp_groups for p in sim.placements.entries), default=0)
    achieved = sim.achieved_rates.get(0, 0.0)
    ok = dp == 2 and abs(achieved - 97.0) <= 9.7
    report(4, ok, f"dp_groups={dp}, achieved {achieved:.1f} fps vs 97 +/- 10%")


def test_criterion_05_under_capacity_satisfaction():
    m = Simulation(undercap_scenario()).run()
    report(5, m.satisfaction_rate >= 0.99,
           f"rate {m.satisfaction_rate:.4f} at 40% load")


def test_criterion_06_loop_freedom_and_offload_bound():
    sims = [Simulation(hotspot_scenario()),
            Simulation(bursty_scenario(100)),
            Simulation(undercap_scenario()),
            Simulation(fault_scenario(8, True))]
    dupes = over = total = 0
    for sim in sims:
        sim.run()
        for req in sim.request_records:
            total += 1
            if len(set(req.hop_path)) != len(req.hop_path):
                dupes += 1
            if req.offload_count > sim.control.max_offload:
                over += 1
    report(6, dupes == 0 and over == 0,
           f"{total} requests, {dupes} loops, {over} over the offload cap")


def test_criterion_07_ring_staleness():
    interval = 100
    worst_excess = 0
    for n in (2, 6, 16):
        ring = sync.RingTopology(order=tuple(f"s{i}" for i in range(n)),
                                 sync_interval_ms=interval)
        views = {s: ClusterView(owner=s) for s in ring.order}
        k = math.ceil(n / 2)
        for _ in range(k):
            snaps = {s: ViewEntry(source=s) for s in ring.order}
            views = sync.exchange_round(views, ring, snaps)
        for view in views.values():
            for peer in ring.order:
                entry = view.per_server.get(peer)
                excess = (entry.staleness_ms - k * interval) if entry else 10**9
                worst_excess = max(worst_excess, excess)
    report(7, worst_excess <= 0,
           f"max staleness excess over ceil(n/2) intervals = {worst_excess} ms")


def test_criterion_08_staleness_offload_monotonicity():
    m1 = Simulation(bursty_scenario(100)).run()
    m3 = Simulation(bursty_scenario(300)).run()
    report(8, m3.mean_offload_count >= m1.mean_offload_count,
           f"mean offloads {m1.mean_offload_count:.3f} -> {m3.mean_offload_count:.3f} "
           f"when sync interval triples")


def test_criterion_09_fault_isolation():
    faulted = Simulation(fault_scenario(8, True))
    m8 = faulted.run()
    m7 = Simulation(fault_scenario(7, False)).run()
    delta = abs(m8.satisfied - m7.satisfied) / m7.satisfied
    post_fault_to_failed = sum(1 for t, _, dst in faulted.offload_log
                               if t > 3000 and dst == "s7")
    ok = delta <= 0.10 and post_fault_to_failed == 0
    report(9, ok, f"satisfied delta {delta:.3f}, "
                  f"{post_fault_to_failed} post-bypass offloads to the failed server")


def test_criterion_10_baseline_dominance():
    suite = [flat_scenario(2, [(i * 40, "s0") for i in range(30)]),
             hotspot_scenario(), bursty_scenario(100), undercap_scenario(),
             fault_scenario(8, True)]
    dominated = all(
        Simulation(scn).run().satisfied >=
        Simulation(scn, strategy="no_offload").run().satisfied
        for scn in suite)
    hot = hotspot_scenario()
    full = Simulation(hot).run().satisfied
    no_off = Simulation(hot, strategy="no_offload").run().satisfied
    ratio = full / max(1, no_off)
    report(10, dominated and ratio >= 1.3,
           f"dominance {dominated}, hotspot ratio {ratio:.2f}")


def test_criterion_11_determinism(tmp_path):
    scn = hotspot_scenario()
    hashes = []
    for name in ("a", "b"):
        sim = Simulation(scn)
        sim.run()
        out = tmp_path / name
        emit_metrics(sim, str(out))
        blob = b"".join((out / f).read_bytes() for f in
                        ("run_summary.csv", "timeseries.csv", "placement_report.txt"))
        hashes.append(blob)
    report(11, hashes[0] == hashes[1],
           "two runs of the same (scenario, seed) are byte-identical")
