"""Service placement search: greedy filling, staged search and the bound.

Placement quality is measured by replaying the arrival trace against a
candidate placement in the simulation core and counting satisfied
objective units. The staged search runs greedy placement filling three
times: over an operator-supplied priority list, over the full service set
with replacement, and over a hypothetical server aggregating every GPU in
the cluster (which yields cross-server placements).
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .allocator import ProfileTable, build_allocation_plan, categorize
from .model import (
    EPSILON_SERVER,
    AllocationPlan,
    Gpu,
    GpuClass,
    Placement,
    PlacementList,
    ServiceSpec,
    ValidationError,
)
from .scenario import ScenarioModel, TraceRow


class InfeasiblePlacement(ValidationError):
    """The requested slices do not fit on the available GPUs."""


class EmptyServices(ValidationError):
    """The approximation factor is undefined for an empty service set."""


class TooLarge(ValidationError):
    """Brute-force enumeration would exceed the configuration budget."""


# ---------------------------------------------------------------------------
# Resource pools and GPU assignment


def build_gpu_pools(scenario: ScenarioModel,
                    servers: Optional[Sequence[str]] = None) -> Dict[str, List[Gpu]]:
    pools: Dict[str, List[Gpu]] = {}
    for sid in (servers if servers is not None else scenario.servers):
        spec = scenario.servers.get(sid)
        if spec is None:
            continue
        pools[sid] = [Gpu(model=m, index=i) for i, m in enumerate(spec.gpu_models)]
    return pools


def _clone_pools(pools: Dict[str, List[Gpu]]) -> Dict[str, List[Gpu]]:
    return {sid: [dataclasses.replace(g, resident=list(g.resident)) for g in gpus]
            for sid, gpus in pools.items()}


def _pick_gpu(candidates, compute: float, vram: float):
    """Best-fit: most free VRAM, then most free compute, then lowest index."""
    fitting = [(sid, g) for sid, g in candidates if g.fits(compute, vram)]
    if not fitting:
        return None
    return max(fitting, key=lambda it: (it[1].vram_free, it[1].compute_free,
                                        -it[1].index, it[0]))


def online_assign_gpus(service: ServiceSpec, plan: AllocationPlan,
                       pools: Dict[str, List[Gpu]], server_id: str) -> Placement:
    """Assign concrete GPUs for one placement, mutating the pools.

    For the hypothetical aggregate server the candidate GPU set spans every
    server; the result is marked cross-server when its members do.
    """
    if server_id == EPSILON_SERVER:
        candidates = [(sid, g) for sid in sorted(pools) for g in pools[sid]]
    else:
        if server_id not in pools:
            raise InfeasiblePlacement(f"{service.id}: unknown server {server_id}")
        candidates = [(server_id, g) for g in pools[server_id]]

    chosen: List[Tuple[str, Gpu]] = []
    if not service.needs_multi_gpu:
        # one GPU hosts all mt replicas of the slice
        need_c = service.compute_demand * plan.mt
        need_v = service.vram_demand * plan.mt
        pick = _pick_gpu(candidates, need_c, need_v)
        if pick is None:
            raise InfeasiblePlacement(f"{service.id}: no GPU fits mt={plan.mt} on {server_id}")
        pick[1].take(service.id, plan.mt, need_c, need_v)
        chosen.append(pick)
    else:
        # dp_groups groups of tp*pp slices, distinct GPUs within a group
        for _ in range(plan.dp_groups):
            group: List[Tuple[str, Gpu]] = []
            for _ in range(plan.mp_slices):
                remaining = [(sid, g) for sid, g in candidates
                             if all(g is not t[1] for t in group)]
                pick = _pick_gpu(remaining, service.compute_demand, service.vram_demand)
                if pick is None:
                    raise InfeasiblePlacement(
                        f"{service.id}: cannot fit {plan.mp_slices} slices on {server_id}")
                group.append(pick)
            for sid, g in group:
                g.take(service.id, plan.mt, service.compute_demand, service.vram_demand)
            chosen.extend(group)

    gpu_ids = tuple((sid, g.index) for sid, g in chosen)
    members = []
    for sid, _ in gpu_ids:
        if sid not in members:
            members.append(sid)
    cross = len(members) > 1
    return Placement(service_id=service.id,
                     server_id=members[0] if cross or server_id == EPSILON_SERVER else server_id,
                     gpu_ids=gpu_ids, plan=plan, cross_server=cross)


def _plan_for(service: ServiceSpec, scenario: ScenarioModel, profiles: ProfileTable,
              pools: Dict[str, List[Gpu]], server_id: str) -> AllocationPlan:
    if server_id == EPSILON_SERVER:
        for sid in sorted(pools):
            if pools[sid]:
                gpu_model = pools[sid][0].model
                break
        else:
            raise InfeasiblePlacement("no GPUs in cluster")
    else:
        gpus = pools.get(server_id, [])
        if not gpus:
            raise InfeasiblePlacement(f"{server_id}: no GPUs")
        gpu_model = gpus[0].model
    return build_allocation_plan(service, categorize(service), profiles, gpu_model)


# ---------------------------------------------------------------------------
# Goodput evaluation (trace replay)


def eval_seed_for(scenario: ScenarioModel) -> int:
    """Evaluation RNG seed, kept distinct from the run seed."""
    return scenario.control.seed ^ 0x5EED1


def evaluate_goodput(theta: PlacementList, trace: Sequence[TraceRow],
                     scenario: ScenarioModel, seed: Optional[int] = None,
                     expected: Optional[bool] = None) -> int:
    """Satisfied objective units when the trace is replayed against theta."""
    from .engine import Simulation  # local import: engine drives epochs via us

    if expected is None:
        expected = scenario.control.eval_expected
    if expected != scenario.control.eval_expected:
        scenario = dataclasses.replace(
            scenario, control=dataclasses.replace(scenario.control, eval_expected=expected))
    sim = Simulation(scenario, seed=seed if seed is not None else eval_seed_for(scenario),
                     fixed_placement=theta, trace=trace, record_log=False)
    return sim.run().satisfied


# ---------------------------------------------------------------------------
# Greedy placement filling and the staged search


def spf(theta: PlacementList, candidates_fn: Callable[[], List[Tuple[str, str]]],
        place_fn: Callable[[str, str], Optional[Placement]],
        evaluate: Callable[[PlacementList], float],
        strict: bool = False, consume: bool = True, max_iters: int = 64,
        ) -> PlacementList:
    """Greedy argmax filling: repeatedly add the candidate with best goodput.

    candidates_fn yields (service_id, server_id) pairs still on offer;
    place_fn builds (and commits resources for) one placement, or None if
    infeasible. With strict=True only strictly improving additions are kept;
    otherwise equal-goodput additions are accepted too (up to max_iters).
    """
    score = evaluate(theta)
    used: set = set()
    for _ in range(max_iters):
        best = None  # (score, service, server)
        for svc_id, srv_id in candidates_fn():
            if consume and (svc_id, srv_id) in used:
                continue
            trial = place_fn(svc_id, srv_id)
            if trial is None:
                continue
            trial_score = evaluate(theta + trial.placement)
            trial.rollback()  # resources are only held by the committed winner
            if best is None or trial_score > best[0] or (
                    trial_score == best[0] and (svc_id, srv_id) < (best[1], best[2])):
                best = (trial_score, svc_id, srv_id)
        if best is None:
            break
        trial_score, svc_id, srv_id = best
        improves = trial_score > score if strict else trial_score >= score
        if not improves:
            break
        winner = place_fn(svc_id, srv_id)  # deterministic: same pools, same pick
        theta = theta + winner.placement
        score = trial_score
        if consume:
            used.add((svc_id, srv_id))
    return theta


class _Trial:
    """A tentative placement holding resources until commit/rollback."""

    def __init__(self, placement: Placement, pools: Dict[str, List[Gpu]],
                 saved: Dict[str, List[Gpu]]):
        self.placement = placement
        self._pools = pools
        self._saved = saved

    def rollback(self) -> None:
        for sid, gpus in self._saved.items():
            self._pools[sid][:] = gpus


def _make_place_fn(scenario: ScenarioModel, profiles: ProfileTable,
                   pools: Dict[str, List[Gpu]]):
    def place(svc_id: str, srv_id: str) -> Optional[_Trial]:
        service = scenario.services[svc_id]
        saved = _clone_pools(pools)
        try:
            plan = _plan_for(service, scenario, profiles, pools, srv_id)
            placement = online_assign_gpus(service, plan, pools, srv_id)
        except ValidationError:
            for sid, gpus in saved.items():
                pools[sid][:] = gpus
            return None
        return _Trial(placement, pools, saved)
    return place


def sssp(trace: Sequence[TraceRow], scenario: ScenarioModel,
         servers: Optional[Sequence[str]] = None,
         priority: Optional[Sequence[Tuple[str, str]]] = None,
         eval_seed: Optional[int] = None) -> PlacementList:
    """Three-stage placement search.

    Stage one fills along the priority list (each entry used once, equal
    goodput accepted). Stage two searches the full service x server set with
    replacement, keeping only strict improvements. Stage three repeats stage
    two on the aggregate server, admitting cross-server placements.
    """
    server_ids = list(servers if servers is not None else scenario.servers)
    pools = build_gpu_pools(scenario, server_ids)
    profiles = ProfileTable.from_scenario(scenario)
    place = _make_place_fn(scenario, profiles, pools)
    trace = list(trace)

    cache: Dict[tuple, int] = {}

    def evaluate(theta: PlacementList) -> int:
        key = tuple(sorted(
            (p.service_id, p.server_id, p.gpu_ids, p.plan, p.cross_server)
            for p in theta.entries))
        if key not in cache:
            cache[key] = evaluate_goodput(theta, trace, scenario, seed=eval_seed)
        return cache[key]

    theta = PlacementList()

    prio = [(svc, srv) for svc, srv in (priority if priority is not None
                                        else scenario.priority)
            if srv in server_ids and svc in scenario.services]
    if prio:
        theta = spf(theta, lambda: list(prio), place, evaluate,
                    strict=False, consume=True, max_iters=len(prio))

    full = [(svc, srv) for svc in sorted(scenario.services) for srv in server_ids]
    theta = spf(theta, lambda: list(full), place, evaluate,
                strict=True, consume=False)

    eps = [(svc, EPSILON_SERVER) for svc in sorted(scenario.services)]
    theta = spf(theta, lambda: list(eps), place, evaluate,
                strict=True, consume=False)

    return PlacementList(theta.entries, epoch=0)


# ---------------------------------------------------------------------------
# Approximation factor and brute force


def approximation_P(services: Sequence[ServiceSpec]) -> int:
    """Demand-spread parameter; the greedy search is 1/(1+P)-competitive."""
    services = list(services)
    if not services:
        raise EmptyServices("approximation factor needs at least one service")
    a = [s.compute_demand for s in services if s.compute_demand > 0]
    b = [s.vram_demand for s in services if s.vram_demand > 0]
    pa = math.ceil(max(a) / min(a)) if a else 0
    pb = math.ceil(max(b) / min(b)) if b else 0
    return pa + pb


def approximation_bound(services: Sequence[ServiceSpec]) -> float:
    return 1.0 / (1.0 + approximation_P(services))


def brute_force_optimal(trace: Sequence[TraceRow], scenario: ScenarioModel,
                        servers: Optional[Sequence[str]] = None,
                        max_configs: int = 1_000_000,
                        eval_seed: Optional[int] = None,
                        ) -> Tuple[PlacementList, int]:
    """Exhaustive search over multisets of single-server placements.

    Configurations are enumerated in canonical (non-decreasing option index)
    order with the same greedy GPU assignment the online search uses, so the
    two searches draw from identical feasible sets. Raises TooLarge if the
    enumeration would exceed max_configs.
    """
    server_ids = list(servers if servers is not None else scenario.servers)
    profiles = ProfileTable.from_scenario(scenario)
    options = [(svc, srv) for svc in sorted(scenario.services) for srv in server_ids]
    trace = list(trace)

    best_theta = PlacementList()
    best_score = evaluate_goodput(best_theta, trace, scenario, seed=eval_seed)
    visited = 0

    def dfs(start: int, theta: PlacementList, pools: Dict[str, List[Gpu]]):
        nonlocal best_theta, best_score, visited
        for i in range(start, len(options)):
            svc_id, srv_id = options[i]
            saved = _clone_pools(pools)
            service = scenario.services[svc_id]
            try:
                plan = _plan_for(service, scenario, profiles, pools, srv_id)
                placement = online_assign_gpus(service, plan, pools, srv_id)
            except ValidationError:
                for sid, gpus in saved.items():
                    pools[sid][:] = gpus
                continue
            visited += 1
            if visited > max_configs:
                raise TooLarge(f"brute force exceeded {max_configs} configurations")
            new_theta = theta + placement
            score = evaluate_goodput(new_theta, trace, scenario, seed=eval_seed)
            if score > best_score:
                best_score, best_theta = score, new_theta
            dfs(i, new_theta, pools)
            for sid, gpus in saved.items():
                pools[sid][:] = gpus
    dfs(0, PlacementList(), build_gpu_pools(scenario, server_ids))
    return best_theta, best_score


def verify_bound(scenario: ScenarioModel, trace: Optional[Sequence[TraceRow]] = None,
                 servers: Optional[Sequence[str]] = None,
                 max_configs: int = 1_000_000) -> Dict[str, object]:
    """Compare the staged search against brute force on one instance."""
    trace = list(scenario.trace if trace is None else trace)
    seed = eval_seed_for(scenario)
    theta = sssp(trace, scenario, servers=servers, eval_seed=seed)
    achieved = evaluate_goodput(theta, trace, scenario, seed=seed)
    _, optimal = brute_force_optimal(trace, scenario, servers=servers,
                                     max_configs=max_configs, eval_seed=seed)
    bound = approximation_bound(list(scenario.services.values()))
    ok = achieved + 1e-9 >= bound * optimal
    return {"achieved": achieved, "optimal": optimal, "bound": bound, "ok": ok,
            "placements": len(theta)}
