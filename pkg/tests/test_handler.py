import itertools
import random

import pytest

from edgeserve.handler import (
    DecisionKind,
    handle,
    idle_goodput,
    offload_candidates,
    offload_target,
    record_hop,
)
from edgeserve.model import (
    ClusterView,
    LoopViolation,
    Request,
    ServiceSpec,
    ViewEntry,
)


def make_service(**kwargs):
    base = dict(id="svc", compute_demand=0.5, vram_demand=0.5,
                compute_ms={"g": 10.0}, latency_slo_ms=100)
    base.update(kwargs)
    return ServiceSpec(**base)


def make_request(**kwargs):
    base = dict(id=1, service_id="svc", origin_server="s0",
                arrival_time=0, deadline=100, hop_path=("s0",))
    base.update(kwargs)
    return Request(**base)


def make_view(owner="s0", idles=None, **entry_kwargs):
    """idles: server -> (theoretical, actual)"""
    view = ClusterView(owner=owner)
    for server, (p_hat, p) in (idles or {}).items():
        view.per_server[server] = ViewEntry(
            source=server, theoretical={"svc": p_hat}, actual={"svc": p},
            **entry_kwargs)
    return view


class FakeState:
    server_id = "s0"

    def __init__(self, local=False, cross=False, device=False):
        self._local, self._cross, self._device = local, cross, device

    def local_feasible(self, request, now):
        return "local-token" if self._local else None

    def cross_feasible(self, request, now):
        return "cross-token" if self._cross else None

    def device_feasible(self, request, now):
        return "device-token" if self._device else None


class TestLadderOrder:
    def test_timeout_beats_everything(self):
        state = FakeState(local=True, cross=True, device=True)
        decision = handle(make_request(deadline=10), state, make_view(), make_service(),
                          now=11, rng=random.Random(0))
        assert decision.kind is DecisionKind.TIMEOUT

    @pytest.mark.parametrize("local,cross,device", list(itertools.product([0, 1], repeat=3)))
    def test_rung_precedence(self, local, cross, device):
        state = FakeState(local=bool(local), cross=bool(cross), device=bool(device))
        view = make_view(idles={"s1": (10.0, 2.0)})
        decision = handle(make_request(), state, view, make_service(),
                          now=0, rng=random.Random(0))
        if local:
            assert decision.kind is DecisionKind.SOLVE_LOCAL
            assert decision.target == "local-token"
        elif cross:
            assert decision.kind is DecisionKind.SOLVE_CROSS_SERVER
        elif device:
            assert decision.kind is DecisionKind.SOLVE_ON_DEVICE
        else:
            assert decision.kind is DecisionKind.OFFLOAD
            assert decision.target == "s1"

    def test_offload_exceeded_when_at_cap(self):
        req = make_request(hop_path=("a", "b", "c", "d", "e", "s0"))  # 5 hops
        view = make_view(idles={"s1": (10.0, 2.0)})
        decision = handle(req, FakeState(), view, make_service(),
                          now=0, rng=random.Random(0), max_offload=5)
        assert decision.kind is DecisionKind.OFFLOAD_EXCEEDED

    def test_resource_insufficient_when_no_candidates(self):
        decision = handle(make_request(), FakeState(), make_view(), make_service(),
                          now=0, rng=random.Random(0))
        assert decision.kind is DecisionKind.RESOURCE_INSUFFICIENT

    def test_exceeded_checked_before_candidates(self):
        # at the cap with no candidates either: the cap rung wins
        req = make_request(hop_path=("a", "b", "c", "d", "e", "s0"))
        decision = handle(req, FakeState(), make_view(), make_service(),
                          now=0, rng=random.Random(0), max_offload=5)
        assert decision.kind is DecisionKind.OFFLOAD_EXCEEDED


class TestIdleGoodput:
    def test_basic(self):
        view = make_view(idles={"s1": (10.0, 4.0)})
        assert idle_goodput(view, "s1", "svc") == 6.0

    def test_floored_at_zero(self):
        view = make_view(idles={"s1": (10.0, 14.0)})
        assert idle_goodput(view, "s1", "svc") == 0.0

    def test_unknown_server_or_service(self):
        view = make_view(idles={"s1": (10.0, 0.0)})
        assert idle_goodput(view, "s2", "svc") == 0.0
        assert idle_goodput(view, "s1", "other") == 0.0

    def test_unavailable(self):
        view = make_view(idles={"s1": (10.0, 0.0)}, available=False)
        assert idle_goodput(view, "s1", "svc") == 0.0


class TestOffloadCandidates:
    def test_excludes_hop_path(self):
        view = make_view(idles={"s1": (10.0, 0.0), "s2": (10.0, 0.0)})
        req = make_request(hop_path=("s1", "s0"))
        assert [s for s, _ in offload_candidates(req, view, make_service())] == ["s2"]

    def test_excludes_saturated(self):
        view = make_view(idles={"s1": (10.0, 10.0), "s2": (10.0, 5.0)})
        assert [s for s, _ in offload_candidates(make_request(), view, make_service())] == ["s2"]

    def test_excludes_backlogged(self):
        view = ClusterView(owner="s0")
        view.per_server["s1"] = ViewEntry(
            source="s1", staleness_ms=100, theoretical={"svc": 10.0},
            backlog_ms={"svc": 250.0})  # > staleness 100 + slo 100
        view.per_server["s2"] = ViewEntry(
            source="s2", staleness_ms=100, theoretical={"svc": 10.0},
            backlog_ms={"svc": 150.0})  # within slack
        got = [s for s, _ in offload_candidates(make_request(), view, make_service())]
        assert got == ["s2"]

    def test_excludes_non_hosting(self):
        view = ClusterView(owner="s0")
        view.per_server["s1"] = ViewEntry(source="s1", theoretical={"other": 5.0})
        assert offload_candidates(make_request(), view, make_service()) == []


class TestOffloadTarget:
    def test_expected_mode_is_argmax(self):
        view = make_view(idles={"s1": (5.0, 0.0), "s2": (9.0, 0.0), "s3": (2.0, 0.0)})
        got = offload_target(make_request(), view, make_service(),
                             random.Random(0), expected=True)
        assert got == "s2"

    def test_sampling_proportional(self):
        view = make_view(idles={"s1": (1.0, 0.0), "s2": (3.0, 0.0)})
        rng = random.Random(123)
        counts = {"s1": 0, "s2": 0}
        n = 20_000
        for _ in range(n):
            counts[offload_target(make_request(), view, make_service(), rng)] += 1
        assert counts["s1"] / n == pytest.approx(0.25, abs=0.02)

    def test_none_without_candidates(self):
        assert offload_target(make_request(), make_view(), make_service(),
                              random.Random(0)) is None


class TestRecordHop:
    def test_appends_and_rejects_revisit(self):
        req = make_request()
        hopped = record_hop(req, "s1")
        assert hopped.hop_path == ("s0", "s1")
        with pytest.raises(LoopViolation):
            record_hop(hopped, "s1")
