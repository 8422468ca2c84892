import pytest

from edgeserve.allocator import (
    NoFeasibleBS,
    ProfileTable,
    ZeroGroupRate,
    build_allocation_plan,
    categorize,
    dp_group_count,
    inter_request_count,
    max_inter_frame_count,
    select_batch_size,
    select_multitask_degree,
)
from edgeserve.model import GpuClass, Sensitivity, ServiceSpec, ValidationError
from edgeserve.scenario import SynthProfile


def make_service(**kwargs):
    base = dict(id="svc", compute_demand=0.5, vram_demand=0.5,
                compute_ms={"g": 10.0}, latency_slo_ms=100)
    base.update(kwargs)
    return ServiceSpec(**base)


def table_from(rows):
    return ProfileTable(rows)


class TestCategorize:
    def test_four_quadrants(self):
        lat_single = categorize(make_service())
        assert (lat_single.sensitivity, lat_single.gpu_class) == (
            Sensitivity.LATENCY, GpuClass.SINGLE_GPU)
        freq_single = categorize(make_service(frequency_slo=30.0))
        assert freq_single.sensitivity is Sensitivity.FREQUENCY
        lat_multi = categorize(make_service(needs_multi_gpu=True))
        assert lat_multi.gpu_class is GpuClass.MULTI_GPU
        freq_multi = categorize(make_service(frequency_slo=30.0, needs_multi_gpu=True))
        assert (freq_multi.sensitivity, freq_multi.gpu_class) == (
            Sensitivity.FREQUENCY, GpuClass.MULTI_GPU)


class TestProfileTable:
    def test_row_lookup(self):
        t = table_from([("svc", "g", 4, 1, 120.0, 33.0)])
        assert t.lookup("svc", "g", 4, 1) == (120.0, 33.0)

    def test_synth_fallback(self):
        t = ProfileTable(synth={"svc": SynthProfile(base_ms=10, per_item_ms=5)})
        goodput, latency = t.lookup("svc", "g", 2, 1)
        assert latency == 20.0
        assert goodput == pytest.approx(100.0)

    def test_missing_raises(self):
        with pytest.raises(ValidationError):
            table_from([]).lookup("svc", "g", 1, 1)


class TestSelectBatchSize:
    def brute_oracle(self, rows, slo):
        # independent re-derivation: best goodput among SLO-feasible rows,
        # first (smallest) bs wins ties
        best, best_g = None, -1.0
        for (_, _, bs, _, g, lat) in sorted(rows, key=lambda r: r[2]):
            if lat <= slo and g > best_g + 1e-9:
                best, best_g = bs, g
        return best

    def test_matches_oracle(self):
        rows = [("svc", "g", bs, 1, goodput, lat) for bs, goodput, lat in [
            (1, 100.0, 10.0), (2, 160.0, 12.5), (4, 220.0, 18.0),
            (8, 260.0, 31.0), (16, 270.0, 59.0), (32, 250.0, 128.0),
            (64, 200.0, 320.0), (128, 150.0, 850.0),
            (256, 100.0, 2500.0), (512, 60.0, 8500.0)]]
        svc = make_service(latency_slo_ms=60)
        assert select_batch_size(svc, "g", table_from(rows)) == 16
        assert select_batch_size(svc, "g", table_from(rows)) == \
            self.brute_oracle(rows, 60)

    def test_slo_excludes_large_batches(self):
        rows = [("svc", "g", bs, 1, bs * 10.0, bs * 10.0)
                for bs in (1, 2, 4, 8, 16, 32, 64, 128, 256, 512)]
        svc = make_service(latency_slo_ms=45)
        assert select_batch_size(svc, "g", table_from(rows)) == 4

    def test_tie_goes_to_smaller(self):
        rows = [("svc", "g", bs, 1, 100.0, 10.0)
                for bs in (1, 2, 4, 8, 16, 32, 64, 128, 256, 512)]
        assert select_batch_size(make_service(), "g", table_from(rows)) == 1

    def test_no_feasible_bs(self):
        rows = [("svc", "g", bs, 1, 100.0, 500.0)
                for bs in (1, 2, 4, 8, 16, 32, 64, 128, 256, 512)]
        with pytest.raises(NoFeasibleBS):
            select_batch_size(make_service(latency_slo_ms=100), "g", table_from(rows))


class TestSelectMultitask:
    def rows_for_mt(self, goodputs):
        return [("svc", "g", 1, mt, g, 10.0) for mt, g in goodputs.items()]

    def test_picks_best_feasible(self):
        rows = self.rows_for_mt({1: 100.0, 2: 180.0, 4: 300.0, 8: 310.0, 16: 320.0})
        svc = make_service(compute_demand=0.25, vram_demand=0.25)  # mt <= 4 fits
        assert select_multitask_degree(svc, "g", table_from(rows), 1) == 4

    def test_resource_cap(self):
        rows = self.rows_for_mt({1: 100.0, 2: 200.0, 4: 400.0, 8: 800.0, 16: 900.0})
        svc = make_service(compute_demand=0.5, vram_demand=0.5)
        assert select_multitask_degree(svc, "g", table_from(rows), 1) == 2

    def test_tie_goes_small(self):
        rows = self.rows_for_mt({1: 100.0, 2: 100.0, 4: 100.0, 8: 100.0, 16: 100.0})
        svc = make_service(compute_demand=0.05, vram_demand=0.05)
        assert select_multitask_degree(svc, "g", table_from(rows), 1) == 1


class TestFrameOperators:
    def test_dp_group_count_examples(self):
        assert dp_group_count(96.0, 49.0) == 2
        assert dp_group_count(100.0, 50.0) == 2
        assert dp_group_count(101.0, 50.0) == 3
        assert dp_group_count(49.0, 49.0) == 1

    def test_dp_group_count_errors(self):
        with pytest.raises(ZeroGroupRate):
            dp_group_count(30.0, 0.0)
        with pytest.raises(ValidationError):
            dp_group_count(0.0, 10.0)

    def test_max_inter_frame_count(self):
        assert max_inter_frame_count(100.0, 30.0) == 3
        assert max_inter_frame_count(1000.0, 30.0) == 30
        assert max_inter_frame_count(10.0, 30.0) == 1  # floor hits zero, clamp

    def test_inter_request_count_floor(self):
        assert inter_request_count(8, 3) == 2
        assert inter_request_count(8, 1) == 8
        assert inter_request_count(2, 4) == 0
        with pytest.raises(ValidationError):
            inter_request_count(0, 1)


class TestBuildAllocationPlan:
    def flat_table(self):
        rows = [("svc", "g", bs, mt, 100.0 * mt, 10.0)
                for bs in (1, 2, 4, 8, 16, 32, 64, 128, 256, 512)
                for mt in (1, 2, 4, 8, 16)]
        return table_from(rows)

    def test_latency_single(self):
        svc = make_service()
        plan = build_allocation_plan(svc, categorize(svc), self.flat_table(), "g")
        assert plan.tp_degree == plan.pp_degree == 1
        assert plan.dp_groups == 1
        assert plan.mf == 1
        assert plan.mt == 2  # demand 0.5 caps replication at 2

    def test_multi_uses_declared_degrees(self):
        svc = make_service(needs_multi_gpu=True, tp_degree=2, pp_degree=2,
                           compute_demand=1.0, vram_demand=1.0)
        plan = build_allocation_plan(svc, categorize(svc), self.flat_table(), "g")
        assert (plan.tp_degree, plan.pp_degree) == (2, 2)
        assert plan.mp_slices == 4

    def test_frequency_multi_sets_dp(self):
        svc = make_service(frequency_slo=250.0, needs_multi_gpu=True,
                           compute_demand=1.0, vram_demand=1.0)
        plan = build_allocation_plan(svc, categorize(svc), self.flat_table(), "g")
        # group rate 100 fps at mt=1 (demand 1.0): ceil(250/100) = 3 groups
        assert plan.dp_groups == 3

    def test_frequency_single_keeps_dp_one(self):
        svc = make_service(frequency_slo=250.0)
        plan = build_allocation_plan(svc, categorize(svc), self.flat_table(), "g")
        assert plan.dp_groups == 1

    def test_mf_lowered_until_batch_holds_a_group(self):
        svc = make_service(frequency_slo=30.0, frame_latency_budget_ms=1000)
        # budget allows mf=30 but bs=1 -> floor(1/30)=0 -> lower to mf=1
        plan = build_allocation_plan(svc, categorize(svc), self.flat_table(), "g")
        assert plan.mf == 1
        assert plan.inter_request_count == plan.bs // plan.mf
