"""Collector: scans, classification, AIAD controller, epochs, migration."""
import pytest

from tierheap.collector import (CT_MAX, CT_MIN, CollectorError,
                                ControllerState, compute_promotion_rate,
                                next_cold_threshold)
from tierheap.guideword import (ACCESSED_BIT, HeapId, pack, unpack,
                                word_heap)
from tierheap.regions import HintKind
from tierheap.runtime import TierRuntime
from tierheap.scope import Phase


def make_runtime(**kwargs):
    kwargs.setdefault("region_length", 1 << 22)
    kwargs.setdefault("scan_interval_s", 120.0)
    return TierRuntime(**kwargs)


def add_object(runtime, payload=b"x" * 64, heap=HeapId.NEW, accessed=False):
    loc = runtime.regions.allocate(heap, len(payload))
    runtime.regions.write(loc, payload)
    return runtime.registry.create(pack(loc, heap=heap, accessed=accessed))


class TestControllerMath:
    def test_promotion_rate_hand_example(self):
        assert compute_promotion_rate(50, 1000, 120.0) == 0.025

    def test_promotion_rate_zero_numerator(self):
        assert compute_promotion_rate(0, 500, 120.0) == 0.0

    def test_promotion_rate_identity_scaling(self):
        assert compute_promotion_rate(7, 7, 60.0) == 1.0

    def test_promotion_rate_empty_working_set(self):
        assert compute_promotion_rate(5, 0, 120.0) == 0.0

    def test_aiad_steps(self):
        assert next_cold_threshold(3, 0.025, 0.01) == 4
        assert next_cold_threshold(3, 0.005, 0.01) == 2
        assert next_cold_threshold(3, 0.01, 0.01) == 3  # exact tie: unchanged

    def test_aiad_clamps(self):
        assert next_cold_threshold(CT_MAX, 1.0, 0.01) == CT_MAX
        assert next_cold_threshold(CT_MIN, 0.0, 0.01) == CT_MIN

    def test_controller_state_validates_threshold(self):
        with pytest.raises(CollectorError):
            ControllerState(cold_threshold=0)
        with pytest.raises(CollectorError):
            ControllerState(cold_threshold=33)

    def test_controller_is_pure_replay(self):
        runtime = make_runtime(ct_init=3)
        for i in range(30):
            add_object(runtime, accessed=(i % 3 == 0))
        for _ in range(6):
            runtime.collector.run_scan_window()
        ctl = runtime.collector.controller
        ct = 3
        replayed = []
        for pr in ctl.pr_history:
            ct = next_cold_threshold(ct, pr, ctl.pr_target)
            replayed.append(ct)
        assert replayed == ctl.ct_history


class TestEpochMachine:
    def test_cycle(self):
        runtime = make_runtime()
        col, state = runtime.collector, runtime.epoch_state
        col.begin_epoch()
        assert state.phase == Phase.PREPARE
        assert state.tracking_enabled
        assert col.await_convergence()
        assert state.phase == Phase.ACTIVE
        col.end_epoch()
        assert state.phase == Phase.INACTIVE
        assert not state.tracking_enabled

    def test_double_begin_faults(self):
        runtime = make_runtime()
        runtime.collector.begin_epoch()
        with pytest.raises(CollectorError):
            runtime.collector.begin_epoch()

    def test_migrate_outside_active_faults(self):
        runtime = make_runtime()
        index = add_object(runtime)
        with pytest.raises(CollectorError):
            runtime.collector.migrate(index, HeapId.HOT)

    def test_stale_tai_slot_times_out(self):
        runtime = make_runtime()
        runtime.tai.enter(1, runtime.epoch_state.epoch)  # never re-registers
        col = runtime.collector
        col.begin_epoch()
        assert not col.await_convergence(timeout_s=0.05)
        assert runtime.epoch_state.phase == Phase.INACTIVE
        assert not runtime.epoch_state.tracking_enabled

    def test_empty_tai_converges_immediately(self):
        runtime = make_runtime()
        col = runtime.collector
        col.begin_epoch()
        assert col.await_convergence(timeout_s=0.01)
        col.end_epoch()


class TestMigrate:
    def setup_active(self, runtime):
        runtime.collector.begin_epoch()
        assert runtime.collector.await_convergence()

    def test_quiescent_object_moves_with_payload(self):
        runtime = make_runtime()
        index = add_object(runtime, payload=b"p" * 100)
        self.setup_active(runtime)
        assert runtime.collector.migrate(index, HeapId.HOT) == "moved"
        word = runtime.registry.cell(index).word
        fields = unpack(word)
        assert fields.heap is HeapId.HOT
        assert fields.ciw == 0 and not fields.accessed
        assert not fields.migration_lock
        assert runtime.regions.read(fields.locator) == b"p" * 100
        assert runtime.regions.region(HeapId.NEW).live_slot_count == 0

    def test_nonzero_atc_skips_without_locking(self):
        runtime = make_runtime()
        index = add_object(runtime)
        runtime.registry.cell(index).atc_increment()
        self.setup_active(runtime)
        assert runtime.collector.migrate(index, HeapId.HOT) == "skipped"

    def test_tombstoned_object_skipped(self):
        runtime = make_runtime()
        index = add_object(runtime)
        old = runtime.registry.tombstone(index)
        runtime.regions.free(old & ((1 << 48) - 1))
        self.setup_active(runtime)
        assert runtime.collector.migrate(index, HeapId.HOT) == "skipped"

    def test_region_exhaustion_skips(self):
        runtime = TierRuntime(region_length=4096, scan_interval_s=120.0)
        index = add_object(runtime, payload=b"x" * 1024)
        for _ in range(4):  # fill HOT completely
            runtime.regions.allocate(HeapId.HOT, 1024)
        self.setup_active(runtime)
        assert runtime.collector.migrate(index, HeapId.HOT) == "skipped"
        assert word_heap(runtime.registry.cell(index).word) is HeapId.NEW


class TestScanWindow:
    def test_accessed_cold_object_promoted(self):
        runtime = make_runtime()
        index = add_object(runtime, heap=HeapId.COLD, accessed=True)
        report = runtime.collector.run_scan_window()
        assert report.promoted_to_hot == 1
        fields = unpack(runtime.registry.cell(index).word)
        assert fields.heap is HeapId.HOT and fields.ciw == 0

    def test_accessed_new_object_promoted(self):
        runtime = make_runtime()
        index = add_object(runtime, heap=HeapId.NEW, accessed=True)
        report = runtime.collector.run_scan_window()
        assert report.new_to_hot == 1
        assert word_heap(runtime.registry.cell(index).word) is HeapId.HOT

    def test_untouched_object_demoted_at_threshold(self):
        runtime = make_runtime(ct_init=2)
        index = add_object(runtime, heap=HeapId.NEW)
        reports = [runtime.collector.run_scan_window() for _ in range(3)]
        assert word_heap(runtime.registry.cell(index).word) is HeapId.COLD
        assert sum(r.demoted_to_cold for r in reports) == 1

    def test_accessed_bit_cleared_by_scan(self):
        runtime = make_runtime()
        index = add_object(runtime, heap=HeapId.HOT, accessed=True)
        runtime.collector.run_scan_window()
        assert not runtime.registry.cell(index).word & ACCESSED_BIT

    def test_ciw_saturates_at_31(self):
        runtime = make_runtime(ct_init=32, pr_target=0.0)
        # pr_target 0 keeps C_t at 32 (PR never < 0), so no demotion occurs
        # and CIW can run into its clamp.
        index = add_object(runtime, heap=HeapId.HOT)
        for _ in range(40):
            runtime.collector.run_scan_window()
        assert unpack(runtime.registry.cell(index).word).ciw == 31

    def test_object_conservation_quiesced(self):
        runtime = make_runtime(ct_init=1)
        for i in range(50):
            add_object(runtime, accessed=(i % 2 == 0))
        for _ in range(5):
            runtime.collector.run_scan_window()
            assert runtime.registry.live_count == 50
            assert runtime.regions.live_slot_count() == 50
            runtime.audit()

    def test_window_report_counts_consistent(self):
        runtime = make_runtime()
        for i in range(20):
            add_object(runtime, accessed=(i < 10))
        report = runtime.collector.run_scan_window()
        assert report.scanned_guides == 20
        assert (report.promoted_to_hot + report.demoted_to_cold
                + report.new_to_hot) <= report.scanned_guides


class TestHintGating:
    def test_default_mode_never_emits(self):
        runtime = make_runtime(ct_init=1)
        add_object(runtime)
        for _ in range(5):
            report = runtime.collector.run_scan_window()
            assert report.hints_emitted == 0
        assert runtime.collector.hint_events == []

    def test_stability_rule(self):
        runtime = make_runtime(hinted=True)
        add_object(runtime, heap=HeapId.COLD)  # COLD populated
        col = runtime.collector
        col.controller.stable_windows = 1
        assert col.maybe_emit_hints() == []
        col.controller.stable_windows = 2
        events = col.maybe_emit_hints()
        assert any(e.kind is HintKind.PAGEOUT_ADVICE for e in events)
        assert any(e.kind is HintKind.HUGEPAGE_ADVICE for e in events)

    def test_vacuous_pr_does_not_build_stability(self):
        # Below-target PR with an empty COLD region must not count.
        runtime = make_runtime(hinted=True, ct_init=32, pr_target=0.5)
        add_object(runtime, accessed=True)
        for _ in range(4):
            runtime.collector.run_scan_window()
        assert runtime.collector.controller.stable_windows == 0
        assert runtime.collector.hint_events == []

    def test_hints_after_real_stability(self):
        runtime = make_runtime(hinted=True, ct_init=1, pr_target=0.5)
        add_object(runtime)      # never accessed: demoted window 1
        hot = add_object(runtime, accessed=True)
        for _ in range(4):
            runtime.collector.run_scan_window()
            runtime.registry.cell(hot).dereference()  # keep one object hot
        assert runtime.collector.controller.stable_windows >= 2
        assert runtime.collector.hinted_cold_pages()
