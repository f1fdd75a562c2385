"""Scope guards, the base+delta used-guide set, and the TAI."""
import random
import threading

import pytest

from tierheap.guideword import pack, word_atc
from tierheap.runtime import GuideRegistry
from tierheap.scope import (BaseDeltaSet, EpochState, Phase, ScopeError,
                            ScopeManager, ThreadActivityIndex)
from tierheap.soda import SodaBitmap


class TestBaseDeltaSet:
    def test_basic_membership(self):
        s = BaseDeltaSet()
        assert s.add(10)
        assert not s.add(10)
        assert 10 in s and 11 not in s
        assert len(s) == 1

    def test_nearby_values_share_a_group(self):
        s = BaseDeltaSet()
        for v in range(100, 116):
            s.add(v)
        assert s.group_count == 1
        s.add(116)  # 17th value overflows the 16-delta group
        assert s.group_count == 2

    def test_distant_values_get_new_groups(self):
        s = BaseDeltaSet()
        s.add(0)
        s.add(1 << 33)  # outside the 32-bit delta range
        assert s.group_count == 2

    def test_out_of_range_rejected(self):
        s = BaseDeltaSet()
        with pytest.raises(ValueError):
            s.add(1 << 48)
        with pytest.raises(ValueError):
            s.add(-1)

    def test_iteration_and_clear(self):
        s = BaseDeltaSet()
        values = {5, 6, 1000, 2 ** 40}
        for v in values:
            s.add(v)
        assert set(s) == values
        s.clear()
        assert len(s) == 0 and 5 not in s

    def test_fuzz_against_reference_set(self):
        rng = random.Random(6)
        s, reference = BaseDeltaSet(), set()
        for _ in range(20_000):
            # Mix clustered and scattered values to exercise group packing.
            if rng.random() < 0.7:
                v = rng.randrange(0, 4096)
            else:
                v = rng.getrandbits(48)
            assert s.add(v) == (v not in reference)
            reference.add(v)
        assert len(s) == len(reference)
        assert set(s) == reference
        for _ in range(2000):
            v = rng.getrandbits(48)
            assert (v in s) == (v in reference)


class TestThreadActivityIndex:
    def test_enter_exit_counts(self):
        tai = ThreadActivityIndex(16)
        tai.enter(1, 5)
        assert not tai.converged(6)
        tai.exit(1)
        assert tai.converged(6)  # empty slots are ignored

    def test_exit_without_enter_raises(self):
        tai = ThreadActivityIndex(16)
        with pytest.raises(ScopeError):
            tai.exit(1)

    def test_collision_merge_waits_for_all(self):
        tai = ThreadActivityIndex(1)  # every thread collides
        tai.enter(1, 7)
        tai.enter(2, 7)
        assert tai.converged(7)
        tai.enter(3, 8)
        assert tai.converged(8)  # slot epoch now 8, count 3
        tai.exit(1)
        tai.exit(2)
        tai.exit(3)
        assert tai.converged(9)

    def test_slot_count_must_be_power_of_two(self):
        with pytest.raises(ValueError):
            ThreadActivityIndex(12)


def make_scope_env(tracking=False, epoch=0):
    soda = SodaBitmap()
    registry = GuideRegistry(soda)
    state = EpochState()
    state.epoch = epoch
    state.tracking_enabled = tracking
    tai = ThreadActivityIndex(16)
    return registry, ScopeManager(registry, tai, state), state


class TestScopeManager:
    def test_nesting_single_outermost(self):
        registry, scope, _ = make_scope_env()
        scope.enter_scope()
        scope.enter_scope()
        scope.exit_scope()
        assert scope.in_scope()
        scope.exit_scope()
        assert not scope.in_scope()
        assert scope.outermost_entries == 1
        assert scope.outermost_exits == 1

    def test_unbalanced_exit_raises(self):
        _, scope, _ = make_scope_env()
        with pytest.raises(ScopeError):
            scope.exit_scope()

    def test_guide_use_outside_scope_raises(self):
        registry, scope, _ = make_scope_env()
        index = registry.create(pack(0x10))
        with pytest.raises(ScopeError):
            scope.record_guide_use(index)

    def test_atc_tracked_exactly_once_per_scope(self):
        registry, scope, _ = make_scope_env(tracking=True)
        index = registry.create(pack(0x10))
        scope.enter_scope()
        for _ in range(5):
            scope.record_guide_use(index)
        assert word_atc(registry.cell(index).word) == 1
        scope.exit_scope()
        assert word_atc(registry.cell(index).word) == 0

    def test_no_atc_when_tracking_disabled(self):
        registry, scope, _ = make_scope_env(tracking=False)
        index = registry.create(pack(0x10))
        scope.enter_scope()
        scope.record_guide_use(index)
        assert word_atc(registry.cell(index).word) == 0
        scope.exit_scope()

    def test_tracking_sampled_at_outermost_entry(self):
        registry, scope, state = make_scope_env(tracking=False)
        index = registry.create(pack(0x10))
        scope.enter_scope()
        state.tracking_enabled = True  # flipped mid-scope: entry view holds
        scope.record_guide_use(index)
        assert word_atc(registry.cell(index).word) == 0
        scope.exit_scope()

    def test_tai_registration_uses_entry_epoch(self):
        registry, scope, state = make_scope_env(epoch=4)
        scope.enter_scope()
        state.epoch = 5
        assert not scope.tai.converged(5)  # still registered under epoch 4
        scope.exit_scope()
        assert scope.tai.converged(5)

    def test_scope_size_sampling(self):
        soda = SodaBitmap()
        registry = GuideRegistry(soda)
        scope = ScopeManager(registry, ThreadActivityIndex(16), EpochState(),
                             sample_scope_sizes=True)
        guides = [registry.create(pack(i)) for i in range(4)]
        scope.enter_scope()
        for g in guides:
            scope.record_guide_use(g)
        scope.exit_scope()
        assert scope.scope_size_samples == [4]

    def test_threads_are_independent(self):
        registry, scope, _ = make_scope_env(tracking=True)
        index = registry.create(pack(0x10))
        scope.enter_scope()
        scope.record_guide_use(index)
        errors = []

        def other():
            try:
                scope.record_guide_use(index)
            except ScopeError:
                errors.append("no-scope")

        t = threading.Thread(target=other)
        t.start()
        t.join()
        assert errors == ["no-scope"]  # other thread has no open scope
        scope.exit_scope()


class TestPhaseEnum:
    def test_phase_values(self):
        assert list(Phase) == [Phase.INACTIVE, Phase.PREPARE, Phase.ACTIVE]
