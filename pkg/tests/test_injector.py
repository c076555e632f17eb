import random

import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import chisquare

from faultline.asm import SourceLoc, assemble
from faultline.errors import NoTargetError, PreconditionError
from faultline.injector import (
    DRAWS_PER_FAULT,
    FaultSpec,
    Profile,
    draw_fault,
    injected_run,
    profile,
)
from faultline.isa import OpcodeClass, apply_bitflip, float_to_bits
from faultline.mpsim import run_group
from faultline.vm import InjectionHook
from programs import FIVE_FADDS, ONE_FADD, PING_PONG, RANK_SUM

FADD, FMUL = OpcodeClass.FADD, OpcodeClass.FMUL


def test_profile_counts_loop():
    p = assemble(FIVE_FADDS)
    assert profile(p, 1, FADD).per_rank_counts == (5,)
    assert profile(p, 1, FMUL).per_rank_counts == (0,)


def test_profile_is_repeatable_and_per_rank():
    p = assemble(RANK_SUM)
    a = profile(p, 4, FADD)
    assert a == profile(p, 4, FADD)
    assert a.per_rank_counts == (0, 1, 2, 3)


def test_profile_of_crashing_program_fails():
    from faultline.errors import KernelDefectError

    with pytest.raises(KernelDefectError):
        profile(assemble("L: jmp L\n"), 1, FADD, step_budget=50)


def test_draw_degenerate_space():
    prof = Profile(FADD, (1,))
    rng = random.Random(3)
    specs = [draw_fault(rng, prof) for _ in range(200)]
    assert {(s.rank, s.k) for s in specs} == {(0, 1)}
    assert len({s.bit for s in specs}) > 50


def test_draw_excludes_empty_ranks():
    prof = Profile(FADD, (10, 0, 0, 0))
    rng = random.Random(0)
    assert {draw_fault(rng, prof).rank for _ in range(500)} == {0}
    prof = Profile(FADD, (0, 0, 7, 0))
    assert {draw_fault(rng, prof).rank for _ in range(500)} == {2}


def test_draw_no_target():
    with pytest.raises(NoTargetError, match="no injection targets"):
        draw_fault(random.Random(0), Profile(FADD, (0, 0)))


class CountingRng(random.Random):
    calls = 0

    def getrandbits(self, k):
        self.calls += 1
        return super().getrandbits(k)


@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=6).filter(any), st.integers(0, 2**64 - 1))
def test_draw_uses_three_draws_and_stays_in_bounds(counts, seed):
    rng = CountingRng(seed)
    spec = draw_fault(rng, Profile(FADD, tuple(counts)))
    assert rng.calls == DRAWS_PER_FAULT == 3
    assert counts[spec.rank] > 0 and 1 <= spec.k <= counts[spec.rank] and 0 <= spec.bit <= 63


def test_rank_frequencies_chi_square():
    prof = Profile(FADD, (10, 10, 10, 10))
    rng = random.Random(12345)
    ranks = [0] * 4
    for _ in range(40_000):
        ranks[draw_fault(rng, prof).rank] += 1
    assert chisquare(ranks).pvalue > 0.001


def test_exhaustive_space_uniformity():
    # >= 100 samples per site over {ranks} x [1..D] x [0..63]
    prof = Profile(FADD, (3, 3))
    rng = random.Random(99)
    cells = {}
    n = 100 * 6 * 64
    for _ in range(n):
        s = draw_fault(rng, prof)
        cells[(s.rank, s.k, s.bit)] = cells.get((s.rank, s.k, s.bit), 0) + 1
    assert len(cells) == 6 * 64
    assert chisquare(list(cells.values())).pvalue > 0.001


def test_injected_sign_flip():
    p = assemble(ONE_FADD)
    rec = injected_run(p, 1, FaultSpec(0, FADD, 1, 63))
    assert rec.faulted_pc == 2
    assert rec.faulted_loc == p.debug[2] == SourceLoc("program.fasm", 6)
    assert rec.checksum == -1.0 and rec.completed
    assert rec.original_bits == float_to_bits(1.0)
    assert rec.corrupted_bits == apply_bitflip(rec.original_bits, 63)


def test_injected_lsb_flip():
    rec = injected_run(assemble(ONE_FADD), 1, FaultSpec(0, FADD, 1, 0))
    assert rec.checksum == 1.0000000000000002


def test_injected_run_is_deterministic():
    p = assemble(PING_PONG)
    spec = FaultSpec(1, FADD, 1, 40)
    assert injected_run(p, 2, spec) == injected_run(p, 2, spec)


def test_k_beyond_profile_is_rejected():
    p = assemble(FIVE_FADDS)
    with pytest.raises(PreconditionError):
        injected_run(p, 1, FaultSpec(0, FADD, 6, 0))
    with pytest.raises(PreconditionError):
        injected_run(p, 1, FaultSpec(1, FADD, 1, 0))


def test_spec_validation():
    with pytest.raises(ValueError):
        FaultSpec(0, FADD, 0, 0)
    with pytest.raises(ValueError):
        FaultSpec(0, FADD, 1, 64)


@given(st.integers(1, 5), st.integers(0, 63))
def test_single_shot_and_prefix_integrity(k, bit):
    p = assemble(FIVE_FADDS)
    hook = InjectionHook(FADD, k, bit)
    clean, faulty = [], []
    run_group(p, 1, trace=clean)
    run_group(p, 1, hook, trace=faulty)
    assert hook.fired == 1
    # trace up to and including the faulted instruction is unchanged
    cut = next(i for i, (_, pc) in enumerate(clean) if pc == hook.pc and sum(1 for _, q in clean[: i + 1] if q == hook.pc) == k)
    assert faulty[: cut + 1] == clean[: cut + 1]
    rec = injected_run(p, 1, FaultSpec(0, FADD, k, bit))
    assert rec.faulted_pc == hook.pc and rec.corrupted_bits == hook.corrupted_bits


@given(st.integers(0, 3), st.integers(0, 63), st.data())
def test_parallel_injection_targets_right_rank(rank, bit, data):
    p = assemble(RANK_SUM)
    if rank == 0:
        with pytest.raises(PreconditionError):
            injected_run(p, 4, FaultSpec(rank, FADD, 1, bit))
        return
    k = data.draw(st.integers(1, rank))
    rec = injected_run(p, 4, FaultSpec(rank, FADD, k, bit))
    assert rec.completed
    assert rec.corrupted_bits ^ rec.original_bits == 1 << bit
