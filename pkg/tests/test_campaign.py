import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ieee_fields, ieee_value
from faultline.asm import assemble
from faultline.bundle import dump_campaign
from faultline.campaign import (
    CampaignConfig,
    checkpoint_sizes,
    classify,
    exact_sdc_rate,
    golden_checksum,
    is_converged,
    mix,
    rolling_rates,
    run_campaign,
    run_exhaustive,
    trial_rng,
)
from faultline.errors import KernelDefectError, NoTargetError, SpaceTooLargeError
from faultline.injector import draw_fault, injected_run, profile
from faultline.isa import OpcodeClass, float_to_bits
from faultline.kernels import build_kernel
from faultline.mpsim import CrashInfo, CrashKind, GroupOutcome
from faultline.outcomes import Benign, OutcomeClass, Sdc, crash
from programs import DEAD_FADD, FIVE_FADDS, ONE_FADD, PING_PONG, RANK_SUM

FADD = OpcodeClass.FADD


class Done:
    crash = None


def crashed(kind):
    return GroupOutcome(False, [], 0, CrashInfo(kind, 0, 0))


def test_classify_examples():
    assert classify(crashed(CrashKind.DEADLOCK), None, 1.0, 1e-8) == crash(CrashKind.DEADLOCK)
    assert classify(Done, 1.0 + 1e-12, 1.0, 1e-8) == Benign
    assert classify(Done, math.nan, 1.0, 1e-8) == Sdc
    assert classify(Done, math.inf, 1.0, 1e-8) == Sdc
    assert classify(Done, 1.0 + 2e-8, 1.0, 1e-8) == Sdc


def test_classify_zero_golden_is_absolute():
    assert classify(Done, 5e-9, 0.0, 1e-8) == Benign
    assert classify(Done, -2e-8, 0.0, 1e-8) == Sdc


@given(st.floats(allow_nan=True), st.floats(-1e6, 1e6), st.floats(1e-12, 0.5), st.floats(1e-12, 0.5))
def test_epsilon_monotonicity(x, golden, e1, e2):
    lo, hi = sorted((e1, e2))
    if classify(Done, x, golden, lo) == Benign:
        assert classify(Done, x, golden, hi) == Benign


def test_outcome_class_invariants():
    with pytest.raises(ValueError):
        OutcomeClass("Crash")
    with pytest.raises(ValueError):
        OutcomeClass("SDC", CrashKind.TRAP)
    assert OutcomeClass.parse(str(crash(CrashKind.BUDGET))) == crash(CrashKind.BUDGET)


def test_golden_trivial_and_repeatable():
    p = assemble(".verify f0 AUTO 1e-8\nfmovi f0, 2.0\nhalt\n")
    assert golden_checksum(p, 1) == 2.0
    g = golden_checksum(assemble(PING_PONG), 2)
    assert float_to_bits(g) == float_to_bits(golden_checksum(assemble(PING_PONG), 2))


def test_golden_of_crashing_program():
    with pytest.raises(KernelDefectError):
        golden_checksum(assemble("li r1, 0\ndiv r1, r1, r1\nhalt\n"), 1)


def test_cg_goldens_agree_across_modes():
    p, _ = build_kernel("cg")
    a, b = golden_checksum(p, 1), golden_checksum(p, 4)
    assert abs(a - b) <= 1e-8 * abs(a)


def test_rolling_rates_examples():
    assert rolling_rates([Sdc, Benign, Benign, Benign], 2) == [0.5, 0.25]
    assert rolling_rates([Benign] * 7, 3) == [0.0, 0.0, 0.0]
    assert rolling_rates([Sdc] * 1000 + [Benign] * 1000, 1000) == [1.0, 0.5]
    assert rolling_rates([], 5) == []
    assert rolling_rates([Sdc, Benign, Sdc], 2) == [0.5, 2 / 3]
    assert checkpoint_sizes(5, 2) == [2, 4, 5]
    with pytest.raises(ValueError):
        rolling_rates([Sdc], 0)


outcome_lists = st.lists(st.sampled_from([Benign, Sdc, crash(CrashKind.TRAP)]), max_size=60)


@given(outcome_lists, st.integers(1, 10), st.integers(0, 60))
def test_monotone_refinement(outs, interval, cut):
    cut = (min(cut, len(outs)) // interval) * interval
    full = rolling_rates(outs, interval)
    assert rolling_rates(outs[:cut], interval) == full[: cut // interval]


def test_is_converged_examples():
    # every point lies within 0.02 of the last, so the stated rule gives the first index
    assert is_converged([0.30, 0.31, 0.305, 0.304], 0.02, 3) == (True, 0)
    assert is_converged([0.1, 0.5, 0.1, 0.5], 0.01, 2) == (False, None)
    assert is_converged([0.2] * 6, 1e-9, 6) == (True, 0)
    assert is_converged([0.2, 0.2], 0.1, 3) == (False, None)
    assert is_converged([0.5, 0.1, 0.3, 0.3, 0.31], 0.02, 3) == (True, 2)
    with pytest.raises(ValueError):
        is_converged([0.1, 0.1], 0.1, 1)


@given(st.lists(st.floats(0, 1), max_size=20), st.floats(0, 0.5), st.integers(2, 8))
def test_is_converged_matches_definition(series, tol, window):
    ok, j = is_converged(series, tol, window)
    n = len(series)
    good = [
        i for i in range(n)
        if all(abs(series[t] - series[-1]) <= tol for t in range(i, n)) and n - i >= window
    ]
    assert (ok, j) == ((True, good[0]) if good else (False, None))


def test_mix_is_fixed():
    # pinned once from this implementation so trial streams stay stable
    assert mix(0, 0) == 0xE220A8397B1DCDAF
    assert mix(7, 3) != mix(7, 4) != mix(8, 3)


def test_config_validation():
    with pytest.raises(ValueError):
        CampaignConfig("cg", "serial", nranks=4)
    with pytest.raises(ValueError):
        CampaignConfig("cg", trials=0)
    with pytest.raises(ValueError):
        CampaignConfig("cg", epsilon=1.5)
    with pytest.raises(ValueError):
        CampaignConfig("cg", mode="hybrid")
    assert CampaignConfig("cg", "parallel").nranks == 4


def test_exhaustive_one_fadd_against_brute_force():
    records = run_exhaustive(assemble(ONE_FADD), 1, FADD, 1e-8)
    assert len(records) == 64
    one = float_to_bits(1.0)
    for rec in records:
        flipped = ieee_value(*ieee_fields(one ^ (1 << rec.spec.bit)))
        want = "Benign" if abs(flipped - 1.0) <= 1e-8 else "SDC"
        assert rec.outcome.tag == want
    tags = [r.outcome.tag for r in records]
    assert tags[:26] == ["Benign"] * 26 and tags[26:] == ["SDC"] * 38


def test_exhaustive_dead_value_all_benign():
    records = run_exhaustive(assemble(DEAD_FADD), 1, FADD)
    assert len(records) == 64 and {r.outcome for r in records} == {Benign}


def test_exhaustive_cap():
    p, _ = build_kernel("cg")
    with pytest.raises(SpaceTooLargeError, match="sites"):
        run_exhaustive(p, 1, FADD)


@pytest.mark.parametrize("seed", [0, 1, 2**63 + 5])
def test_single_trial_matches_exhaustive(seed):
    p = assemble(ONE_FADD)
    table = {r.spec: r for r in run_exhaustive(p, 1, FADD)}
    res = run_campaign(CampaignConfig("one", trials=1, seed=seed, checkpoint_interval=1), p)
    (rec,) = res.records
    assert rec == table[rec.spec]


MICRO = [(ONE_FADD, 1), (FIVE_FADDS, 1), (RANK_SUM, 4), (PING_PONG, 2)]


@pytest.mark.parametrize("src, nranks", MICRO)
def test_sampled_equals_exhaustive(src, nranks):
    p = assemble(src)
    table = {r.spec: r for r in run_exhaustive(p, nranks, FADD)}
    mode = "serial" if nranks == 1 else "parallel"
    res = run_campaign(CampaignConfig("m", mode, nranks, trials=500, seed=11, checkpoint_interval=100), p)
    assert all(rec == table[rec.spec] for rec in res.records)


def test_sampled_rate_within_three_standard_errors():
    p = assemble(FIVE_FADDS)
    exact = exact_sdc_rate(run_exhaustive(p, 1, FADD))
    res = run_campaign(CampaignConfig("five", trials=10_000, seed=5), p)
    se = math.sqrt(exact * (1 - exact) / 10_000)
    assert abs(res.sdc_rate - exact) <= 3 * se


def test_campaign_partition_and_rates():
    p = assemble(FIVE_FADDS)
    res = run_campaign(CampaignConfig("five", trials=250, seed=2, checkpoint_interval=100), p)
    c = res.counts()
    assert sum(c.values()) == 250 == len(res.records)
    assert len(res.rate_series) == 3
    sdc = [r.outcome.is_sdc for r in res.records]
    assert res.rate_series[1] == sum(sdc[:200]) / 200


def test_campaign_deterministic_and_job_independent():
    p = assemble(PING_PONG)
    cfg = CampaignConfig("pp", "parallel", 2, trials=64, seed=123, checkpoint_interval=16)
    a = dump_campaign(run_campaign(cfg, p))
    b = dump_campaign(run_campaign(cfg, p))
    c = dump_campaign(run_campaign(cfg, p, jobs=3))
    assert a == b == c


def test_trials_reproducible_in_isolation():
    p = assemble(RANK_SUM)
    cfg = CampaignConfig("rs", "parallel", 4, trials=40, seed=77)
    res = run_campaign(cfg, p)
    prof = profile(p, 4, FADD)
    for i in (0, 17, 39):
        spec = draw_fault(trial_rng(cfg.seed, i), prof)
        assert res.records[i].spec == spec
        assert injected_run(p, 4, spec).faulted_pc == res.records[i].faulted_pc


def test_no_target_propagates():
    p = assemble(FIVE_FADDS)
    with pytest.raises(NoTargetError):
        run_campaign(CampaignConfig("five", opcode_class=OpcodeClass.FDIV, trials=3), p)


def test_numeric_golden_must_hold_fault_free():
    p = assemble(".verify f0 3.0 1e-8\nfmovi f0, 2.0\nfadd f0, f0, f0\nhalt\n")
    with pytest.raises(KernelDefectError):
        run_campaign(CampaignConfig("bad", trials=2), p)


def test_crashes_are_counted():
    # the fadd result feeds an address through memory, so exponent flips can trap
    src = ".verify f0 AUTO 1e-8\n.data 0 0x0000000000000003 0.0\nfld f0, [0]\nfld f1, [1]\nfadd f2, f0, f1\nfst f2, [2]\nld r1, [2]\nld r2, [r1+0]\nhalt\n"
    records = run_exhaustive(assemble(src), 1, FADD)
    assert {r.outcome.tag for r in records} == {"Benign", "Crash"}
    assert all(r.outcome.crash is CrashKind.TRAP for r in records if r.outcome.tag == "Crash")
