import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faultline.asm import assemble
from faultline.isa import OpcodeClass
from faultline.mpsim import CrashKind, run_group
from faultline.vm import InjectionHook, Status, TrapKind, run_single
from programs import FIVE_FADDS, PING_PONG, RANK_SUM, random_program

ENGINES = ["reference", "compiled"]


@pytest.mark.parametrize("engine", ENGINES)
def test_allreduce_of_rank_ids(engine):
    src = "rank r0\nli r1, 0\nL: bge r1, r0, d\nfmovi f2, 1.0\nfadd f0, f0, f2\naddi r1, r1, 1\njmp L\nd: allreduce_sum f1, f0\nhalt\n"
    out = run_group(assemble(src), 4, engine=engine)
    assert out.completed
    assert [s.fregs[1] for s in out.states] == [6.0] * 4


@pytest.mark.parametrize("engine", ENGINES)
def test_mutual_recv_deadlocks(engine):
    src = "rank r0\nli r1, 1\nsub r2, r1, r0\nrecv f0, r2\nhalt\n"
    out = run_group(assemble(src), 2, engine=engine)
    assert not out.completed and out.crash.kind is CrashKind.DEADLOCK


@pytest.mark.parametrize("engine", ENGINES)
def test_fifo_delivery(engine):
    src = "rank r0\nli r1, 1\nbeq r0, r1, rx\nfmovi f0, 3.5\nfmovi f1, 4.5\nsend r1, f0\nsend r1, f1\nhalt\nrx: li r2, 0\nrecv f2, r2\nrecv f3, r2\nhalt\n"
    out = run_group(assemble(src), 2, engine=engine)
    assert out.completed and out.pending_messages == 0
    assert out.states[1].fregs[2] == 3.5 and out.states[1].fregs[3] == 4.5


@pytest.mark.parametrize("engine", ENGINES)
def test_trap_crashes_group(engine):
    src = "rank r0\nli r1, 2\nbne r0, r1, ok\nld r3, [r1-9]\nok: barrier\nhalt\n"
    out = run_group(assemble(src), 4, engine=engine)
    assert out.crash.kind is CrashKind.TRAP and out.crash.rank == 2 and out.crash.trap is TrapKind.OUT_OF_BOUNDS
    assert out.crash.pc == 3


@pytest.mark.parametrize("engine", ENGINES)
def test_send_to_missing_rank_traps(engine):
    out = run_group(assemble("li r1, 5\nsend r1, f0\nhalt\n"), 2, engine=engine)
    assert out.crash.kind is CrashKind.TRAP and out.crash.trap is TrapKind.OUT_OF_BOUNDS


@pytest.mark.parametrize("engine", ENGINES)
def test_budget(engine):
    out = run_group(assemble("L: jmp L\n"), 3, step_budget=100, engine=engine)
    assert out.crash.kind is CrashKind.BUDGET


@pytest.mark.parametrize("engine", ENGINES)
def test_mismatched_collectives_deadlock(engine):
    src = "rank r0\nbne r0, r1, b\nallreduce_sum f0, f0\nhalt\nb: barrier\nhalt\n"
    out = run_group(assemble(src), 2, engine=engine)
    assert out.crash.kind is CrashKind.DEADLOCK


@pytest.mark.parametrize("engine", ENGINES)
def test_halted_rank_leaves_collective_stuck(engine):
    src = "rank r0\nbne r0, r1, h\nbarrier\nh: halt\n"
    out = run_group(assemble(src), 2, engine=engine)
    assert out.crash.kind is CrashKind.DEADLOCK


def test_allreduce_sums_in_rank_order():
    # (1e16 + 1) + -1e16 differs from 1e16 + (1 + -1e16) only through association order
    src = ".data 0 1e16 1.0 -1e16\nrank r0\nfld f0, [r0]\nallreduce_sum f1, f0\nhalt\n"
    p = assemble(src)
    for engine in ENGINES:
        assert run_group(p, 3, engine=engine).states[0].fregs[1] == (1e16 + 1.0) + -1e16


def test_hook_rank_must_exist():
    with pytest.raises(ValueError):
        run_group(assemble("halt\n"), 2, InjectionHook(OpcodeClass.FADD, 1, 0, rank=2))
    with pytest.raises(ValueError):
        run_group(assemble("halt\n"), 0)


def test_serial_consistency_with_run_single():
    p = assemble(FIVE_FADDS)
    single = run_single(p).state.snapshot()
    for engine in ENGINES:
        assert run_group(p, 1, engine=engine).states[0].snapshot() == single


def test_trace_determinism():
    p = assemble(PING_PONG)
    t1, t2 = [], []
    run_group(p, 2, trace=t1)
    run_group(p, 2, trace=t2)
    assert hash(tuple(t1)) == hash(tuple(t2)) and t1
    # strict round-robin: rank 0 retires first
    assert t1[0] == (0, 0) and t1[1] == (1, 0)


def test_ping_pong_value():
    out = run_group(assemble(PING_PONG), 2)
    assert out.completed and out.checksum(31) == (1.5 * 2.0 + 1.5) * 2.0


def _same(a, b):
    assert a.completed == b.completed
    assert a.crash == b.crash
    assert a.total_steps == b.total_steps
    assert a.pending_messages == b.pending_messages
    for x, y in zip(a.states, b.states):
        assert x.snapshot() == y.snapshot()


@settings(max_examples=300)
@given(random_program(), st.integers(1, 3), st.integers(0, 3), st.integers(1, 6), st.integers(0, 63))
def test_engines_agree_on_random_programs(src, nranks, cls, k, bit):
    p = assemble(src)
    hook_a = InjectionHook(OpcodeClass(cls), k, bit, rank=nranks - 1)
    hook_b = InjectionHook(OpcodeClass(cls), k, bit, rank=nranks - 1)
    ref = run_group(p, nranks, hook_a, step_budget=300, engine="reference")
    comp = run_group(p, nranks, hook_b, step_budget=300, engine="compiled")
    _same(ref, comp)
    assert hook_a == hook_b


@pytest.mark.parametrize("src", [RANK_SUM, PING_PONG, FIVE_FADDS])
@pytest.mark.parametrize("nranks", [1, 2, 4])
def test_engines_agree_on_fixed_programs(src, nranks):
    p = assemble(src)
    _same(run_group(p, nranks, engine="reference"), run_group(p, nranks))


def test_completed_ranks_are_halted():
    out = run_group(assemble(RANK_SUM), 4)
    assert all(s.status is Status.HALTED for s in out.states)
    assert out.checksum(31) == sum(0.5 + r for r in range(4))
