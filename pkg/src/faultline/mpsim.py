"""Deterministic message-passing simulation of N ranks running one program.

Scheduling is strict round-robin by rank id, one instruction per turn.
Channels are unbounded FIFOs per (src, dst) pair, so ``send`` never blocks;
``recv`` blocks until a message is queued. ``allreduce_sum`` and ``barrier``
complete when every rank has arrived, summing contributions in ascending rank
order. Any trap crashes the whole group at once; a round in which no rank
can make progress is a deadlock.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import engine as eng
from .asm import Program
from .isa import NUM_FREGS, bits_to_float, to_signed64
from .vm import (
    DEFAULT_STEP_BUDGET,
    Halted,
    InjectionHook,
    Retired,
    Status,
    Trapped,
    TrapKind,
    VmState,
    WantsCollective,
    WantsRecv,
    WantsSend,
    retire,
    step,
)


class CrashKind(enum.Enum):
    TRAP = "Trap"
    DEADLOCK = "Deadlock"
    BUDGET = "BudgetExceeded"


@dataclass(frozen=True)
class CrashInfo:
    kind: CrashKind
    rank: int
    pc: int
    trap: TrapKind | None = None


@dataclass
class GroupOutcome:
    completed: bool
    states: list[VmState]
    total_steps: int
    crash: CrashInfo | None = None
    pending_messages: int = 0

    @property
    def kind(self) -> str:
        return "Completed" if self.completed else "Crashed"

    def checksum(self, freg: int) -> float | None:
        """Rank 0's value of ``freg`` when the group completed."""
        return self.states[0].fregs[freg] if self.completed else None


def run_group(
    program: Program,
    nranks: int,
    hook: InjectionHook | None = None,
    step_budget: int = DEFAULT_STEP_BUDGET,
    *,
    engine: str = "compiled",
    trace: list[tuple[int, int]] | None = None,
) -> GroupOutcome:
    """Run ``nranks`` copies of ``program``; ``hook`` applies to rank ``hook.rank``.

    ``engine="reference"`` uses the Python interpreter and can record a trace
    of ``(rank, pc)`` for every retired instruction.
    """
    if nranks < 1:
        raise ValueError("nranks must be >= 1")
    if hook is not None and not 0 <= hook.rank < nranks:
        raise ValueError(f"hook targets rank {hook.rank} but only {nranks} ranks run")
    if engine == "reference" or trace is not None:
        return _run_reference(program, nranks, hook, step_budget, trace)
    if engine != "compiled":
        raise ValueError(f"unknown engine {engine!r}")
    return _run_compiled(program, nranks, hook, step_budget)


def _run_reference(program, nranks, hook, budget, trace) -> GroupOutcome:
    states = [VmState.boot(program, r, nranks) for r in range(nranks)]
    chans = [[deque() for _ in range(nranks)] for _ in range(nranks)]  # [src][dst]
    arrived: dict[int, WantsCollective] = {}

    def done(crash: CrashInfo | None) -> GroupOutcome:
        pending = sum(len(q) for row in chans for q in row)
        return GroupOutcome(
            completed=crash is None,
            states=states,
            total_steps=sum(s.steps for s in states),
            crash=crash,
            pending_messages=pending,
        )

    while True:
        progressed = False
        for r, st in enumerate(states):
            if st.status is Status.HALTED or st.status is Status.BLOCKED_COLLECTIVE:
                continue
            if st.status is Status.BLOCKED_RECV:
                q = chans[st.blocked_on][r]
                if not q:
                    continue
                st.fregs[program.instructions[st.pc].args[0]] = q.popleft()
                st.status = Status.RUNNING
                st.blocked_on = None
                if trace is not None:
                    trace.append((r, st.pc))
                retire(st)
                progressed = True
                continue
            if st.steps >= budget:
                return done(CrashInfo(CrashKind.BUDGET, r, st.pc))
            progressed = True
            pc = st.pc
            ev = step(st, program, hook if hook is not None and hook.rank == r else None)
            if isinstance(ev, (Retired, Halted)):
                if trace is not None:
                    trace.append((r, pc))
            elif isinstance(ev, Trapped):
                return done(CrashInfo(CrashKind.TRAP, r, ev.pc, ev.reason))
            elif isinstance(ev, WantsSend):
                chans[r][ev.dst].append(ev.value)
                if trace is not None:
                    trace.append((r, pc))
                retire(st)
            elif isinstance(ev, WantsRecv):
                q = chans[ev.src][r]
                if q:
                    st.fregs[ev.freg] = q.popleft()
                    if trace is not None:
                        trace.append((r, pc))
                    retire(st)
                else:
                    st.status = Status.BLOCKED_RECV
                    st.blocked_on = ev.src
            else:
                st.status = Status.BLOCKED_COLLECTIVE
                arrived[r] = ev
                if len(arrived) == nranks:
                    if len({e.kind for e in arrived.values()}) > 1:
                        return done(CrashInfo(CrashKind.DEADLOCK, r, pc))
                    total = arrived[0].value
                    if arrived[0].kind == "allreduce_sum":
                        for i in range(1, nranks):
                            total = total + arrived[i].value
                    for i, other in enumerate(states):
                        e = arrived[i]
                        if e.freg is not None:
                            other.fregs[e.freg] = total
                        other.status = Status.RUNNING
                        if trace is not None:
                            trace.append((i, other.pc))
                        retire(other)
                    arrived.clear()
        if all(s.status is Status.HALTED for s in states):
            return done(None)
        if not progressed:
            stuck = next(i for i, s in enumerate(states) if s.status is not Status.HALTED)
            return done(CrashInfo(CrashKind.DEADLOCK, stuck, states[stuck].pc))


_STATUS = {
    eng.ST_RUNNING: Status.RUNNING,
    eng.ST_HALTED: Status.HALTED,
    eng.ST_TRAPPED: Status.TRAPPED,
    eng.ST_RECV: Status.BLOCKED_RECV,
    eng.ST_COLL: Status.BLOCKED_COLLECTIVE,
}
_TRAP = {eng.TRAP_OOB: TrapKind.OUT_OF_BOUNDS, eng.TRAP_DIVZERO: TrapKind.INT_DIV_ZERO}


def crash_from_out(out: np.ndarray) -> CrashInfo | None:
    kind = int(out[eng.O_KIND])
    if kind == eng.OUT_COMPLETED:
        return None
    rank, pc = int(out[eng.O_RANK]), int(out[eng.O_PC])
    if kind == eng.OUT_TRAP:
        return CrashInfo(CrashKind.TRAP, rank, pc, _TRAP[int(out[eng.O_TRAP])])
    if kind == eng.OUT_DEADLOCK:
        return CrashInfo(CrashKind.DEADLOCK, rank, pc)
    return CrashInfo(CrashKind.BUDGET, rank, pc)


def hook_tuple(hook: InjectionHook | None) -> tuple[int, int, int, int] | None:
    if hook is None:
        return None
    return (hook.rank, int(hook.opcode_class), hook.k, hook.bit)


def fill_hook(hook: InjectionHook | None, out: np.ndarray) -> None:
    if hook is None or not out[eng.O_FIRED]:
        return
    hook.fired = int(out[eng.O_FIRED])
    hook.pc = int(out[eng.O_HPC])
    hook.original_bits = int(out[eng.O_ORIG]) & ((1 << 64) - 1)
    hook.corrupted_bits = int(out[eng.O_BAD]) & ((1 << 64) - 1)


def _run_compiled(program, nranks, hook, budget) -> GroupOutcome:
    m = eng.Machine(program, nranks)
    out = m.run(budget, hook_tuple(hook))
    fill_hook(hook, out)
    crash = crash_from_out(out)
    states = []
    for r in range(nranks):
        fbits = m.fregs[r].view(np.int64)
        states.append(
            VmState(
                fregs=[bits_to_float(int(b)) for b in fbits[:NUM_FREGS]],
                iregs=[int(v) for v in m.iregs[r]],
                mem=[to_signed64(int(v)) for v in m.mem[r]],
                pc=int(m.pcs[r]),
                steps=int(m.steps[r]),
                class_counters=[int(v) for v in m.counters[r]],
                rank=r,
                nranks=nranks,
                status=_STATUS[int(m.status[r])],
                trap=crash.trap if crash is not None and crash.rank == r and crash.trap else None,
            )
        )
    return GroupOutcome(
        completed=crash is None,
        states=states,
        total_steps=int(out[eng.O_STEPS]),
        crash=crash,
        pending_messages=int(out[eng.O_PENDING]),
    )
