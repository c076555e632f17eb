"""Reference interpreter for one simulated rank.

This is the readable, instruction-at-a-time engine. ``faultline.engine`` holds
a compiled twin used by campaigns; the two are checked against each other
in the test suite.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .asm import Program
from .isa import (
    INT64_MIN,
    LINK_REG,
    MASK64,
    NUM_FREGS,
    NUM_IREGS,
    OpcodeClass,
    Op,
    apply_bitflip,
    bits_to_float,
    float_to_bits,
    to_signed64,
)

DEFAULT_STEP_BUDGET = 50_000_000


class Status(enum.Enum):
    RUNNING = "running"
    HALTED = "halted"
    TRAPPED = "trapped"
    BLOCKED_RECV = "blocked_recv"
    BLOCKED_COLLECTIVE = "blocked_collective"


class TrapKind(enum.Enum):
    OUT_OF_BOUNDS = "OutOfBounds"
    INT_DIV_ZERO = "IntDivZero"


@dataclass
class InjectionHook:
    """Flip ``bit`` of the result of the ``k``-th dynamic ``opcode_class`` instance.

    ``rank`` only matters to the group scheduler. After a run, ``fired`` counts
    how often the hook matched (it can match at most once) and the remaining
    fields describe the corrupted instruction.
    """

    opcode_class: OpcodeClass
    k: int
    bit: int
    rank: int = 0
    fired: int = 0
    pc: int | None = None
    original_bits: int | None = None
    corrupted_bits: int | None = None


@dataclass
class VmState:
    fregs: list[float]
    iregs: list[int]
    mem: list[int]
    pc: int = 0
    steps: int = 0
    class_counters: list[int] = field(default_factory=lambda: [0, 0, 0, 0])
    rank: int = 0
    nranks: int = 1
    status: Status = Status.RUNNING
    trap: TrapKind | None = None
    blocked_on: int | None = None

    @classmethod
    def boot(cls, program: Program, rank: int = 0, nranks: int = 1) -> VmState:
        return cls(
            fregs=[0.0] * NUM_FREGS,
            iregs=[0] * NUM_IREGS,
            mem=program.memory_image(),
            pc=program.entry,
            rank=rank,
            nranks=nranks,
        )

    def freg_bits(self) -> list[int]:
        return [float_to_bits(x) for x in self.fregs]

    def snapshot(self) -> tuple:
        """Bit-exact, hashable view of the architectural state."""
        return (
            tuple(self.freg_bits()),
            tuple(self.iregs),
            tuple(self.mem),
            self.pc,
            self.steps,
            tuple(self.class_counters),
            self.rank,
            self.nranks,
            self.status,
            self.trap,
        )


# Step events. Messaging instructions are not retired by ``step``; the
# scheduler completes them and calls ``retire``.
@dataclass(frozen=True)
class Retired:
    pc: int


@dataclass(frozen=True)
class Halted:
    pc: int


@dataclass(frozen=True)
class Trapped:
    reason: TrapKind
    pc: int


@dataclass(frozen=True)
class WantsSend:
    dst: int
    value: float


@dataclass(frozen=True)
class WantsRecv:
    src: int
    freg: int


@dataclass(frozen=True)
class WantsCollective:
    kind: str  # "allreduce_sum" | "barrier"
    value: float | None
    freg: int | None


StepEvent = Retired | Halted | Trapped | WantsSend | WantsRecv | WantsCollective


def retire(state: VmState) -> None:
    state.pc += 1
    state.steps += 1


def _trap(state: VmState, kind: TrapKind) -> Trapped:
    state.status = Status.TRAPPED
    state.trap = kind
    return Trapped(kind, state.pc)


def _wrap(x: int) -> int:
    return to_signed64(x & MASK64)


def _tdiv(a: int, b: int) -> int:
    if a == INT64_MIN and b == -1:
        return INT64_MIN
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


def _address(state: VmState, base: int, off: int) -> int:
    return off if base < 0 else _wrap(state.iregs[base] + off)


def _valid_peer(state: VmState, peer: int) -> bool:
    return 0 <= peer < state.nranks and peer != state.rank


def step(state: VmState, program: Program, hook: InjectionHook | None = None) -> StepEvent:
    """Decode and execute the instruction at ``state.pc``."""
    if state.status is not Status.RUNNING:
        raise RuntimeError(f"step on a {state.status.value} rank")
    code = program.instructions
    n = len(code)
    if not 0 <= state.pc < n:
        return _trap(state, TrapKind.OUT_OF_BOUNDS)
    ins = code[state.pc]
    op = ins.opcode
    a = ins.args
    fr = state.fregs
    ir = state.iregs

    if Op.FADD <= op <= Op.FDIV:
        x, y = fr[a[1]], fr[a[2]]
        if op is Op.FADD:
            res = x + y
        elif op is Op.FMUL:
            res = x * y
        elif op is Op.FSUB:
            res = x - y
        elif y == 0.0:
            # Python raises on division by zero; IEEE gives inf/nan silently
            res = _ieee_div(x, y)
        else:
            res = x / y
        cls = int(op) - int(Op.FADD)
        state.class_counters[cls] += 1
        if hook is not None and hook.opcode_class == cls and hook.k == state.class_counters[cls]:
            orig = float_to_bits(res)
            bad = apply_bitflip(orig, hook.bit)
            res = bits_to_float(bad)
            hook.fired += 1
            hook.pc = state.pc
            hook.original_bits = orig
            hook.corrupted_bits = bad
        fr[a[0]] = res
    elif op is Op.FLD or op is Op.FST or op is Op.LD or op is Op.ST:
        addr = _address(state, a[1], a[2])
        if not 0 <= addr < len(state.mem):
            return _trap(state, TrapKind.OUT_OF_BOUNDS)
        if op is Op.FLD:
            fr[a[0]] = bits_to_float(state.mem[addr])
        elif op is Op.FST:
            state.mem[addr] = to_signed64(float_to_bits(fr[a[0]]))
        elif op is Op.LD:
            ir[a[0]] = state.mem[addr]
        else:
            state.mem[addr] = ir[a[0]]
    elif op is Op.FMOVI:
        fr[a[0]] = bits_to_float(a[1])
    elif op is Op.ADD:
        ir[a[0]] = _wrap(ir[a[1]] + ir[a[2]])
    elif op is Op.SUB:
        ir[a[0]] = _wrap(ir[a[1]] - ir[a[2]])
    elif op is Op.MUL:
        ir[a[0]] = _wrap(ir[a[1]] * ir[a[2]])
    elif op is Op.DIV:
        if ir[a[2]] == 0:
            return _trap(state, TrapKind.INT_DIV_ZERO)
        ir[a[0]] = _tdiv(ir[a[1]], ir[a[2]])
    elif op is Op.ADDI:
        ir[a[0]] = _wrap(ir[a[1]] + a[2])
    elif op is Op.MOV:
        ir[a[0]] = ir[a[1]]
    elif op is Op.LI:
        ir[a[0]] = a[1]
    elif Op.BEQ <= op <= Op.BGE:
        x, y = ir[a[0]], ir[a[1]]
        if op is Op.BEQ:
            taken = x == y
        elif op is Op.BNE:
            taken = x != y
        elif op is Op.BLT:
            taken = x < y
        else:
            taken = x >= y
        state.steps += 1
        state.pc = a[2] if taken else state.pc + 1
        return Retired(ins.pc)
    elif op is Op.JMP:
        state.steps += 1
        state.pc = a[0]
        return Retired(ins.pc)
    elif op is Op.CALL:
        ir[LINK_REG] = state.pc + 1
        state.steps += 1
        state.pc = a[0]
        return Retired(ins.pc)
    elif op is Op.RET:
        target = ir[LINK_REG]
        if not 0 <= target < n:
            return _trap(state, TrapKind.OUT_OF_BOUNDS)
        state.steps += 1
        state.pc = target
        return Retired(ins.pc)
    elif op is Op.HALT:
        state.steps += 1
        state.status = Status.HALTED
        return Halted(ins.pc)
    elif op is Op.SEND:
        dst = ir[a[0]]
        if not _valid_peer(state, dst):
            return _trap(state, TrapKind.OUT_OF_BOUNDS)
        return WantsSend(dst, fr[a[1]])
    elif op is Op.RECV:
        src = ir[a[1]]
        if not _valid_peer(state, src):
            return _trap(state, TrapKind.OUT_OF_BOUNDS)
        return WantsRecv(src, a[0])
    elif op is Op.ALLREDUCE_SUM:
        return WantsCollective("allreduce_sum", fr[a[1]], a[0])
    elif op is Op.BARRIER:
        return WantsCollective("barrier", None, None)
    elif op is Op.RANK:
        ir[a[0]] = state.rank
    elif op is Op.NRANKS:
        ir[a[0]] = state.nranks
    else:  # pragma: no cover - closed opcode set
        raise AssertionError(op)

    retire(state)
    return Retired(ins.pc)


def _ieee_div(x: float, y: float) -> float:
    # hardware division so the default NaN matches the compiled engine
    with np.errstate(all="ignore"):
        return float(np.divide(np.float64(x), np.float64(y)))


@dataclass(frozen=True)
class RankOutcome:
    """Result of a serial run: ``kind`` is "halted", "trapped" or "budget"."""

    kind: str
    state: VmState
    reason: TrapKind | None = None
    pc: int | None = None


def run_single(
    program: Program,
    step_budget: int = DEFAULT_STEP_BUDGET,
    hook: InjectionHook | None = None,
    trace: list[int] | None = None,
) -> RankOutcome:
    """Run ``program`` as rank 0 of 1; collectives are the identity."""
    state = VmState.boot(program, 0, 1)
    while True:
        if state.steps >= step_budget:
            return RankOutcome("budget", state)
        pc = state.pc
        ev = step(state, program, hook)
        if isinstance(ev, Retired):
            if trace is not None:
                trace.append(pc)
            continue
        if isinstance(ev, Halted):
            if trace is not None:
                trace.append(pc)
            return RankOutcome("halted", state)
        if isinstance(ev, Trapped):
            return RankOutcome("trapped", state, ev.reason, ev.pc)
        if isinstance(ev, WantsCollective):
            if ev.freg is not None:
                state.fregs[ev.freg] = ev.value
            if trace is not None:
                trace.append(pc)
            retire(state)
            continue
        raise AssertionError(f"unexpected event {ev!r} at nranks=1")  # pragma: no cover
