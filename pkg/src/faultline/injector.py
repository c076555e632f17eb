"""Two-pass fault model: profile the fault-free run, then inject one bit flip.

A fault site is ``(rank, class, k, bit)``: flip ``bit`` of the result of the
``k``-th dynamic instruction of ``class`` retired by ``rank``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from . import engine as eng
from .asm import Program, SourceLoc
from .errors import KernelDefectError, NoTargetError, PreconditionError
from .isa import OpcodeClass, bits_to_float
from .mpsim import CrashInfo, crash_from_out, run_group
from .outcomes import OutcomeClass
from .vm import DEFAULT_STEP_BUDGET

DRAWS_PER_FAULT = 3


@dataclass(frozen=True)
class Profile:
    opcode_class: OpcodeClass
    per_rank_counts: tuple[int, ...]

    @property
    def nranks(self) -> int:
        return len(self.per_rank_counts)

    @property
    def total(self) -> int:
        return sum(self.per_rank_counts)

    def eligible_ranks(self) -> list[int]:
        return [r for r, c in enumerate(self.per_rank_counts) if c > 0]


@dataclass(frozen=True, order=True)
class FaultSpec:
    rank: int
    opcode_class: OpcodeClass
    k: int
    bit: int

    def __post_init__(self) -> None:
        if self.rank < 0:
            raise ValueError("rank must be >= 0")
        if self.k < 1:
            raise ValueError("k is 1-based")
        if not 0 <= self.bit <= 63:
            raise ValueError("bit must be in 0..63")


@dataclass(frozen=True)
class TrialRecord:
    spec: FaultSpec
    faulted_pc: int
    faulted_loc: SourceLoc
    original_bits: int
    corrupted_bits: int
    outcome: OutcomeClass | None
    checksum_bits: int | None
    steps: int
    crash: CrashInfo | None = None

    @property
    def checksum(self) -> float | None:
        return None if self.checksum_bits is None else bits_to_float(self.checksum_bits)

    @property
    def completed(self) -> bool:
        return self.crash is None


def profile(
    program: Program,
    nranks: int,
    opcode_class: OpcodeClass,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> Profile:
    """Count dynamic ``opcode_class`` instances per rank in a fault-free run."""
    out = run_group(program, nranks, step_budget=step_budget)
    if not out.completed:
        c = out.crash
        raise KernelDefectError(
            f"fault-free run of {program.name} at nranks={nranks} crashed: "
            f"{c.kind.value} on rank {c.rank} at pc 0x{c.pc:08X}"
        )
    cls = OpcodeClass(opcode_class)
    return Profile(cls, tuple(s.class_counters[cls] for s in out.states))


def pc_profile(
    program: Program,
    nranks: int,
    opcode_class: OpcodeClass,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> list[dict[int, int]]:
    """Per-rank ``{pc: dynamic count}`` for ``opcode_class`` (reference interpreter, slower)."""
    trace: list[tuple[int, int]] = []
    out = run_group(program, nranks, step_budget=step_budget, trace=trace)
    if not out.completed:
        raise KernelDefectError(f"fault-free run of {program.name} at nranks={nranks} crashed")
    cls = OpcodeClass(opcode_class)
    per_rank: list[Counter] = [Counter() for _ in range(nranks)]
    for rank, pc in trace:
        if program.instructions[pc].opcode_class == cls:
            per_rank[rank][pc] += 1
    return [dict(sorted(c.items())) for c in per_rank]


def _below(rng, n: int) -> int:
    # one 64-bit draw scaled to [0, n); bias is at most n / 2**64
    return (rng.getrandbits(64) * n) >> 64


def draw_fault(rng, profile: Profile) -> FaultSpec:
    """Draw a fault site using exactly three 64-bit draws from ``rng``.

    The rank is uniform over ranks with at least one instance, ``k`` is
    uniform over that rank's instances and the bit is uniform over 0..63.
    ``rng`` is anything with ``getrandbits`` (normally ``random.Random``).
    """
    eligible = profile.eligible_ranks()
    if not eligible:
        raise NoTargetError(f"no injection targets: no rank executes {profile.opcode_class.label}")
    rank = eligible[_below(rng, len(eligible))]
    k = 1 + _below(rng, profile.per_rank_counts[rank])
    bit = _below(rng, 64)
    return FaultSpec(rank, profile.opcode_class, k, bit)


def checksum_register(program: Program) -> int:
    return program.verify.freg if program.verify is not None else 0


def injected_run(
    program: Program,
    nranks: int,
    spec: FaultSpec,
    step_budget: int = DEFAULT_STEP_BUDGET,
    *,
    machine: eng.Machine | None = None,
) -> TrialRecord:
    """Run the group once with ``spec`` armed; the outcome is left unclassified.

    Passing a ``machine`` built for ``(program, nranks)`` reuses its buffers.
    """
    if spec.rank >= nranks:
        raise PreconditionError(f"fault targets rank {spec.rank} but only {nranks} ranks run")
    if machine is None:
        machine = eng.Machine(program, nranks)
    elif machine.program is not program or machine.nranks != nranks:
        raise ValueError("machine was built for a different program or rank count")
    out = machine.run(step_budget, (spec.rank, int(spec.opcode_class), spec.k, spec.bit))
    crash = crash_from_out(out)
    if not out[eng.O_FIRED]:
        raise PreconditionError(
            f"k={spec.k} exceeds the number of {spec.opcode_class.label} instances "
            f"executed by rank {spec.rank}"
        )
    pc = int(out[eng.O_HPC])
    checksum_bits = None
    if crash is None:
        freg = checksum_register(program)
        checksum_bits = int(machine.fregs[0].view("int64")[freg]) & ((1 << 64) - 1)
    return TrialRecord(
        spec=spec,
        faulted_pc=pc,
        faulted_loc=program.debug[pc],
        original_bits=int(out[eng.O_ORIG]) & ((1 << 64) - 1),
        corrupted_bits=int(out[eng.O_BAD]) & ((1 << 64) - 1),
        outcome=None,
        checksum_bits=checksum_bits,
        steps=int(out[eng.O_STEPS]),
        crash=crash,
    )
