"""Instruction set: opcodes, operand signatures, opcode classes and bit helpers."""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

NUM_FREGS = 32
NUM_IREGS = 16
LINK_REG = 15  # call writes the return pc here; ret jumps to it

MASK64 = (1 << 64) - 1
INT64_MIN = -(1 << 63)


class Op(enum.IntEnum):
    # integer
    ADD = 0
    SUB = 1
    MUL = 2
    DIV = 3
    ADDI = 4
    LD = 5
    ST = 6
    MOV = 7
    LI = 8
    # float
    FADD = 9
    FMUL = 10
    FSUB = 11
    FDIV = 12
    FLD = 13
    FST = 14
    FMOVI = 15
    # control
    BEQ = 16
    BNE = 17
    BLT = 18
    BGE = 19
    JMP = 20
    CALL = 21
    RET = 22
    HALT = 23
    # messaging
    SEND = 24
    RECV = 25
    ALLREDUCE_SUM = 26
    BARRIER = 27
    RANK = 28
    NRANKS = 29

    @property
    def mnemonic(self) -> str:
        return self.name.lower()


class OpcodeClass(enum.IntEnum):
    """Injectable floating-point arithmetic families."""

    FADD = 0
    FMUL = 1
    FSUB = 2
    FDIV = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text: str) -> OpcodeClass:
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown opcode class {text!r}") from None


OPCODE_CLASS = {
    Op.FADD: OpcodeClass.FADD,
    Op.FMUL: OpcodeClass.FMUL,
    Op.FSUB: OpcodeClass.FSUB,
    Op.FDIV: OpcodeClass.FDIV,
}

# Operand kinds: r = integer register, f = float register, i = integer immediate,
# x = float immediate (stored as raw bits), t = branch target pc,
# m = memory operand (expands to base register + offset; base -1 means absolute).
SIGNATURES: dict[Op, str] = {
    Op.ADD: "rrr",
    Op.SUB: "rrr",
    Op.MUL: "rrr",
    Op.DIV: "rrr",
    Op.ADDI: "rri",
    Op.LD: "rm",
    Op.ST: "rm",
    Op.MOV: "rr",
    Op.LI: "ri",
    Op.FADD: "fff",
    Op.FMUL: "fff",
    Op.FSUB: "fff",
    Op.FDIV: "fff",
    Op.FLD: "fm",
    Op.FST: "fm",
    Op.FMOVI: "fx",
    Op.BEQ: "rrt",
    Op.BNE: "rrt",
    Op.BLT: "rrt",
    Op.BGE: "rrt",
    Op.JMP: "t",
    Op.CALL: "t",
    Op.RET: "",
    Op.HALT: "",
    Op.SEND: "rf",
    Op.RECV: "fr",
    Op.ALLREDUCE_SUM: "ff",
    Op.BARRIER: "",
    Op.RANK: "r",
    Op.NRANKS: "r",
}

MNEMONICS = {op.mnemonic: op for op in Op}


def arg_width(kind: str) -> int:
    return 2 if kind == "m" else 1


def arity(op: Op) -> int:
    return sum(arg_width(k) for k in SIGNATURES[op])


@dataclass(frozen=True)
class Instruction:
    """One decoded instruction.

    ``args`` is the flattened operand tuple following ``SIGNATURES[opcode]``;
    a memory operand contributes two entries (base register, word offset).
    """

    pc: int
    opcode: Op
    args: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if len(self.args) != arity(self.opcode):
            raise ValueError(
                f"{self.opcode.mnemonic} takes {arity(self.opcode)} encoded args, got {len(self.args)}"
            )

    @property
    def opcode_class(self) -> OpcodeClass | None:
        return OPCODE_CLASS.get(self.opcode)

    def targets(self) -> list[int]:
        out, i = [], 0
        for kind in SIGNATURES[self.opcode]:
            if kind == "t":
                out.append(self.args[i])
            i += arg_width(kind)
        return out


_D = struct.Struct("<d")
_Q = struct.Struct("<Q")


def float_to_bits(x: float) -> int:
    """Raw binary64 pattern of ``x`` as an unsigned 64-bit integer."""
    return _Q.unpack(_D.pack(x))[0]


def bits_to_float(bits: int) -> float:
    return _D.unpack(_Q.pack(bits & MASK64))[0]


def to_signed64(value: int) -> int:
    value &= MASK64
    return value - (1 << 64) if value >> 63 else value


def apply_bitflip(bits: int, bit: int) -> int:
    """Flip bit ``bit`` (0 = mantissa LSB, 63 = sign) of a 64-bit pattern."""
    if not 0 <= bit <= 63:
        raise ValueError(f"bit index {bit} outside 0..63")
    if not 0 <= bits <= MASK64:
        raise ValueError("bits must be an unsigned 64-bit pattern")
    return bits ^ (1 << bit)


def format_float_imm(bits: int) -> str:
    """Render float-immediate bits so that parsing recovers them exactly."""
    value = bits_to_float(bits)
    if value == value and float_to_bits(value) == bits:
        text = repr(value)
        if float_to_bits(float(text)) == bits:
            return text
    return f"0x{bits:016X}"
