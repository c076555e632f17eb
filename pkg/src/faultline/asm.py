"""Two-pass assembler for the ``.fasm`` text format, plus listing output.

Grammar (line oriented, ``;`` starts a comment)::

    label:                      define a label (several may share a line)
    mnemonic op1, op2, op3      registers f0-f31 / r0-r15, immediates, labels
    [r3+12]  [r3-1]  [r3]  [40] memory operands (word addressed)
    .loc <file> <line>          source attribution for following instructions
    .data <addr> <word>...      initial memory words (ints, floats or 0x raw bits)
    .mem <words>                memory size per rank
    .verify <freg> <golden|AUTO> <rel-eps>
    .entry <label>
    .nranks <n>                 default rank count for parallel runs

Lines of a listing produced by :func:`format_listing` are accepted too: a
leading ``0x........`` address is ignored and a trailing ``file:line`` token
acts as a one-line ``.loc``.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

from .isa import (
    MNEMONICS,
    NUM_FREGS,
    NUM_IREGS,
    SIGNATURES,
    Instruction,
    Op,
    bits_to_float,
    float_to_bits,
    format_float_imm,
    to_signed64,
)

DEFAULT_MEM_WORDS = 4096
MAX_MEM_WORDS = 1 << 22

_LABEL_RE = re.compile(r"^([A-Za-z_.$][\w.$]*)\s*:(?!\d)")
_IDENT_RE = re.compile(r"^[A-Za-z_.$][\w.$]*$")
_ADDR_PREFIX_RE = re.compile(r"^0x[0-9A-Fa-f]+\s+")
_LOC_SUFFIX_RE = re.compile(r"\s(\S+):(\d+)\s*$")
_MEM_RE = re.compile(r"^\[\s*(?:(r\d+)\s*(?:([+-])\s*(\w+))?|([+-]?\w+))\s*\]$")


@dataclass(frozen=True, order=True)
class SourceLoc:
    file: str
    line: int

    def __post_init__(self) -> None:
        if not self.file:
            raise ValueError("source file name must be non-empty")
        if self.line < 1:
            raise ValueError("source line must be >= 1")

    def __str__(self) -> str:
        return f"{self.file}:{self.line}"


@dataclass(frozen=True)
class VerificationSpec:
    """Which float register holds the checksum and what it is compared to.

    ``golden`` is ``None`` for ``AUTO``: the fault-free value is the reference.
    """

    freg: int
    golden: float | None
    epsilon: float


@dataclass(frozen=True, eq=False)
class Program:
    instructions: tuple[Instruction, ...]
    debug: tuple[SourceLoc, ...]
    data: dict[int, int] = field(default_factory=dict)
    mem_words: int = DEFAULT_MEM_WORDS
    entry: int = 0
    nranks_default: int = 1
    verify: VerificationSpec | None = None
    name: str = "program"
    digest: str = ""
    labels: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.instructions)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Program):
            return NotImplemented
        return (
            self.instructions == other.instructions
            and self.debug == other.debug
            and self.data == other.data
            and self.mem_words == other.mem_words
            and self.entry == other.entry
            and self.nranks_default == other.nranks_default
            and self.verify == other.verify
        )

    __hash__ = object.__hash__

    def memory_image(self) -> list[int]:
        mem = [0] * self.mem_words
        for addr, word in self.data.items():
            mem[addr] = word
        return mem


class AsmError(ValueError):
    """Assembly failed; ``diagnostics`` holds ``(line, message)`` pairs."""

    def __init__(self, diagnostics: list[tuple[int, str]], filename: str = "<asm>"):
        self.diagnostics = diagnostics
        self.filename = filename
        text = "; ".join(f"{filename}:{line}: {msg}" for line, msg in diagnostics)
        super().__init__(text)


class _LineError(Exception):
    pass


def _parse_int(tok: str) -> int:
    tok = tok.strip()
    neg = tok.startswith("-")
    body = tok[1:] if tok[:1] in "+-" else tok
    if re.fullmatch(r"0[xX][0-9A-Fa-f]+", body):
        value = int(body, 16)
    elif re.fullmatch(r"\d+", body):
        value = int(body, 10)
    else:
        raise _LineError(f"bad integer {tok!r}")
    value = -value if neg else value
    if not -(1 << 63) <= value < (1 << 64):
        raise _LineError(f"integer {tok!r} does not fit in 64 bits")
    return to_signed64(value)


def _parse_float_bits(tok: str) -> int:
    tok = tok.strip()
    if re.fullmatch(r"0[xX][0-9A-Fa-f]{1,16}", tok):
        return int(tok, 16)
    try:
        return float_to_bits(float(tok))
    except ValueError:
        raise _LineError(f"bad float immediate {tok!r}") from None


def _parse_data_word(tok: str) -> int:
    """Integers stay integers; anything with a decimal point/exponent/inf/nan is binary64."""
    if re.fullmatch(r"[+-]?(0[xX][0-9A-Fa-f]+|\d+)", tok):
        return _parse_int(tok)
    return to_signed64(_parse_float_bits(tok))


def _reg(tok: str, prefix: str, limit: int) -> int:
    m = re.fullmatch(prefix + r"(\d+)", tok.strip())
    if not m or int(m.group(1)) >= limit:
        kind = "float" if prefix == "f" else "integer"
        raise _LineError(f"expected {kind} register, got {tok!r}")
    return int(m.group(1))


def _split_operands(text: str) -> list[str]:
    text = text.strip()
    return [] if not text else [t.strip() for t in text.split(",")]


def _strip_comment(line: str) -> str:
    pos = line.find(";")
    return line if pos < 0 else line[:pos]


@dataclass
class _Pending:
    pc: int
    opcode: Op
    operands: list[str]
    line: int


def assemble(source: str, filename: str = "program.fasm") -> Program:
    """Assemble ``source`` into a :class:`Program`; raises :class:`AsmError`."""
    diags: list[tuple[int, str]] = []
    labels: dict[str, int] = {}
    label_lines: dict[str, int] = {}
    pending: list[_Pending] = []
    debug: list[SourceLoc] = []
    data: dict[int, int] = {}
    data_lines: list[tuple[int, int]] = []
    mem_words: int | None = None
    entry_label: tuple[str, int] | None = None
    verify: VerificationSpec | None = None
    verify_line = 0
    nranks_default = 1
    cur_loc: SourceLoc | None = None

    for lineno, raw in enumerate(source.splitlines(), start=1):
        text = _strip_comment(raw).strip()
        if not text:
            continue
        try:
            one_shot: SourceLoc | None = None
            if _ADDR_PREFIX_RE.match(text):
                text = _ADDR_PREFIX_RE.sub("", text, count=1)
                m = _LOC_SUFFIX_RE.search(" " + text)
                if m:
                    one_shot = SourceLoc(m.group(1), int(m.group(2)))
                    text = (" " + text)[: m.start()].strip()
            while True:
                m = _LABEL_RE.match(text)
                if not m:
                    break
                name = m.group(1)
                if name in labels:
                    raise _LineError(
                        f"duplicate label {name!r} (first defined on line {label_lines[name]})"
                    )
                labels[name] = len(pending)
                label_lines[name] = lineno
                text = text[m.end():].strip()
            if not text:
                continue
            head, *tail = text.split(None, 1)
            rest = tail[0].strip() if tail else ""
            if head.startswith("."):
                toks = rest.split()
                if head == ".loc":
                    if len(toks) != 2:
                        raise _LineError(".loc takes <file> <line>")
                    line_no = _parse_int(toks[1])
                    if line_no < 1:
                        raise _LineError(".loc line must be >= 1")
                    cur_loc = SourceLoc(toks[0], line_no)
                elif head == ".data":
                    if len(toks) < 2:
                        raise _LineError(".data takes <addr> <word>...")
                    base = _parse_int(toks[0])
                    if base < 0:
                        raise _LineError("negative .data address")
                    for off, tok in enumerate(toks[1:]):
                        if base + off in data:
                            raise _LineError(f"memory word {base + off} initialized twice")
                        data[base + off] = _parse_data_word(tok)
                    data_lines.append((base + len(toks) - 2, lineno))
                elif head == ".mem":
                    if len(toks) != 1:
                        raise _LineError(".mem takes <words>")
                    mem_words = _parse_int(toks[0])
                    if not 1 <= mem_words <= MAX_MEM_WORDS:
                        raise _LineError(f".mem size must be in 1..{MAX_MEM_WORDS}")
                elif head == ".verify":
                    if verify is not None:
                        raise _LineError(f"duplicate .verify (first on line {verify_line})")
                    if len(toks) != 3:
                        raise _LineError(".verify takes <freg> <golden|AUTO> <rel-eps>")
                    freg = _reg(toks[0], "f", NUM_FREGS)
                    if toks[1].upper() == "AUTO":
                        golden = None
                    else:
                        golden = bits_to_float(_parse_float_bits(toks[1]))
                    try:
                        eps = float(toks[2])
                    except ValueError:
                        raise _LineError(f"bad epsilon {toks[2]!r}") from None
                    if not 0.0 < eps < 1.0:
                        raise _LineError("verification epsilon must lie in (0, 1)")
                    verify = VerificationSpec(freg, golden, eps)
                    verify_line = lineno
                elif head == ".entry":
                    if len(toks) != 1:
                        raise _LineError(".entry takes <label>")
                    entry_label = (toks[0], lineno)
                elif head == ".nranks":
                    if len(toks) != 1:
                        raise _LineError(".nranks takes <count>")
                    nranks_default = _parse_int(toks[0])
                    if nranks_default < 1:
                        raise _LineError(".nranks must be >= 1")
                else:
                    raise _LineError(f"unknown directive {head!r}")
                continue
            op = MNEMONICS.get(head.lower())
            if op is None:
                raise _LineError(f"unknown mnemonic {head!r}")
            operands = _split_operands(rest)
            want = len(SIGNATURES[op])
            if len(operands) != want or any(not o for o in operands):
                raise _LineError(f"{op.mnemonic} expects {want} operand(s), got {len(operands)}")
            pending.append(_Pending(len(pending), op, operands, lineno))
            debug.append(one_shot or cur_loc or SourceLoc(filename, lineno))
        except (_LineError, ValueError) as exc:
            diags.append((lineno, str(exc)))

    n = len(pending)
    instructions: list[Instruction] = []
    for p in pending:
        try:
            instructions.append(Instruction(p.pc, p.opcode, _encode(p, labels, n)))
        except _LineError as exc:
            diags.append((p.line, str(exc)))

    entry = 0
    if entry_label is not None:
        name, line = entry_label
        if name not in labels:
            diags.append((line, f"undefined label {name!r}"))
        elif labels[name] >= n:
            diags.append((line, f"entry label {name!r} does not precede an instruction"))
        else:
            entry = labels[name]

    size = mem_words if mem_words is not None else max(DEFAULT_MEM_WORDS, max(data, default=-1) + 1)
    for last, line in data_lines:
        if last >= size:
            diags.append((line, f".data word {last} outside memory of {size} words"))

    if diags:
        raise AsmError(sorted(diags), filename)
    return Program(
        instructions=tuple(instructions),
        debug=tuple(debug),
        data=data,
        mem_words=size,
        entry=entry,
        nranks_default=nranks_default,
        verify=verify,
        name=filename,
        digest=hashlib.sha256(source.encode("utf-8")).hexdigest(),
        labels=labels,
    )


def _encode(p: _Pending, labels: dict[str, int], n: int) -> tuple[int, ...]:
    args: list[int] = []
    for kind, tok in zip(SIGNATURES[p.opcode], p.operands):
        if kind == "r":
            args.append(_reg(tok, "r", NUM_IREGS))
        elif kind == "f":
            args.append(_reg(tok, "f", NUM_FREGS))
        elif kind == "i":
            args.append(_parse_int(tok))
        elif kind == "x":
            args.append(to_signed64(_parse_float_bits(tok)))
        elif kind == "t":
            if _IDENT_RE.match(tok):
                if tok not in labels:
                    raise _LineError(f"undefined label {tok!r}")
                target = labels[tok]
            else:
                target = _parse_int(tok)
            if not 0 <= target < n:
                raise _LineError(f"branch target {tok!r} is not a valid pc")
            args.append(target)
        elif kind == "m":
            m = _MEM_RE.match(tok.replace(" ", ""))
            if not m:
                raise _LineError(f"bad memory operand {tok!r}")
            if m.group(1):
                base = _reg(m.group(1), "r", NUM_IREGS)
                off = _parse_int(m.group(3)) if m.group(3) else 0
                if m.group(2) == "-":
                    off = -off
            else:
                base, off = -1, _parse_int(m.group(4))
            args.extend((base, off))
    return tuple(args)


def _format_operands(ins: Instruction) -> str:
    parts: list[str] = []
    i = 0
    for kind in SIGNATURES[ins.opcode]:
        v = ins.args[i]
        if kind == "r":
            parts.append(f"r{v}")
        elif kind == "f":
            parts.append(f"f{v}")
        elif kind == "i":
            parts.append(str(v))
        elif kind == "x":
            parts.append(format_float_imm(v & ((1 << 64) - 1)))
        elif kind == "t":
            parts.append(f"0x{v:08X}")
        elif kind == "m":
            base, off = v, ins.args[i + 1]
            if base < 0:
                parts.append(f"[{off}]")
            elif off == 0:
                parts.append(f"[r{base}]")
            else:
                parts.append(f"[r{base}{off:+d}]")
        i += 2 if kind == "m" else 1
    return ", ".join(parts)


def format_listing(program: Program) -> str:
    """One line per instruction: hex pc, mnemonic, operands, ``file:line``."""
    lines = []
    for ins, loc in zip(program.instructions, program.debug):
        ops = _format_operands(ins)
        ops_part = f"{ops}  " if ops else ""
        lines.append(f"0x{ins.pc:08X}  {ins.opcode.mnemonic:<7} {ops_part}{loc}")
    return "\n".join(lines) + ("\n" if lines else "")


def format_pc(pc: int) -> str:
    return f"0x{pc:08X}"
