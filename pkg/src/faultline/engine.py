"""Compiled group engine.

Same semantics as ``vm.step`` driven by ``mpsim``'s reference scheduler
(strict round-robin, FIFO channels, rank-ordered allreduce), compiled with
numba so that ten-thousand-trial campaigns finish in minutes on one core.
Agreement with the reference engine is asserted bit-for-bit in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .asm import Program
from .isa import NUM_FREGS, NUM_IREGS, Op

ST_RUNNING, ST_HALTED, ST_TRAPPED, ST_RECV, ST_COLL = 0, 1, 2, 3, 4
OUT_COMPLETED, OUT_TRAP, OUT_DEADLOCK, OUT_BUDGET = 0, 1, 2, 3
TRAP_OOB, TRAP_DIVZERO = 0, 1
COLL_NONE, COLL_ALLREDUCE, COLL_BARRIER = -1, 0, 1

# slots of the ``out`` vector
O_KIND, O_RANK, O_PC, O_TRAP, O_STEPS, O_FIRED, O_HPC, O_ORIG, O_BAD, O_PENDING = range(10)
OUT_LEN = 10

_INT64_MIN = np.int64(-(1 << 63))

_ADD, _SUB, _MUL, _DIV, _ADDI, _LD, _ST, _MOV, _LI = (
    int(Op.ADD), int(Op.SUB), int(Op.MUL), int(Op.DIV), int(Op.ADDI),
    int(Op.LD), int(Op.ST), int(Op.MOV), int(Op.LI),
)
_FADD, _FMUL, _FSUB, _FDIV, _FLD, _FST, _FMOVI = (
    int(Op.FADD), int(Op.FMUL), int(Op.FSUB), int(Op.FDIV),
    int(Op.FLD), int(Op.FST), int(Op.FMOVI),
)
_BEQ, _BNE, _BLT, _BGE, _JMP, _CALL, _RET, _HALT = (
    int(Op.BEQ), int(Op.BNE), int(Op.BLT), int(Op.BGE),
    int(Op.JMP), int(Op.CALL), int(Op.RET), int(Op.HALT),
)
_SEND, _RECV, _ALLRED, _BARRIER, _RANK, _NRANKS = (
    int(Op.SEND), int(Op.RECV), int(Op.ALLREDUCE_SUM), int(Op.BARRIER),
    int(Op.RANK), int(Op.NRANKS),
)


@njit(cache=True)
def _tdiv(x, y):
    if x == _INT64_MIN and y == -1:
        return _INT64_MIN
    q = x // y
    if q < 0 and q * y != x:
        q += 1
    return q


@njit(cache=True, error_model="numpy")
def run_group_kernel(op, a0, a1, a2, entry, mem0, nranks, budget,
                     h_rank, h_cls, h_k, h_bit,
                     fregs, iregs, mem, pcs, steps, counters, status, out):
    """Run all ranks to completion or crash; state arrays are overwritten."""
    n = op.shape[0]
    msize = mem0.shape[0]
    fregs_i = fregs.view(np.int64)
    memf = mem.view(np.float64)
    for r in range(nranks):
        for j in range(fregs.shape[1]):
            fregs[r, j] = 0.0
        for j in range(iregs.shape[1]):
            iregs[r, j] = 0
        for j in range(msize):
            mem[r, j] = mem0[j]
        pcs[r] = entry
        steps[r] = 0
        for j in range(4):
            counters[r, j] = 0
        status[r] = ST_RUNNING
    for j in range(OUT_LEN):
        out[j] = 0

    # per (src, dst) FIFO channels, grown on demand
    cap = 16
    chan = np.empty((nranks * nranks, cap), dtype=np.float64)
    head = np.zeros(nranks * nranks, dtype=np.int64)
    tail = np.zeros(nranks * nranks, dtype=np.int64)
    blocked_src = np.zeros(nranks, dtype=np.int64)
    coll_kind = np.full(nranks, -1, dtype=np.int64)
    coll_val = np.zeros(nranks, dtype=np.float64)
    coll_dst = np.zeros(nranks, dtype=np.int64)
    arrived = 0
    halted = 0
    hook_on = h_rank >= 0

    crashed = False
    while not crashed:
        progressed = False
        for r in range(nranks):
            st = status[r]
            if st == ST_HALTED or st == ST_COLL:
                continue
            if st == ST_RECV:
                ch = blocked_src[r] * nranks + r
                if head[ch] == tail[ch]:
                    continue
                fregs[r, a0[pcs[r]]] = chan[ch, head[ch] % cap]
                head[ch] += 1
                status[r] = ST_RUNNING
                pcs[r] += 1
                steps[r] += 1
                progressed = True
                continue
            if steps[r] >= budget:
                out[O_KIND] = OUT_BUDGET
                out[O_RANK] = r
                out[O_PC] = pcs[r]
                crashed = True
                break
            progressed = True
            pc = pcs[r]
            if pc < 0 or pc >= n:
                status[r] = ST_TRAPPED
                out[O_KIND] = OUT_TRAP
                out[O_RANK] = r
                out[O_PC] = pc
                out[O_TRAP] = TRAP_OOB
                crashed = True
                break
            o = op[pc]
            x = a0[pc]
            y = a1[pc]
            z = a2[pc]
            if o <= _FDIV and o >= _FADD:
                fa = fregs[r, y]
                fb = fregs[r, z]
                if o == _FADD:
                    res = fa + fb
                elif o == _FMUL:
                    res = fa * fb
                elif o == _FSUB:
                    res = fa - fb
                else:
                    res = fa / fb
                cls = o - _FADD
                cnt = counters[r, cls] + 1
                counters[r, cls] = cnt
                fregs[r, x] = res
                if hook_on and r == h_rank and cls == h_cls and cnt == h_k:
                    orig = fregs_i[r, x]
                    bad = orig ^ (np.int64(1) << np.int64(h_bit))
                    fregs_i[r, x] = bad
                    out[O_FIRED] += 1
                    out[O_HPC] = pc
                    out[O_ORIG] = orig
                    out[O_BAD] = bad
                pcs[r] = pc + 1
                steps[r] += 1
            elif o == _FLD or o == _FST or o == _LD or o == _ST:
                addr = z if y < 0 else iregs[r, y] + z
                if addr < 0 or addr >= msize:
                    status[r] = ST_TRAPPED
                    out[O_KIND] = OUT_TRAP
                    out[O_RANK] = r
                    out[O_PC] = pc
                    out[O_TRAP] = TRAP_OOB
                    crashed = True
                    break
                if o == _FLD:
                    fregs[r, x] = memf[r, addr]
                elif o == _FST:
                    memf[r, addr] = fregs[r, x]
                elif o == _LD:
                    iregs[r, x] = mem[r, addr]
                else:
                    mem[r, addr] = iregs[r, x]
                pcs[r] = pc + 1
                steps[r] += 1
            elif o == _ADDI:
                iregs[r, x] = iregs[r, y] + z
                pcs[r] = pc + 1
                steps[r] += 1
            elif o >= _BEQ and o <= _BGE:
                p = iregs[r, x]
                q = iregs[r, y]
                if o == _BEQ:
                    taken = p == q
                elif o == _BNE:
                    taken = p != q
                elif o == _BLT:
                    taken = p < q
                else:
                    taken = p >= q
                pcs[r] = z if taken else pc + 1
                steps[r] += 1
            elif o == _ADD:
                iregs[r, x] = iregs[r, y] + iregs[r, z]
                pcs[r] = pc + 1
                steps[r] += 1
            elif o == _SUB:
                iregs[r, x] = iregs[r, y] - iregs[r, z]
                pcs[r] = pc + 1
                steps[r] += 1
            elif o == _MUL:
                iregs[r, x] = iregs[r, y] * iregs[r, z]
                pcs[r] = pc + 1
                steps[r] += 1
            elif o == _DIV:
                if iregs[r, z] == 0:
                    status[r] = ST_TRAPPED
                    out[O_KIND] = OUT_TRAP
                    out[O_RANK] = r
                    out[O_PC] = pc
                    out[O_TRAP] = TRAP_DIVZERO
                    crashed = True
                    break
                iregs[r, x] = _tdiv(iregs[r, y], iregs[r, z])
                pcs[r] = pc + 1
                steps[r] += 1
            elif o == _MOV:
                iregs[r, x] = iregs[r, y]
                pcs[r] = pc + 1
                steps[r] += 1
            elif o == _LI:
                iregs[r, x] = y
                pcs[r] = pc + 1
                steps[r] += 1
            elif o == _FMOVI:
                fregs_i[r, x] = y
                pcs[r] = pc + 1
                steps[r] += 1
            elif o == _JMP:
                pcs[r] = x
                steps[r] += 1
            elif o == _CALL:
                iregs[r, 15] = pc + 1
                pcs[r] = x
                steps[r] += 1
            elif o == _RET:
                t = iregs[r, 15]
                if t < 0 or t >= n:
                    status[r] = ST_TRAPPED
                    out[O_KIND] = OUT_TRAP
                    out[O_RANK] = r
                    out[O_PC] = pc
                    out[O_TRAP] = TRAP_OOB
                    crashed = True
                    break
                pcs[r] = t
                steps[r] += 1
            elif o == _HALT:
                status[r] = ST_HALTED
                steps[r] += 1
                halted += 1
            elif o == _SEND or o == _RECV:
                peer = iregs[r, x] if o == _SEND else iregs[r, y]
                if peer < 0 or peer >= nranks or peer == r:
                    status[r] = ST_TRAPPED
                    out[O_KIND] = OUT_TRAP
                    out[O_RANK] = r
                    out[O_PC] = pc
                    out[O_TRAP] = TRAP_OOB
                    crashed = True
                    break
                if o == _SEND:
                    ch = r * nranks + peer
                    if tail[ch] - head[ch] == cap:
                        bigger = np.empty((nranks * nranks, cap * 2), dtype=np.float64)
                        for c in range(nranks * nranks):
                            for i in range(head[c], tail[c]):
                                bigger[c, i % (cap * 2)] = chan[c, i % cap]
                        chan = bigger
                        cap *= 2
                    chan[ch, tail[ch] % cap] = fregs[r, y]
                    tail[ch] += 1
                    pcs[r] = pc + 1
                    steps[r] += 1
                else:
                    ch = peer * nranks + r
                    if head[ch] == tail[ch]:
                        status[r] = ST_RECV
                        blocked_src[r] = peer
                    else:
                        fregs[r, x] = chan[ch, head[ch] % cap]
                        head[ch] += 1
                        pcs[r] = pc + 1
                        steps[r] += 1
            elif o == _ALLRED or o == _BARRIER:
                status[r] = ST_COLL
                if o == _ALLRED:
                    coll_kind[r] = COLL_ALLREDUCE
                    coll_val[r] = fregs[r, y]
                    coll_dst[r] = x
                else:
                    coll_kind[r] = COLL_BARRIER
                arrived += 1
                if arrived == nranks:
                    same = True
                    for i in range(1, nranks):
                        if coll_kind[i] != coll_kind[0]:
                            same = False
                    if not same:
                        out[O_KIND] = OUT_DEADLOCK
                        out[O_RANK] = r
                        out[O_PC] = pc
                        crashed = True
                        break
                    total = coll_val[0]
                    for i in range(1, nranks):
                        total = total + coll_val[i]
                    for i in range(nranks):
                        if coll_kind[i] == COLL_ALLREDUCE:
                            fregs[i, coll_dst[i]] = total
                        coll_kind[i] = COLL_NONE
                        status[i] = ST_RUNNING
                        pcs[i] += 1
                        steps[i] += 1
                    arrived = 0
            elif o == _RANK:
                iregs[r, x] = r
                pcs[r] = pc + 1
                steps[r] += 1
            elif o == _NRANKS:
                iregs[r, x] = nranks
                pcs[r] = pc + 1
                steps[r] += 1
        if crashed:
            break
        if halted == nranks:
            out[O_KIND] = OUT_COMPLETED
            break
        if not progressed:
            out[O_KIND] = OUT_DEADLOCK
            for i in range(nranks):
                if status[i] != ST_HALTED:
                    out[O_RANK] = i
                    out[O_PC] = pcs[i]
                    break
            break

    total = 0
    for r in range(nranks):
        total += steps[r]
    out[O_STEPS] = total
    pending = 0
    for c in range(nranks * nranks):
        pending += tail[c] - head[c]
    out[O_PENDING] = pending


@dataclass
class CompiledProgram:
    """Array encoding of a :class:`Program` for :func:`run_group_kernel`."""

    op: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    mem0: np.ndarray
    entry: int

    @classmethod
    def from_program(cls, program: Program) -> CompiledProgram:
        n = len(program.instructions)
        op = np.zeros(n, dtype=np.int64)
        args = np.zeros((3, n), dtype=np.int64)
        for ins in program.instructions:
            op[ins.pc] = int(ins.opcode)
            for j, v in enumerate(ins.args):
                args[j, ins.pc] = v
        mem0 = np.array(program.memory_image(), dtype=np.int64)
        return cls(op, args[0].copy(), args[1].copy(), args[2].copy(), mem0, program.entry)


class Machine:
    """Reusable state buffers for repeated runs of one program at one rank count."""

    def __init__(self, program: Program, nranks: int):
        if nranks < 1:
            raise ValueError("nranks must be >= 1")
        self.program = program
        self.code = _compiled(program)
        self.nranks = nranks
        m = self.code.mem0.shape[0]
        self.fregs = np.zeros((nranks, NUM_FREGS), dtype=np.float64)
        self.iregs = np.zeros((nranks, NUM_IREGS), dtype=np.int64)
        self.mem = np.zeros((nranks, m), dtype=np.int64)
        self.pcs = np.zeros(nranks, dtype=np.int64)
        self.steps = np.zeros(nranks, dtype=np.int64)
        self.counters = np.zeros((nranks, 4), dtype=np.int64)
        self.status = np.zeros(nranks, dtype=np.int64)
        self.out = np.zeros(OUT_LEN, dtype=np.int64)

    def run(self, budget: int, hook: tuple[int, int, int, int] | None = None) -> np.ndarray:
        """Run once. ``hook`` is ``(rank, class, k, bit)``; returns the ``out`` vector."""
        h_rank, h_cls, h_k, h_bit = hook if hook is not None else (-1, -1, -1, 0)
        c = self.code
        run_group_kernel(
            c.op, c.a0, c.a1, c.a2, c.entry, c.mem0, self.nranks, budget,
            h_rank, h_cls, h_k, h_bit,
            self.fregs, self.iregs, self.mem, self.pcs, self.steps,
            self.counters, self.status, self.out,
        )
        return self.out


_CACHE: dict[int, tuple[Program, CompiledProgram]] = {}


def _compiled(program: Program) -> CompiledProgram:
    hit = _CACHE.get(id(program))
    if hit is not None and hit[0] is program:
        return hit[1]
    code = CompiledProgram.from_program(program)
    if len(_CACHE) > 64:
        _CACHE.clear()
    _CACHE[id(program)] = (program, code)
    return code
