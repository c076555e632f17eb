"""BT-lite: block solve along independent lines of 5x5 blocks.

Three phases per line: a block matrix-vector product builds the right-hand
side, forward elimination sweeps the cells, back substitution sweeps them in
reverse. The 5-term dot products are unrolled, so the floating-point adds are
spread over many distinct instructions with no single hot spot.
"""

from __future__ import annotations

import numpy as np

from ._codegen import EPSILON, Emitter, randlc_stream

DEFAULTS = {"ncells": 8, "nlines": 4}
RANGES = {"ncells": (2, 256), "nlines": (1, 64)}
BS = 5


def problem(ncells: int, nlines: int) -> dict[str, np.ndarray]:
    m = ncells
    stream = iter(randlc_stream(BS * BS + nlines * m * (2 * BS + 2 * BS * BS)))

    def take(*shape):
        size = int(np.prod(shape))
        return np.array([next(stream) for _ in range(size)]).reshape(shape)

    bmat = take(BS, BS) - 0.5
    u = take(nlines, m, BS)
    f = take(nlines, m, BS)
    lower = (take(nlines, m, BS, BS) - 0.5) * 0.16
    upper = (take(nlines, m, BS, BS) - 0.5) * 0.16
    return {"B": bmat, "U": u, "F": f, "L": lower, "UP": upper}


def reference_checksum(ncells: int, nlines: int) -> float:
    """Solve every line with numpy block algebra and sum the solution."""
    pr = problem(ncells, nlines)
    total = 0.0
    for ln in range(nlines):
        rhs = pr["F"][ln] + pr["U"][ln] @ pr["B"].T
        y = np.zeros((ncells + 1, BS))
        for c in range(ncells):
            y[c + 1] = rhs[c] - pr["L"][ln, c] @ y[c]
        xs = np.zeros((ncells + 1, BS))
        for c in reversed(range(ncells)):
            xs[c] = y[c + 1] - pr["UP"][ln, c] @ xs[c + 1]
        total += xs[:ncells].sum()
    return float(total)


def generate(ncells: int = 8, nlines: int = 4) -> tuple[str, str, dict]:
    m = ncells
    pr = problem(m, nlines)
    BMAT = 16
    U = BMAT + BS * BS
    F = U + nlines * m * BS
    LM = F + nlines * m * BS
    UM = LM + nlines * m * BS * BS
    RHS = UM + nlines * m * BS * BS
    Y = RHS + m * BS  # cell c at Y + (c+1)*5; cell -1 stays zero
    X = Y + (m + 1) * BS  # cell c at X + c*5; cell m stays zero
    mem = X + (m + 1) * BS + 16
    golden = reference_checksum(m, nlines)

    e = Emitter("bt.src", [
        "; BT-lite kernel: block matvec, forward elimination, back substitution",
        f"; {nlines} lines x {m} cells of 5x5 blocks; line l runs on rank l mod nranks",
        "; generated by faultline.kernels.bt; do not edit by hand",
        f".mem {mem}",
        ".nranks 4",
        f".verify f31 {golden!r} {EPSILON!r}",
        ".entry main",
    ])
    e.data(BMAT, [float(v) for v in pr["B"].ravel()])
    e.data(U, [float(v) for v in pr["U"].ravel()])
    e.data(F, [float(v) for v in pr["F"].ravel()])
    e.data(LM, [float(v) for v in pr["L"].ravel()])
    e.data(UM, [float(v) for v in pr["UP"].ravel()])

    def row_loop(lbl: str) -> None:
        # r4 = i, r6 = 5*i, r12 = cell offset + i, r11 = block offset + 5*i
        e("li r4, 0", "li r6, 0")
        e.label(lbl)
        e("add r12, r5, r4", "add r7, r2, r5", "mul r11, r7, r13", "add r11, r11, r6")

    def row_end(lbl: str) -> None:
        e("addi r4, r4, 1", "addi r6, r6, 5", f"blt r4, r13, {lbl}")

    e.label("main")
    e.stmt("program bt")
    e.stmt("call mpi_comm_rank(me); call mpi_comm_size(nprocs)", 1)
    e("rank r0", "nranks r1", f"li r10, {nlines}", f"li r3, {m * BS}", f"li r13, {BS}")
    e.stmt("chk = 0.0d0", 1)
    e("fmovi f20, 0.0")
    e.stmt(f"do l = me, {nlines - 1}, nprocs", 1)
    e("mov r9, r0", "bge r9, r10, done")
    e.label("line")
    e("mul r2, r9, r3")

    # phase 1: rhs(c) = f(c) + B u(c)
    e.stmt("do c = 1, ncells", 2)
    e("li r5, 0")
    e.label("p1_cell")
    e.stmt("do i = 1, 5", 3)
    row_loop("p1_row")
    e("add r8, r2, r12")
    e.stmt("s = f(i,c)", 4)
    e(f"fld f1, [r8+{F}]")
    for k in range(BS):
        e.stmt(f"s = s + bmat(i,{k + 1})*u({k + 1},c)", 4)
        e(f"fld f2, [r6+{BMAT + k}]", f"fld f3, [r7+{U + k}]", "fmul f4, f2, f3", "fadd f1, f1, f4")
    e.stmt("rhs(i,c) = s", 4)
    e(f"fst f1, [r12+{RHS}]")
    e.stmt("enddo", 3)
    row_end("p1_row")
    e.stmt("enddo", 2)
    e("addi r5, r5, 5", "blt r5, r3, p1_cell")

    # phase 2: y(c) = rhs(c) - L(c) y(c-1)
    e.stmt("do c = 1, ncells", 2)
    e("li r5, 0")
    e.label("p2_cell")
    e.stmt("do i = 1, 5", 3)
    row_loop("p2_row")
    e.stmt("d = lhs_a(i,1,c)*y(1,c-1)", 4)
    e(f"fld f2, [r11+{LM}]", f"fld f3, [r5+{Y}]", "fmul f1, f2, f3")
    for k in range(1, BS):
        e.stmt(f"d = d + lhs_a(i,{k + 1},c)*y({k + 1},c-1)", 4)
        e(f"fld f2, [r11+{LM + k}]", f"fld f3, [r5+{Y + k}]", "fmul f4, f2, f3", "fadd f1, f1, f4")
    e.stmt("y(i,c) = rhs(i,c) - d", 4)
    e(f"fld f2, [r12+{RHS}]", "fsub f2, f2, f1", f"fst f2, [r12+{Y + BS}]")
    e.stmt("enddo", 3)
    row_end("p2_row")
    e.stmt("enddo", 2)
    e("addi r5, r5, 5", "blt r5, r3, p2_cell")

    # phase 3: x(c) = y(c) - U(c) x(c+1), c descending
    e.stmt("do c = ncells, 1, -1", 2)
    e(f"addi r5, r3, -{BS}", "li r14, 0")
    e.label("p3_cell")
    e.stmt("do i = 1, 5", 3)
    row_loop("p3_row")
    e.stmt("d = lhs_c(i,1,c)*x(1,c+1)", 4)
    e(f"fld f2, [r11+{UM}]", f"fld f3, [r5+{X + BS}]", "fmul f1, f2, f3")
    for k in range(1, BS):
        e.stmt(f"d = d + lhs_c(i,{k + 1},c)*x({k + 1},c+1)", 4)
        e(f"fld f2, [r11+{UM + k}]", f"fld f3, [r5+{X + BS + k}]", "fmul f4, f2, f3", "fadd f1, f1, f4")
    e.stmt("x(i,c) = y(i,c) - d", 4)
    e(f"fld f2, [r12+{Y + BS}]", "fsub f2, f2, f1", f"fst f2, [r12+{X}]")
    e.stmt("enddo", 3)
    row_end("p3_row")
    e.stmt("enddo", 2)
    e(f"addi r5, r5, -{BS}", "bge r5, r14, p3_cell")

    e.stmt("do j = 1, 5*ncells: chk = chk + x(j)", 2)
    e("li r4, 0")
    e.label("chk")
    e(f"fld f2, [r4+{X}]", "fadd f20, f20, f2", "addi r4, r4, 1", "blt r4, r3, chk")
    e.stmt("enddo", 1)
    e("add r9, r9, r1", "blt r9, r10, line")
    e.label("done")
    e.stmt("call allreduce_sum(chk)", 1)
    e("allreduce_sum f31, f20")
    e.stmt("end", 1)
    e("halt")
    layout = {"RHS": RHS, "Y": Y, "X": X}
    return e.text(), e.source_text(), {"golden": golden, "layout": layout}
