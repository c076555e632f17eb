"""CG: conjugate gradient on the 2-D five-point Laplacian.

Rows are block-partitioned over ranks. Dot products use ``allreduce_sum``.
The matrix-vector product only touches locally owned columns; when more than
one rank runs, a guarded section exchanges the cross-block couplings and adds
them into ``q`` (the same role ``l2npcols`` plays in NPB CG, where the serial
run skips the reduction-exchange code entirely).
"""

from __future__ import annotations

import numpy as np

from ._codegen import EPSILON, Emitter, randlc_stream

DEFAULTS = {"grid": 16, "niter": 15}
RANGES = {"grid": (2, 64), "niter": (1, 200)}


def laplacian_csr(g: int) -> tuple[list[int], list[int], list[float]]:
    n = g * g
    rowptr, col, val = [0], [], []
    for i in range(n):
        row, c = divmod(i, g)
        for j, v in (
            (i - g, -1.0) if row > 0 else (None, 0.0),
            (i - 1, -1.0) if c > 0 else (None, 0.0),
            (i, 4.0),
            (i + 1, -1.0) if c < g - 1 else (None, 0.0),
            (i + g, -1.0) if row < g - 1 else (None, 0.0),
        ):
            if j is not None:
                col.append(j)
                val.append(v)
        rowptr.append(len(col))
    return rowptr, col, val


def rhs_vector(n: int) -> list[float]:
    return randlc_stream(n)


def reference_checksum(g: int, niter: int) -> float:
    """Independent numpy evaluation of the CG checksum (dense matrix algebra)."""
    rowptr, col, val = laplacian_csr(g)
    n = g * g
    a = np.zeros((n, n))
    for i in range(n):
        for e in range(rowptr[i], rowptr[i + 1]):
            a[i, col[e]] = val[e]
    b = np.array(rhs_vector(n))
    x = np.zeros(n)
    r = b.copy()
    p = b.copy()
    rho = r @ r
    for _ in range(niter):
        q = a @ p
        alpha = rho / (p @ q)
        x = x + alpha * p
        r = r - alpha * q
        rho_new = r @ r
        beta = rho_new / rho
        rho = rho_new
        p = r + beta * p
    rq = (x @ (a @ x)) / (x @ x)
    return float(rq + rho)


def generate(grid: int = 16, niter: int = 15) -> tuple[str, str, dict]:
    g = grid
    n = g * g
    rowptr, col, val = laplacian_csr(g)
    nnz = len(col)
    CONST = 0
    ROWPTR = 16
    COL = ROWPTR + n + 1
    VAL = COL + nnz
    B = VAL + nnz
    X = B + n
    R = X + n
    P = R + n
    Q = P + n
    RHO = 8
    mem = Q + n + 16

    golden = reference_checksum(g, niter)
    e = Emitter("cg.src", [
        "; CG kernel: conjugate gradient on the 2-D five-point Laplacian",
        f"; grid {g}x{g} (n = {n}), {niter} iterations, rows block-partitioned over ranks",
        "; generated by faultline.kernels.cg; do not edit by hand",
        f".mem {mem}",
        ".nranks 4",
        f".verify f31 {golden!r} {EPSILON!r}",
        ".entry main",
    ])
    e.data(CONST, [-1.0])
    e.data(ROWPTR, rowptr)
    e.data(COL, col)
    e.data(VAL, val)
    e.data(B, rhs_vector(n))

    def loop_own_rows(lbl: str) -> None:
        e("mov r4, r2")
        e.label(lbl)

    def end_own_rows(lbl: str) -> None:
        e("addi r4, r4, 1", f"blt r4, r3, {lbl}")

    def dot(lbl: str, u: int, v: int, dst: str, what: str, ind: int = 1) -> None:
        e.stmt(f"{what} = 0.0d0", ind)
        e(f"fmovi {dst}, 0.0")
        e.stmt("do j = lo, hi", ind)
        loop_own_rows(lbl)
        e.stmt(f"{what} = {what} + {_vname(u, locals_map)}(j)*{_vname(v, locals_map)}(j)", ind + 1)
        e(f"fld f2, [r4+{u}]", f"fld f3, [r4+{v}]", "fmul f4, f2, f3", f"fadd {dst}, {dst}, f4")
        e.stmt("enddo", ind)
        end_own_rows(lbl)
        e.stmt(f"call allreduce_sum({what})", ind)
        e(f"allreduce_sum {dst}, {dst}")

    locals_map = {X: "x", R: "r", P: "p", Q: "q", B: "b"}

    e.label("main")
    e.stmt("program cg")
    e.stmt("call mpi_comm_rank(me); call mpi_comm_size(nprocs)", 1)
    e("rank r0", "nranks r1")
    e.stmt("nrows = n / nprocs; lo = me*nrows; hi = lo + nrows", 1)
    e(f"li r8, {n}", "div r8, r8, r1", "mul r2, r0, r8", "add r3, r2, r8")
    e(f"fld f0, [{CONST}]")
    e.stmt("do j = lo, hi", 1)
    loop_own_rows("init")
    e.stmt("r(j) = b(j); p(j) = b(j)", 2)
    e(f"fld f2, [r4+{B}]", f"fst f2, [r4+{R}]", f"fst f2, [r4+{P}]")
    e.stmt("enddo", 1)
    end_own_rows("init")
    dot("rho0", R, R, "f5", "rho")

    e.stmt(f"do it = 1, {niter}", 1)
    e("li r9, 0", f"li r10, {niter}")
    e.label("iter")
    e.stmt("call matvec(p, q)", 2)
    e("call matvec")
    dot("dot_pq", P, Q, "f8", "d", 2)
    e.stmt("alpha = rho / d", 2)
    e("fdiv f6, f5, f8")
    e.stmt("do j = lo, hi", 2)
    loop_own_rows("axpy")
    e.stmt("x(j) = x(j) + alpha*p(j)", 3)
    e(f"fld f2, [r4+{P}]", "fmul f2, f6, f2", f"fld f3, [r4+{X}]", "fadd f3, f3, f2", f"fst f3, [r4+{X}]")
    e.stmt("r(j) = r(j) - alpha*q(j)", 3)
    e(f"fld f2, [r4+{Q}]", "fmul f2, f6, f2", f"fld f3, [r4+{R}]", "fsub f3, f3, f2", f"fst f3, [r4+{R}]")
    e.stmt("enddo", 2)
    end_own_rows("axpy")
    dot("dot_rr", R, R, "f9", "rho_new", 2)
    e.stmt("beta = rho_new / rho; rho = rho_new", 2)
    e("fdiv f7, f9, f5", f"fst f9, [{RHO}]", f"fld f5, [{RHO}]")
    e.stmt("do j = lo, hi", 2)
    loop_own_rows("pupd")
    e.stmt("p(j) = r(j) + beta*p(j)", 3)
    e(f"fld f2, [r4+{P}]", "fmul f2, f7, f2", f"fld f3, [r4+{R}]", "fadd f2, f3, f2", f"fst f2, [r4+{P}]")
    e.stmt("enddo", 2)
    end_own_rows("pupd")
    e.stmt("enddo", 1)
    e("addi r9, r9, 1", "blt r9, r10, iter")

    e.stmt("p = x; call matvec(p, q)", 1)
    loop_own_rows("cpx")
    e(f"fld f2, [r4+{X}]", f"fst f2, [r4+{P}]")
    end_own_rows("cpx")
    e("call matvec")
    dot("dot_xax", X, Q, "f10", "xax")
    dot("dot_xx", X, X, "f11", "xx")
    e.stmt("zeta = xax / xx + rho", 1)
    e("fdiv f12, f10, f11", "fmul f13, f0, f5", "fsub f31, f12, f13")
    e.stmt("end", 1)
    e("halt")

    # subroutine matvec: q(lo:hi) = A(lo:hi, lo:hi) p, plus cross-block terms
    e.label("matvec")
    e.stmt("subroutine matvec(p, q)")
    e.stmt("do j = lo, hi", 1)
    loop_own_rows("mv_row")
    e.stmt("sum = 0.0d0", 2)
    e(f"ld r5, [r4+{ROWPTR}]", f"ld r6, [r4+{ROWPTR + 1}]", "fmovi f1, 0.0")
    e.stmt("do k = rowstr(j), rowstr(j+1)-1", 2)
    e.label("mv_nz")
    e("bge r5, r6, mv_store", f"ld r7, [r5+{COL}]")
    e.stmt("if (colidx(k) .lt. lo .or. colidx(k) .ge. hi) cycle", 3)
    e("blt r7, r2, mv_skip", "bge r7, r3, mv_skip")
    e.stmt("sum = sum + a(k)*p(colidx(k))", 3)
    e(f"fld f2, [r5+{VAL}]", f"fld f3, [r7+{P}]", "fmul f4, f2, f3")
    e.label("mv_acc")
    e("fadd f1, f1, f4")
    e.stmt("enddo", 2)
    e.label("mv_skip")
    e("addi r5, r5, 1", "jmp mv_nz")
    e.label("mv_store")
    e.stmt("q(j) = sum", 2)
    e(f"fst f1, [r4+{Q}]")
    e.stmt("enddo", 1)
    end_own_rows("mv_row")

    e.stmt("if (nprocs .gt. 1) then", 1)
    e("li r8, 1", "bge r8, r1, mv_done")
    e.label("par_begin")
    e.stmt("if (me .gt. 0) then", 2)
    e("li r8, 0", "bge r8, r0, skip_up")
    e.stmt(f"do j = lo, lo+{g - 1}: send(-p(j), me-1)", 3)
    e("addi r13, r0, -1", f"addi r14, r2, {g}")
    loop_own_rows("up_send")
    e(f"fld f3, [r4+{P}]", "fmul f4, f0, f3", "send r13, f4", "addi r4, r4, 1", "blt r4, r14, up_send")
    e.label("skip_up")
    e.stmt("if (me .lt. nprocs-1) then", 2)
    e("addi r8, r0, 1", "bge r8, r1, skip_dn")
    e.stmt(f"do j = hi-{g}, hi-1: send(-p(j), me+1)", 3)
    e("mov r13, r8", f"addi r4, r3, -{g}")
    e.label("dn_send")
    e(f"fld f3, [r4+{P}]", "fmul f4, f0, f3", "send r13, f4", "addi r4, r4, 1", "blt r4, r3, dn_send")
    e.label("skip_dn")
    e.stmt("if (me .lt. nprocs-1) then", 2)
    e("addi r8, r0, 1", "bge r8, r1, skip_from_dn")
    e.stmt(f"do j = hi-{g}, hi-1", 3)
    e("mov r13, r8", f"addi r4, r3, -{g}")
    e.label("from_dn")
    e.stmt("call recv(w, me+1); q(j) = q(j) + w", 4)
    e("recv f4, r13", f"fld f1, [r4+{Q}]")
    e.label("combine_dn")
    e("fadd f1, f1, f4", f"fst f1, [r4+{Q}]", "addi r4, r4, 1", "blt r4, r3, from_dn")
    e.label("skip_from_dn")
    e.stmt("if (me .gt. 0) then", 2)
    e("li r8, 0", "bge r8, r0, skip_from_up")
    e.stmt(f"do j = lo, lo+{g - 1}", 3)
    e("addi r13, r0, -1", f"addi r14, r2, {g}")
    loop_own_rows("from_up")
    e.stmt("call recv(w, me-1); q(j) = q(j) + w", 4)
    e("recv f4, r13", f"fld f1, [r4+{Q}]")
    e.label("combine_up")
    e("fadd f1, f1, f4", f"fst f1, [r4+{Q}]", "addi r4, r4, 1", "blt r4, r14, from_up")
    e.label("skip_from_up")
    e.label("par_end")
    e.label("mv_done")
    e.stmt("end", 1)
    e("ret")

    layout = {"ROWPTR": ROWPTR, "COL": COL, "VAL": VAL, "B": B, "X": X, "R": R, "P": P, "Q": Q}
    return e.text(), e.source_text(), {"golden": golden, "layout": layout, "nnz": nnz}


def _vname(addr: int, names: dict[int, str]) -> str:
    return names[addr]
