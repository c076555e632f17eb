"""FT: batched radix-2 complex FFT.

Each rank transforms whole batches (batch b goes to rank b mod nranks), so
the per-batch instruction stream is the same code whether one rank runs all
batches or each rank runs one.
"""

from __future__ import annotations

import cmath

import numpy as np

from ._codegen import EPSILON, Emitter, randlc_stream

DEFAULTS = {"npoints": 64, "nbatch": 4}
RANGES = {"npoints": (4, 4096), "nbatch": (1, 64)}


def bitrev_table(n: int) -> list[int]:
    bits = n.bit_length() - 1
    return [int(format(i, f"0{bits}b")[::-1], 2) for i in range(n)]


def select_table(n: int) -> list[int]:
    return [(5 * t + 3) % n for t in range(min(16, n))]


def input_batches(n: int, nbatch: int) -> np.ndarray:
    vals = randlc_stream(2 * n * nbatch)
    arr = np.array(vals).reshape(nbatch, n, 2)
    return arr[..., 0] + 1j * arr[..., 1]


def reference_checksum(n: int, nbatch: int) -> float:
    """Checksum from numpy's FFT: sum of Re+Im over the selected outputs of every batch."""
    spec = np.fft.fft(input_batches(n, nbatch), axis=1)
    sel = select_table(n)
    return float(np.sum(spec[:, sel].real) + np.sum(spec[:, sel].imag))


def generate(npoints: int = 64, nbatch: int = 4) -> tuple[str, str, dict]:
    n = npoints
    if n & (n - 1):
        raise ValueError("npoints must be a power of two")
    half = n // 2
    sel = select_table(n)
    W_RE = 16
    W_IM = W_RE + half
    BR = W_IM + half
    SEL = BR + n
    X_RE = SEL + len(sel)
    X_IM = X_RE + n * nbatch
    A_RE = X_IM + n * nbatch
    A_IM = A_RE + n
    mem = A_IM + n + 16

    tw = [cmath.exp(-2j * cmath.pi * k / n) for k in range(half)]
    x = input_batches(n, nbatch)
    golden = reference_checksum(n, nbatch)

    e = Emitter("ft.src", [
        "; FT kernel: batched radix-2 decimation-in-time complex FFT",
        f"; {n} points x {nbatch} batches; batch b runs on rank b mod nranks",
        "; generated by faultline.kernels.ft; do not edit by hand",
        f".mem {mem}",
        ".nranks 4",
        f".verify f31 {golden!r} {EPSILON!r}",
        ".entry main",
    ])
    e.data(W_RE, [float(w.real) for w in tw])
    e.data(W_IM, [float(w.imag) for w in tw])
    e.data(BR, bitrev_table(n))
    e.data(SEL, sel)
    e.data(X_RE, [float(v) for v in x.real.ravel()])
    e.data(X_IM, [float(v) for v in x.imag.ravel()])

    e.label("main")
    e.stmt("program ft")
    e.stmt("call mpi_comm_rank(me); call mpi_comm_size(nprocs)", 1)
    e("rank r0", "nranks r1", "li r3, 2", f"li r12, {n}", f"li r10, {nbatch}")
    e.stmt("chk = 0.0d0", 1)
    e("fmovi f20, 0.0")
    e.stmt(f"do b = me, {nbatch - 1}, nprocs", 1)
    e("mov r9, r0", "bge r9, r10, done")
    e.label("batch")
    e("mul r2, r9, r12")
    e.stmt("do i = 0, n-1: a(i) = x(bitrev(i), b)", 2)
    e("li r4, 0")
    e.label("brl")
    e(f"ld r5, [r4+{BR}]", "add r6, r5, r2",
      f"fld f2, [r6+{X_RE}]", f"fst f2, [r4+{A_RE}]",
      f"fld f2, [r6+{X_IM}]", f"fst f2, [r4+{A_IM}]",
      "addi r4, r4, 1", "blt r4, r12, brl")
    e.stmt("half = 1; tstep = n/2", 2)
    e("li r5, 1", f"li r6, {half}")
    e.stmt("do while (half .lt. n)", 2)
    e.label("stage")
    e("add r7, r5, r5", "li r8, 0")
    e.stmt("do k = 0, n-1, 2*half", 3)
    e.label("group")
    e("li r11, 0", "li r13, 0")
    e.stmt("do j = 0, half-1", 4)
    e.label("bfly")
    e("add r4, r8, r11", "add r14, r4, r5")
    e.stmt("w = omega(j*tstep); u = a(k+j); v = a(k+j+half)", 5)
    e(f"fld f10, [r13+{W_RE}]", f"fld f11, [r13+{W_IM}]",
      f"fld f12, [r14+{A_RE}]", f"fld f13, [r14+{A_IM}]")
    e.stmt("t_re = w_re*v_re - w_im*v_im", 5)
    e("fmul f2, f10, f12", "fmul f3, f11, f13", "fsub f4, f2, f3")
    e.stmt("t_im = w_re*v_im + w_im*v_re", 5)
    e("fmul f2, f10, f13", "fmul f3, f11, f12", "fadd f5, f2, f3")
    e(f"fld f6, [r4+{A_RE}]", f"fld f7, [r4+{A_IM}]")
    e.stmt("a(k+j) = u + t", 5)
    e("fadd f8, f6, f4", f"fst f8, [r4+{A_RE}]", "fadd f9, f7, f5", f"fst f9, [r4+{A_IM}]")
    e.stmt("a(k+j+half) = u - t", 5)
    e("fsub f8, f6, f4", f"fst f8, [r14+{A_RE}]", "fsub f9, f7, f5", f"fst f9, [r14+{A_IM}]")
    e.stmt("enddo", 4)
    e("add r13, r13, r6", "addi r11, r11, 1", "blt r11, r5, bfly")
    e.stmt("enddo", 3)
    e("add r8, r8, r7", "blt r8, r12, group")
    e.stmt("half = 2*half; tstep = tstep/2", 3)
    e("mov r5, r7", "div r6, r6, r3")
    e.stmt("enddo", 2)
    e("blt r5, r12, stage")
    e.stmt(f"do t = 1, {len(sel)}", 2)
    e("li r4, 0", f"li r14, {len(sel)}")
    e.label("chk")
    e(f"ld r5, [r4+{SEL}]")
    e.stmt("chk = chk + real(a(sel(t))) + aimag(a(sel(t)))", 3)
    e(f"fld f2, [r5+{A_RE}]", "fadd f20, f20, f2", f"fld f2, [r5+{A_IM}]", "fadd f20, f20, f2")
    e.stmt("enddo", 2)
    e("addi r4, r4, 1", "blt r4, r14, chk")
    e.stmt("enddo", 1)
    e("add r9, r9, r1", "blt r9, r10, batch")
    e.label("done")
    e.stmt("call allreduce_sum(chk)", 1)
    e("allreduce_sum f31, f20")
    e.stmt("end", 1)
    e("halt")
    layout = {"X_RE": X_RE, "X_IM": X_IM, "A_RE": A_RE, "A_IM": A_IM}
    return e.text(), e.source_text(), {"golden": golden, "layout": layout}
