"""Small helpers shared by the kernel generators."""

from __future__ import annotations

EPSILON = 1e-8

# NPB linear congruential generator: x <- a*x mod 2^46, value x / 2^46
_R46 = 1 << 46
NPB_A = 5**13
NPB_SEED = 314159265


def randlc_stream(count: int, seed: int = NPB_SEED, a: int = NPB_A) -> list[float]:
    x = seed
    out = []
    for _ in range(count):
        x = (a * x) % _R46
        out.append(x / _R46)
    return out


class Emitter:
    """Accumulates assembly plus a pseudo-source file for ``.loc`` attribution.

    Each :meth:`stmt` appends one pseudo-source line and points the following
    instructions at it, so faulted pcs map back to a readable statement.
    """

    def __init__(self, srcname: str, header: list[str]):
        self.srcname = srcname
        self.asm: list[str] = list(header)
        self.src: list[str] = []

    def stmt(self, text: str, indent: int = 0) -> None:
        self.src.append("  " * indent + text)
        self.asm.append(f".loc {self.srcname} {len(self.src)}")

    def __call__(self, *instrs: str) -> None:
        for ins in instrs:
            self.asm.append(f"    {ins}")

    def label(self, name: str) -> None:
        self.asm.append(f"{name}:")

    def comment(self, text: str) -> None:
        self.asm.append(f"; {text}")

    def data(self, addr: int, words: list, per_line: int = 8) -> None:
        for i in range(0, len(words), per_line):
            chunk = words[i : i + per_line]
            self.asm.append(f".data {addr + i} " + " ".join(_word(w) for w in chunk))

    def text(self) -> str:
        return "\n".join(self.asm) + "\n"

    def source_text(self) -> str:
        return "\n".join(self.src) + "\n"


def _word(w) -> str:
    if isinstance(w, float):
        return repr(w)
    return str(int(w))
