"""Trial outcome classes: Benign, SDC, or Crash with a sub-reason."""

from __future__ import annotations

from dataclasses import dataclass

from .mpsim import CrashKind

BENIGN = "Benign"
SDC = "SDC"
CRASH = "Crash"
TAGS = (BENIGN, SDC, CRASH)


@dataclass(frozen=True)
class OutcomeClass:
    tag: str
    crash: CrashKind | None = None

    def __post_init__(self) -> None:
        if self.tag not in TAGS:
            raise ValueError(f"unknown outcome tag {self.tag!r}")
        if (self.tag == CRASH) != (self.crash is not None):
            raise ValueError("crash sub-reason must be present exactly for Crash")

    def __str__(self) -> str:
        return f"Crash({self.crash.value})" if self.crash is not None else self.tag

    @classmethod
    def parse(cls, text: str) -> OutcomeClass:
        if text.startswith("Crash(") and text.endswith(")"):
            return cls(CRASH, CrashKind(text[6:-1]))
        return cls(text)

    @property
    def is_sdc(self) -> bool:
        return self.tag == SDC


Benign = OutcomeClass(BENIGN)
Sdc = OutcomeClass(SDC)


def crash(kind: CrashKind) -> OutcomeClass:
    return OutcomeClass(CRASH, kind)
