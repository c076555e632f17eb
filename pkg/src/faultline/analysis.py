"""Faulty-pc histograms per (mode, outcome) and ways to compare them."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from itertools import combinations

from .asm import Program, SourceLoc
from .campaign import CampaignResult
from .outcomes import TAGS

Cell = tuple[str, str]  # (mode, outcome tag)


@dataclass(frozen=True)
class PcHistogram:
    mode: str
    outcome: str
    counts: dict[int, int]

    def __post_init__(self) -> None:
        if any(c < 1 for c in self.counts.values()):
            raise ValueError("histogram counts must be >= 1; omit absent pcs")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def support(self) -> frozenset[int]:
        return frozenset(self.counts)

    @property
    def cell(self) -> Cell:
        return (self.mode, self.outcome)

    @property
    def name(self) -> str:
        return f"{self.mode}-{self.outcome}"

    def argmax(self) -> int:
        # ties go to the lowest pc so the answer is stable
        return min(self.counts, key=lambda pc: (-self.counts[pc], pc))

    def share(self, pc: int) -> float:
        return self.counts.get(pc, 0) / self.total


def histogram(mode: str, outcome: str, pcs) -> PcHistogram:
    return PcHistogram(mode, outcome, dict(sorted(Counter(pcs).items())))


def merge(hists: list[PcHistogram], outcome: str | None = None) -> PcHistogram:
    """Pool several histograms of one mode (e.g. Benign with SDC)."""
    modes = {h.mode for h in hists}
    if len(modes) != 1:
        raise ValueError("can only merge histograms of one mode")
    total: Counter = Counter()
    for h in hists:
        total.update(h.counts)
    label = outcome if outcome is not None else "+".join(h.outcome for h in hists)
    return PcHistogram(modes.pop(), label, dict(sorted(total.items())))


def _probs(p: PcHistogram) -> dict[int, float]:
    if p.total <= 0:
        raise ValueError(f"histogram {p.name} is empty")
    t = p.total
    return {pc: c / t for pc, c in p.counts.items()}


def total_variation(p: PcHistogram, q: PcHistogram) -> float:
    _probs(p), _probs(q)
    # integer numerator so disjoint supports give exactly 1.0
    a, b = p.total, q.total
    num = sum(abs(p.counts.get(x, 0) * b - q.counts.get(x, 0) * a) for x in p.support | q.support)
    return num / (2 * a * b)


def js_divergence(p: PcHistogram, q: PcHistogram) -> float:
    """Jensen-Shannon divergence in bits; 0 for equal shapes, 1 for disjoint supports."""
    pp, qq = _probs(p), _probs(q)
    shared = p.support & q.support
    # mass outside the shared support contributes half its probability;
    # summing it as integers first makes disjoint supports exactly 1.0
    only_p = sum(c for x, c in p.counts.items() if x not in shared)
    only_q = sum(c for x, c in q.counts.items() if x not in shared)
    total = 0.5 * (only_p / p.total) + 0.5 * (only_q / q.total)
    for x in sorted(shared):
        a, b = pp[x], qq[x]
        m = 0.5 * (a + b)
        total += 0.5 * a * math.log2(a / m) + 0.5 * b * math.log2(b / m)
    return min(1.0, max(0.0, total))


def jaccard_support(p: PcHistogram, q: PcHistogram) -> float:
    _probs(p), _probs(q)
    a, b = p.support, q.support
    return len(a & b) / len(a | b)


def exclusive_pcs(a: PcHistogram, b: PcHistogram) -> frozenset[int]:
    return a.support - b.support


def pc_to_source(program: Program, pc: int) -> SourceLoc:
    if not 0 <= pc < len(program.debug):
        raise LookupError(f"pc 0x{pc:08X} is outside the program (length {len(program.debug)})")
    return program.debug[pc]


@dataclass(frozen=True)
class Comparison:
    a: str
    b: str
    tv: float
    js: float
    jaccard: float
    only_a: frozenset[int]
    only_b: frozenset[int]


@dataclass(frozen=True)
class DistributionReport:
    kernel: str
    opcode_class: str
    histograms: tuple[PcHistogram, ...]
    annotations: dict[int, SourceLoc]
    comparisons: tuple[Comparison, ...]
    mode_totals: tuple[PcHistogram, ...] = field(default=())

    def get(self, mode: str, outcome: str) -> PcHistogram | None:
        for h in self.histograms:
            if h.cell == (mode, outcome):
                return h
        return None

    def by_source(self, hist: PcHistogram) -> dict[str, int]:
        """Counts re-keyed by ``file:line``; several pcs can share a line."""
        out: Counter = Counter()
        for pc, c in hist.counts.items():
            out[str(self.annotations[pc])] += c
        return dict(sorted(out.items()))


def campaign_histograms(result: CampaignResult, mode: str | None = None) -> list[PcHistogram]:
    """One histogram per nonempty outcome cell, Crash sub-reasons pooled."""
    mode = mode or result.config.mode
    cells: dict[str, list[int]] = {t: [] for t in TAGS}
    for r in result.records:
        cells[r.outcome.tag].append(r.faulted_pc)
    return [histogram(mode, tag, pcs) for tag, pcs in cells.items() if pcs]


def compare(p: PcHistogram, q: PcHistogram) -> Comparison:
    return Comparison(
        a=p.name,
        b=q.name,
        tv=total_variation(p, q),
        js=js_divergence(p, q),
        jaccard=jaccard_support(p, q),
        only_a=exclusive_pcs(p, q),
        only_b=exclusive_pcs(q, p),
    )


def build_report(serial: CampaignResult, parallel: CampaignResult, program: Program) -> DistributionReport:
    """Histograms and pairwise comparisons for one kernel's serial and parallel campaigns."""
    sc, pc_ = serial.config, parallel.config
    if sc.kernel != pc_.kernel or serial.program_digest != parallel.program_digest:
        raise ValueError(f"campaigns come from different programs ({sc.kernel} vs {pc_.kernel})")
    if sc.opcode_class != pc_.opcode_class:
        raise ValueError(
            f"campaigns target different classes ({sc.opcode_class.label} vs {pc_.opcode_class.label})"
        )
    if program.digest and program.digest != serial.program_digest:
        raise ValueError("program does not match the campaigns")
    hists = campaign_histograms(serial, "serial") + campaign_histograms(parallel, "parallel")
    annotations = {pc: pc_to_source(program, pc) for h in hists for pc in h.counts}
    comparisons = tuple(compare(a, b) for a, b in combinations(hists, 2))
    totals = []
    for mode in ("serial", "parallel"):
        cells = [h for h in hists if h.mode == mode and h.outcome != "Crash"]
        if cells:
            totals.append(merge(cells, "Benign+SDC"))
    if len(totals) == 2:
        comparisons += (compare(totals[0], totals[1]),)
    return DistributionReport(
        kernel=sc.kernel,
        opcode_class=sc.opcode_class.label,
        histograms=tuple(hists),
        annotations=dict(sorted(annotations.items())),
        comparisons=comparisons,
        mode_totals=tuple(totals),
    )
