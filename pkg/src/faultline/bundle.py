"""On-disk formats: campaign JSON, trial and rate CSVs, report JSON, SVG charts.

Campaign files store every float that must survive a round trip as its raw
64-bit pattern, so ``load_campaign(dump_campaign(r)) == r`` exactly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

from .analysis import DistributionReport, PcHistogram
from .asm import SourceLoc, format_pc
from .campaign import CampaignConfig, CampaignResult, checkpoint_sizes
from .injector import FaultSpec, Profile, TrialRecord
from .isa import OpcodeClass, bits_to_float, float_to_bits
from .mpsim import CrashInfo, CrashKind
from .outcomes import OutcomeClass
from .vm import TrapKind

CAMPAIGN_FORMAT = "faultline-campaign/1"
REPORT_FORMAT = "faultline-report/1"
TRIAL_COLUMNS = ["trial", "rank", "class", "k", "bit", "pc", "file", "line", "outcome", "checksum", "steps"]
RATE_COLUMNS = ["checkpoint", "trials", "sdc_rate"]


def _hex64(bits: int) -> str:
    return f"0x{bits:016x}"


def _float_doc(x: float) -> dict:
    return {"value": x, "bits": _hex64(float_to_bits(x))}


def _float_load(doc: dict) -> float:
    return bits_to_float(int(doc["bits"], 16))


def config_to_dict(c: CampaignConfig) -> dict:
    return {
        "kernel": c.kernel,
        "mode": c.mode,
        "nranks": c.nranks,
        "class": c.opcode_class.label,
        "trials": c.trials,
        "seed": c.seed,
        "interval": c.checkpoint_interval,
        "tol": c.convergence_tol,
        "window": c.convergence_window,
        "epsilon": c.epsilon,
        "budget": c.step_budget,
        "params": dict(sorted(c.params.items())),
    }


def config_from_dict(d: dict) -> CampaignConfig:
    return CampaignConfig(
        kernel=d["kernel"],
        mode=d["mode"],
        nranks=d["nranks"],
        opcode_class=OpcodeClass.parse(d["class"]),
        trials=d["trials"],
        seed=d["seed"],
        checkpoint_interval=d["interval"],
        convergence_tol=d["tol"],
        convergence_window=d["window"],
        epsilon=d["epsilon"],
        step_budget=d["budget"],
        params=dict(d.get("params", {})),
    )


def _crash_doc(c: CrashInfo | None) -> dict | None:
    if c is None:
        return None
    return {"kind": c.kind.value, "rank": c.rank, "pc": format_pc(c.pc), "trap": c.trap.value if c.trap else None}


def _crash_load(d: dict | None) -> CrashInfo | None:
    if d is None:
        return None
    return CrashInfo(CrashKind(d["kind"]), d["rank"], int(d["pc"], 16), TrapKind(d["trap"]) if d["trap"] else None)


def record_to_dict(i: int, r: TrialRecord) -> dict:
    return {
        "trial": i,
        "rank": r.spec.rank,
        "class": r.spec.opcode_class.label,
        "k": r.spec.k,
        "bit": r.spec.bit,
        "pc": format_pc(r.faulted_pc),
        "file": r.faulted_loc.file,
        "line": r.faulted_loc.line,
        "original_bits": _hex64(r.original_bits),
        "corrupted_bits": _hex64(r.corrupted_bits),
        "outcome": str(r.outcome) if r.outcome is not None else None,
        "checksum_bits": None if r.checksum_bits is None else _hex64(r.checksum_bits),
        "steps": r.steps,
        "crash": _crash_doc(r.crash),
    }


def record_from_dict(d: dict) -> TrialRecord:
    return TrialRecord(
        spec=FaultSpec(d["rank"], OpcodeClass.parse(d["class"]), d["k"], d["bit"]),
        faulted_pc=int(d["pc"], 16),
        faulted_loc=SourceLoc(d["file"], d["line"]),
        original_bits=int(d["original_bits"], 16),
        corrupted_bits=int(d["corrupted_bits"], 16),
        outcome=OutcomeClass.parse(d["outcome"]) if d["outcome"] is not None else None,
        checksum_bits=None if d["checksum_bits"] is None else int(d["checksum_bits"], 16),
        steps=d["steps"],
        crash=_crash_load(d["crash"]),
    )


def campaign_to_dict(r: CampaignResult) -> dict:
    return {
        "format": CAMPAIGN_FORMAT,
        "config": config_to_dict(r.config),
        "program": {"name": r.program_name, "digest": r.program_digest},
        "profile": {"class": r.profile.opcode_class.label, "per_rank_counts": list(r.profile.per_rank_counts)},
        "golden": _float_doc(r.golden),
        "epsilon": _float_doc(r.epsilon),
        "counts": r.counts(),
        "rate_series": [_float_doc(x) for x in r.rate_series],
        "converged": r.converged,
        "converged_at": r.converged_at,
        "records": [record_to_dict(i, rec) for i, rec in enumerate(r.records)],
    }


def campaign_from_dict(d: dict) -> CampaignResult:
    if d.get("format") != CAMPAIGN_FORMAT:
        raise ValueError(f"not a campaign file (format {d.get('format')!r})")
    prof = d["profile"]
    return CampaignResult(
        config=config_from_dict(d["config"]),
        program_name=d["program"]["name"],
        program_digest=d["program"]["digest"],
        profile=Profile(OpcodeClass.parse(prof["class"]), tuple(prof["per_rank_counts"])),
        golden=_float_load(d["golden"]),
        epsilon=_float_load(d["epsilon"]),
        records=tuple(record_from_dict(x) for x in d["records"]),
        rate_series=tuple(_float_load(x) for x in d["rate_series"]),
        converged=d["converged"],
        converged_at=d["converged_at"],
    )


def dump_campaign(r: CampaignResult) -> str:
    return json.dumps(campaign_to_dict(r), indent=1) + "\n"


def load_campaign(path) -> CampaignResult:
    return campaign_from_dict(json.loads(Path(path).read_text()))


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def trials_csv(records) -> str:
    rows = (
        [
            i,
            rec.spec.rank,
            rec.spec.opcode_class.label,
            rec.spec.k,
            rec.spec.bit,
            format_pc(rec.faulted_pc),
            rec.faulted_loc.file,
            rec.faulted_loc.line,
            str(rec.outcome),
            "" if rec.checksum is None else repr(rec.checksum),
            rec.steps,
        ]
        for i, rec in enumerate(records)
    )
    return _csv_text(TRIAL_COLUMNS, rows)


def rates_csv(r: CampaignResult) -> str:
    sizes = checkpoint_sizes(len(r.records), r.config.checkpoint_interval)
    rows = ([i + 1, n, repr(rate)] for i, (n, rate) in enumerate(zip(sizes, r.rate_series)))
    return _csv_text(RATE_COLUMNS, rows)


def _hist_doc(report: DistributionReport, h: PcHistogram) -> dict:
    return {
        "mode": h.mode,
        "outcome": h.outcome,
        "total": h.total,
        "argmax": format_pc(h.argmax()),
        "counts": {format_pc(pc): c for pc, c in sorted(h.counts.items())},
        "by_source": report.by_source(h),
    }


def report_to_dict(report: DistributionReport) -> dict:
    return {
        "format": REPORT_FORMAT,
        "kernel": report.kernel,
        "class": report.opcode_class,
        "histograms": [_hist_doc(report, h) for h in report.histograms],
        "mode_totals": [_hist_doc(report, h) for h in report.mode_totals],
        "annotations": {format_pc(pc): str(loc) for pc, loc in report.annotations.items()},
        "comparisons": [
            {
                "a": c.a,
                "b": c.b,
                "total_variation": c.tv,
                "js_divergence": c.js,
                "jaccard_support": c.jaccard,
                "only_a": [format_pc(pc) for pc in sorted(c.only_a)],
                "only_b": [format_pc(pc) for pc in sorted(c.only_b)],
            }
            for c in report.comparisons
        ],
    }


def dump_report(report: DistributionReport) -> str:
    return json.dumps(report_to_dict(report), indent=1) + "\n"


def histogram_svg(h: PcHistogram, title: str, annotations: dict[int, SourceLoc] | None = None) -> str:
    """Bar chart of one histogram: x = faulted pc, y = count."""
    bar, gap, left, top, plot_h, bottom = 18, 6, 56, 36, 220, 96
    pcs = sorted(h.counts)
    width = left + len(pcs) * (bar + gap) + 24
    height = top + plot_h + bottom
    peak = max(h.counts.values())
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="10">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left}" y="18" font-size="13">{escape(title)} (n={h.total})</text>',
        f'<line x1="{left}" y1="{top + plot_h}" x2="{width - 12}" y2="{top + plot_h}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" stroke="black"/>',
        f'<text x="{left - 6}" y="{top + 4}" text-anchor="end">{peak}</text>',
        f'<text x="{left - 6}" y="{top + plot_h}" text-anchor="end">0</text>',
    ]
    for i, pc in enumerate(pcs):
        c = h.counts[pc]
        bh = plot_h * c / peak
        x = left + gap + i * (bar + gap)
        y = top + plot_h - bh
        tip = format_pc(pc) + (f" {annotations[pc]}" if annotations and pc in annotations else "") + f": {c}"
        out.append(
            f'<rect x="{x}" y="{y:.2f}" width="{bar}" height="{bh:.2f}" fill="#4a6fa5">'
            f"<title>{escape(tip)}</title></rect>"
        )
        lx, ly = x + bar / 2, top + plot_h + 8
        out.append(
            f'<text x="{lx:.1f}" y="{ly}" transform="rotate(60 {lx:.1f} {ly})">{format_pc(pc)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


@dataclass
class OutputBundle:
    files: list[Path] = field(default_factory=list)


def _write(path: Path, text: str, bundle: OutputBundle) -> None:
    path.write_text(text)
    bundle.files.append(path)


def sibling(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def emit_campaign(result: CampaignResult, out: Path) -> OutputBundle:
    """Write ``out`` (JSON) plus ``<stem>.trials.csv`` and ``<stem>.rates.csv`` beside it."""
    out = Path(out)
    b = OutputBundle()
    _write(out, dump_campaign(result), b)
    _write(sibling(out, ".trials.csv"), trials_csv(result.records), b)
    _write(sibling(out, ".rates.csv"), rates_csv(result), b)
    return b


def emit_report(report: DistributionReport, out: Path | None, svg_dir: Path | None = None) -> OutputBundle:
    """Write the report JSON (unless ``out`` is None) and, with ``svg_dir``, one chart per cell."""
    b = OutputBundle()
    if out is not None:
        _write(Path(out), dump_report(report), b)
    if svg_dir is not None:
        svg_dir = Path(svg_dir)
        svg_dir.mkdir(parents=True, exist_ok=True)
        for h in report.histograms:
            title = f"{report.kernel} {report.opcode_class} {h.mode} {h.outcome}"
            _write(svg_dir / f"{report.kernel}-{h.mode}-{h.outcome}.svg", histogram_svg(h, title, report.annotations), b)
    return b


def emit_bundle(result, out, svg_dir=None) -> OutputBundle:
    if isinstance(result, CampaignResult):
        return emit_campaign(result, out)
    if isinstance(result, DistributionReport):
        return emit_report(result, out, svg_dir)
    raise TypeError(f"cannot emit {type(result).__name__}")
