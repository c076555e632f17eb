"""``faultline`` command-line interface.

Exit codes: 0 success, 1 domain errors (no targets, broken kernel, bad
assembly, I/O), 2 usage errors. Diagnostics go to stderr; data goes to
files or stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .analysis import build_report
from .asm import AsmError, Program, assemble, format_listing, format_pc
from .bundle import dump_report, emit_bundle, load_campaign, record_to_dict, trials_csv
from .campaign import (
    MODES,
    SERIAL,
    CampaignConfig,
    CampaignResult,
    classify,
    effective_epsilon,
    exact_sdc_rate,
    reference_value,
    run_campaign,
    run_exhaustive,
)
from .errors import FaultlineError
from .injector import FaultSpec, checksum_register, injected_run, pc_profile, profile
from .isa import OpcodeClass
from .kernels import KERNELS, build_kernel
from .mpsim import run_group
from .vm import DEFAULT_STEP_BUDGET

CLASSES = [c.label for c in OpcodeClass]
SEED_ENV = "FAULTLINE_SEED"

# builtin defaults for options that may also come from --config
DEFAULTS = {
    "mode": SERIAL,
    "nranks": None,
    "class": "fadd",
    "trials": 1000,
    "seed": None,
    "interval": 1000,
    "tol": 0.01,
    "window": 4,
    "epsilon": None,
    "budget": DEFAULT_STEP_BUDGET,
    "jobs": 1,
    "kernel": None,
    "program": None,
    "out": None,
    "svg": None,
}


class UsageError(Exception):
    pass


def _add_target(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kernel", choices=sorted(KERNELS), help="built-in kernel")
    p.add_argument("--program", help="path to a .fasm program")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--nranks", type=int)
    p.add_argument("--budget", type=int, help="per-rank step budget")
    p.add_argument("--config", help="JSON file with option defaults (flags override)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="faultline", description="Deterministic fault-injection laboratory.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("assemble", help="assemble a program and print its listing")
    p.add_argument("source")
    p.add_argument("--out")

    p = sub.add_parser("run", help="fault-free run with verification")
    _add_target(p)

    p = sub.add_parser("profile", help="dynamic instruction counts per rank")
    _add_target(p)
    p.add_argument("--class", dest="class_")
    p.add_argument("--by-pc", action="store_true", help="also break counts down by pc")

    p = sub.add_parser("inject", help="one injected run at an explicit fault site")
    _add_target(p)
    p.add_argument("--class", dest="class_")
    p.add_argument("--rank", type=int, default=0)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--bit", type=int, required=True)
    p.add_argument("--epsilon", type=float)

    p = sub.add_parser("campaign", help="sampled fault-injection campaign")
    _add_target(p)
    p.add_argument("--class", dest="class_")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--interval", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out")

    p = sub.add_parser("exhaustive", help="inject at every fault site")
    _add_target(p)
    p.add_argument("--class", dest="class_")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--out", help="CSV of every site (default: summary only)")

    p = sub.add_parser("analyze", help="compare serial and parallel campaigns")
    p.add_argument("serial")
    p.add_argument("parallel")
    p.add_argument("--program", help=".fasm program, when the campaigns did not use a built-in kernel")
    p.add_argument("--out", help="report JSON (default: stdout)")
    p.add_argument("--svg", help="directory for one SVG chart per (mode, outcome)")
    return ap


def _options(args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise FaultlineError(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        opts.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, "class_" if key == "class" else key, None)
        if value is not None:
            opts[key] = value
    if opts["seed"] is None:
        env = os.environ.get(SEED_ENV)
        try:
            opts["seed"] = int(env, 0) if env else 0
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return opts


def _nranks(opts: dict) -> int:
    if opts["mode"] == SERIAL:
        if opts["nranks"] not in (None, 1):
            raise UsageError("--mode serial runs exactly one rank")
        return 1
    return opts["nranks"] if opts["nranks"] is not None else 4


def _load_program(opts: dict) -> Program:
    if (opts["kernel"] is None) == (opts["program"] is None):
        raise UsageError("give exactly one of --kernel or --program")
    if opts["kernel"] is not None:
        return build_kernel(opts["kernel"])[0]
    path = Path(opts["program"])
    try:
        text = path.read_text()
    except OSError as exc:
        raise FaultlineError(f"cannot read {path}: {exc.strerror}") from exc
    return assemble(text, path.name)


def _class(opts: dict) -> OpcodeClass:
    try:
        return OpcodeClass.parse(opts["class"])
    except ValueError:
        raise UsageError(f"--class must be one of {', '.join(CLASSES)}") from None


def _write_or_print(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_assemble(args) -> int:
    path = Path(args.source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FaultlineError(f"cannot read {path}: {exc.strerror}") from exc
    _write_or_print(format_listing(assemble(text, path.name)), args.out)
    return 0


def cmd_run(args) -> int:
    opts = _options(args)
    program = _load_program(opts)
    n = _nranks(opts)
    out = run_group(program, n, step_budget=opts["budget"])
    print(f"ranks      {n}")
    print(f"outcome    {out.kind}")
    print(f"steps      {out.total_steps}")
    if not out.completed:
        c = out.crash
        print(f"crash      {c.kind.value} rank {c.rank} pc {format_pc(c.pc)}")
        return 1
    freg = checksum_register(program)
    value = out.checksum(freg)
    print(f"checksum   f{freg} = {value!r}")
    if program.verify is not None and program.verify.golden is not None:
        eps = effective_epsilon(program, None)
        verdict = classify(out, value, program.verify.golden, eps)
        print(f"verify     {verdict} (golden {program.verify.golden!r}, epsilon {eps:g})")
        return 0 if verdict.tag == "Benign" else 1
    return 0


def cmd_profile(args) -> int:
    opts = _options(args)
    program = _load_program(opts)
    n = _nranks(opts)
    cls = _class(opts)
    prof = profile(program, n, cls, opts["budget"])
    doc = {"class": cls.label, "nranks": n, "per_rank_counts": list(prof.per_rank_counts)}
    if args.by_pc:
        doc["by_pc"] = [
            {format_pc(pc): c for pc, c in counts.items()}
            for counts in pc_profile(program, n, cls, opts["budget"])
        ]
    print(json.dumps(doc, indent=1))
    return 0


def cmd_inject(args) -> int:
    opts = _options(args)
    program = _load_program(opts)
    n = _nranks(opts)
    cls = _class(opts)
    try:
        spec = FaultSpec(args.rank, cls, args.k, args.bit)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    eps = effective_epsilon(program, opts["epsilon"])
    golden = reference_value(program, n, eps, opts["budget"])
    rec = injected_run(program, n, spec, opts["budget"])
    doc = record_to_dict(0, rec)
    doc.pop("trial")
    doc["outcome"] = str(classify(rec, rec.checksum, golden, eps))
    doc["checksum"] = None if rec.checksum is None else repr(rec.checksum)
    print(json.dumps(doc, indent=1))
    return 0


def _campaign_config(opts: dict, program: Program) -> CampaignConfig:
    kernel = opts["kernel"] if opts["kernel"] is not None else program.name
    try:
        return CampaignConfig(
            kernel=kernel,
            mode=opts["mode"],
            nranks=_nranks(opts),
            opcode_class=_class(opts),
            trials=opts["trials"],
            seed=opts["seed"],
            checkpoint_interval=opts["interval"],
            convergence_tol=opts["tol"],
            convergence_window=opts["window"],
            epsilon=opts["epsilon"],
            step_budget=opts["budget"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _summary(r: CampaignResult) -> str:
    c = r.counts()
    rates = " ".join(f"{x:.4f}" for x in r.rate_series)
    at = "-" if r.converged_at is None else str(r.converged_at + 1)
    return (
        f"{r.config.kernel} {r.config.mode} nranks={r.config.nranks} class={r.config.opcode_class.label} "
        f"trials={len(r.records)} seed={r.config.seed}\n"
        f"Benign {c['Benign']}  SDC {c['SDC']}  Crash {c['Crash']}  sdc_rate {r.sdc_rate:.4f}\n"
        f"rates {rates}\n"
        f"converged {r.converged} at checkpoint {at}\n"
    )


def cmd_campaign(args) -> int:
    opts = _options(args)
    program = _load_program(opts)
    config = _campaign_config(opts, program)
    if opts["jobs"] < 1:
        raise UsageError("--jobs must be >= 1")
    result = run_campaign(config, program, jobs=opts["jobs"])
    if opts["out"] is not None:
        emit_bundle(result, Path(opts["out"]))
    sys.stdout.write(_summary(result))
    return 0


def cmd_exhaustive(args) -> int:
    opts = _options(args)
    program = _load_program(opts)
    n = _nranks(opts)
    records = run_exhaustive(program, n, _class(opts), opts["epsilon"], opts["budget"])
    if opts["out"] is not None:
        Path(opts["out"]).write_text(trials_csv(records))
    tags = [r.outcome.tag for r in records]
    print(f"sites {len(records)}  Benign {tags.count('Benign')}  SDC {tags.count('SDC')}  "
          f"Crash {tags.count('Crash')}  exact_sdc_rate {exact_sdc_rate(records):.6f}")
    return 0


def cmd_analyze(args) -> int:
    try:
        serial, parallel = load_campaign(args.serial), load_campaign(args.parallel)
    except (OSError, ValueError, KeyError) as exc:
        raise FaultlineError(f"cannot load campaign: {exc}") from exc
    if args.program is not None:
        program = _load_program({"kernel": None, "program": args.program})
    elif serial.config.kernel in KERNELS:
        program = build_kernel(serial.config.kernel, serial.config.params)[0]
    else:
        raise UsageError(f"campaigns ran {serial.config.kernel}; pass --program")
    try:
        report = build_report(serial, parallel, program)
    except ValueError as exc:
        raise FaultlineError(str(exc)) from exc
    emit_bundle(report, args.out, args.svg)
    if args.out is None:
        sys.stdout.write(dump_report(report))
    return 0


COMMANDS = {
    "assemble": cmd_assemble,
    "run": cmd_run,
    "profile": cmd_profile,
    "inject": cmd_inject,
    "campaign": cmd_campaign,
    "exhaustive": cmd_exhaustive,
    "analyze": cmd_analyze,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"faultline: error: {exc}", file=sys.stderr)
        return 2
    except AsmError as exc:
        print(f"faultline: {exc}", file=sys.stderr)
        return 1
    except FaultlineError as exc:
        print(f"faultline: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        # bad kernel parameters and similar argument errors
        print(f"faultline: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        where = f" {exc.filename}" if exc.filename else ""
        print(f"faultline: I/O error{where}: {exc.strerror or exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
