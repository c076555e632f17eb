"""Fault-injection campaigns, exhaustive sweeps and SDC-rate statistics."""

from __future__ import annotations

import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from types import SimpleNamespace

from . import engine as eng
from .asm import Program
from .errors import KernelDefectError, SpaceTooLargeError
from .injector import FaultSpec, Profile, TrialRecord, checksum_register, draw_fault, injected_run, profile
from .isa import OpcodeClass
from .mpsim import run_group
from .outcomes import Benign, OutcomeClass, Sdc, crash
from .vm import DEFAULT_STEP_BUDGET

SERIAL = "serial"
PARALLEL = "parallel"
MODES = (SERIAL, PARALLEL)
DEFAULT_PARALLEL_RANKS = 4
DEFAULT_EPSILON = 1e-8
EXHAUSTIVE_CAP = 1 << 20

_M64 = (1 << 64) - 1
_COMPLETED = SimpleNamespace(crash=None)


def mix(seed: int, i: int) -> int:
    """64-bit seed for trial ``i``: the splitmix64 finalizer over ``seed + (i+1)*gamma``."""
    z = (seed + (i + 1) * 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def trial_rng(seed: int, i: int) -> random.Random:
    return random.Random(mix(seed, i))


@dataclass(frozen=True)
class CampaignConfig:
    kernel: str
    mode: str = SERIAL
    nranks: int | None = None
    opcode_class: OpcodeClass = OpcodeClass.FADD
    trials: int = 1000
    seed: int = 0
    checkpoint_interval: int = 1000
    convergence_tol: float = 0.01
    convergence_window: int = 4
    epsilon: float | None = None
    step_budget: int = DEFAULT_STEP_BUDGET
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "opcode_class", OpcodeClass(self.opcode_class))
        if self.nranks is None:
            object.__setattr__(self, "nranks", 1 if self.mode == SERIAL else DEFAULT_PARALLEL_RANKS)
        if self.mode == SERIAL and self.nranks != 1:
            raise ValueError("serial mode runs exactly one rank")
        if self.nranks < 1:
            raise ValueError("nranks must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.checkpoint_interval < 1:
            raise ValueError("checkpoint interval must be >= 1")
        if self.convergence_window < 2:
            raise ValueError("convergence window must be >= 2")
        if self.epsilon is not None and not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0 <= self.seed <= _M64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if self.step_budget < 1:
            raise ValueError("step budget must be >= 1")


@dataclass(frozen=True)
class CampaignResult:
    config: CampaignConfig
    program_name: str
    program_digest: str
    profile: Profile
    golden: float
    epsilon: float
    records: tuple[TrialRecord, ...]
    rate_series: tuple[float, ...]
    converged: bool
    converged_at: int | None

    def outcomes(self) -> list[OutcomeClass]:
        return [r.outcome for r in self.records]

    def counts(self) -> dict[str, int]:
        out = {"Benign": 0, "SDC": 0, "Crash": 0}
        for r in self.records:
            out[r.outcome.tag] += 1
        return out

    @property
    def sdc_rate(self) -> float:
        return self.counts()["SDC"] / len(self.records)


def classify(outcome, checksum: float | None, golden: float, epsilon: float) -> OutcomeClass:
    """Benign/SDC/Crash verdict for one run.

    ``outcome`` is anything with a ``crash`` attribute (a ``GroupOutcome`` or
    a ``TrialRecord``); ``crash`` is ``None`` when the group completed.
    """
    if outcome.crash is not None:
        return crash(outcome.crash.kind)
    if checksum is None:
        raise ValueError("a completed run needs a checksum")
    if math.isnan(checksum):
        return Sdc
    bound = epsilon * abs(golden) if golden != 0.0 else epsilon
    return Benign if abs(checksum - golden) <= bound else Sdc


def golden_checksum(program: Program, nranks: int, step_budget: int = DEFAULT_STEP_BUDGET) -> float:
    """Value of the verification register on rank 0 after a fault-free run."""
    out = run_group(program, nranks, step_budget=step_budget)
    if not out.completed:
        c = out.crash
        raise KernelDefectError(
            f"fault-free run at nranks={nranks} crashed: {c.kind.value} on rank {c.rank} at pc 0x{c.pc:08X}"
        )
    return out.checksum(checksum_register(program))


def reference_value(program: Program, nranks: int, epsilon: float, step_budget: int) -> float:
    """Golden used for classification: the ``.verify`` value, or the fault-free one for AUTO.

    A numeric ``.verify`` golden must be met by the fault-free run itself.
    """
    value = golden_checksum(program, nranks, step_budget)
    spec = program.verify
    if spec is None or spec.golden is None:
        return value
    if classify(_COMPLETED, value, spec.golden, epsilon) != Benign:
        raise KernelDefectError(
            f"fault-free checksum {value!r} at nranks={nranks} fails verification "
            f"against {spec.golden!r} (epsilon {epsilon:g})"
        )
    return spec.golden


def effective_epsilon(program: Program, requested: float | None) -> float:
    if requested is not None:
        return requested
    if program.verify is not None:
        return program.verify.epsilon
    return DEFAULT_EPSILON


def rolling_rates(outcomes: list[OutcomeClass], interval: int) -> list[float]:
    """Cumulative SDC fraction after every ``interval`` trials (plus a partial tail)."""
    if interval < 1:
        raise ValueError("interval must be >= 1")
    rates = []
    sdc = 0
    for i, o in enumerate(outcomes, 1):
        sdc += o.is_sdc
        if i % interval == 0 or i == len(outcomes):
            rates.append(sdc / i)
    return rates


def checkpoint_sizes(trials: int, interval: int) -> list[int]:
    sizes = list(range(interval, trials + 1, interval))
    if trials % interval:
        sizes.append(trials)
    return sizes


def is_converged(series: list[float], tol: float, window: int) -> tuple[bool, int | None]:
    """Smallest 0-based ``j`` whose tail ``series[j:]`` stays within ``tol`` of the last value.

    The tail must span at least ``window`` checkpoints.
    """
    if window < 2:
        raise ValueError("window must be >= 2")
    n = len(series)
    if n < window:
        return False, None
    last = series[-1]
    j = n
    while j > 0 and abs(series[j - 1] - last) <= tol:
        j -= 1
    if n - j >= window:
        return True, j
    return False, None


def _run_trials(program: Program, nranks: int, prof: Profile, seed: int, lo: int, hi: int, budget: int):
    machine = eng.Machine(program, nranks)
    return [
        injected_run(program, nranks, draw_fault(trial_rng(seed, i), prof), budget, machine=machine)
        for i in range(lo, hi)
    ]


def _chunks(n: int, parts: int) -> list[tuple[int, int]]:
    size = max(1, -(-n // parts))
    return [(lo, min(n, lo + size)) for lo in range(0, n, size)]


def run_campaign(config: CampaignConfig, program: Program | None = None, jobs: int = 1) -> CampaignResult:
    """Run ``config.trials`` single-fault trials.

    Trial ``i`` draws its fault from ``random.Random(mix(seed, i))``, so the
    records do not depend on ``jobs`` or on the order trials execute in.
    ``program`` overrides kernel lookup by name.
    """
    if program is None:
        from .kernels import build_kernel

        program, _ = build_kernel(config.kernel, config.params)
    nranks = config.nranks
    eps = effective_epsilon(program, config.epsilon)
    golden = reference_value(program, nranks, eps, config.step_budget)
    prof = profile(program, nranks, config.opcode_class, config.step_budget)
    if not prof.eligible_ranks():
        draw_fault(trial_rng(config.seed, 0), prof)  # raises NoTargetError

    args = (program, nranks, prof, config.seed)
    if jobs <= 1:
        raw = _run_trials(*args, 0, config.trials, config.step_budget)
    else:
        raw = []
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(_run_trials, *args, lo, hi, config.step_budget)
                for lo, hi in _chunks(config.trials, jobs * 4)
            ]
            for fut in futures:
                raw.extend(fut.result())

    records = tuple(replace(r, outcome=classify(r, r.checksum, golden, eps)) for r in raw)
    series = rolling_rates([r.outcome for r in records], config.checkpoint_interval)
    ok, at = is_converged(series, config.convergence_tol, config.convergence_window)
    return CampaignResult(
        config=config,
        program_name=program.name,
        program_digest=program.digest,
        profile=prof,
        golden=golden,
        epsilon=eps,
        records=records,
        rate_series=tuple(series),
        converged=ok,
        converged_at=at,
    )


def exhaustive_space(prof: Profile) -> int:
    return sum(prof.per_rank_counts) * 64


def run_exhaustive(
    program: Program,
    nranks: int,
    opcode_class: OpcodeClass,
    epsilon: float | None = None,
    step_budget: int = DEFAULT_STEP_BUDGET,
    cap: int = EXHAUSTIVE_CAP,
) -> list[TrialRecord]:
    """Inject at every ``(rank, k, bit)`` site, ordered by rank, then k, then bit."""
    eps = effective_epsilon(program, epsilon)
    golden = reference_value(program, nranks, eps, step_budget)
    prof = profile(program, nranks, opcode_class, step_budget)
    size = exhaustive_space(prof)
    if size > cap:
        raise SpaceTooLargeError(
            f"exhaustive space has {size} sites ({prof.total} instances x 64 bits), cap is {cap}"
        )
    machine = eng.Machine(program, nranks)
    records = []
    for rank, count in enumerate(prof.per_rank_counts):
        for k in range(1, count + 1):
            for bit in range(64):
                spec = FaultSpec(rank, prof.opcode_class, k, bit)
                rec = injected_run(program, nranks, spec, step_budget, machine=machine)
                records.append(replace(rec, outcome=classify(rec, rec.checksum, golden, eps)))
    return records


def exact_sdc_rate(records: list[TrialRecord]) -> float:
    return sum(r.outcome.is_sdc for r in records) / len(records)
