"""The three benchmark kernels: CG, FT and BT-lite.

Each generator emits ``.fasm`` text plus a pseudo-source listing that the
``.loc`` directives point into. The default-size programs are also shipped
as assets under ``assets/`` and ``build_kernel`` loads those by name.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

from ..asm import Program, assemble
from . import bt, cg, ft

KERNELS = {"cg": cg, "ft": ft, "bt": bt}

# label pairs [begin, end) of code that only runs when nranks > 1
_GUARDED = {"cg": [("par_begin", "par_end")], "ft": [], "bt": []}
# labels of the hot accumulate instructions
_DOMINANT = {"cg": ["mv_acc"], "ft": [], "bt": []}


@dataclass(frozen=True)
class KernelSpec:
    name: str
    source: str
    params: dict[str, int]
    pseudo_source: str
    golden: float
    dominant_pcs: tuple[int, ...] = ()
    guarded_ranges: tuple[tuple[int, int], ...] = ()
    notes: dict = field(default_factory=dict)

    def guarded_pcs(self) -> frozenset[int]:
        return frozenset(pc for lo, hi in self.guarded_ranges for pc in range(lo, hi))

    def in_guarded(self, pc: int) -> bool:
        return any(lo <= pc < hi for lo, hi in self.guarded_ranges)


def kernel_names() -> list[str]:
    return sorted(KERNELS)


def resolve_params(name: str, params: dict | None = None) -> dict[str, int]:
    if name not in KERNELS:
        raise ValueError(f"unknown kernel {name!r} (choose from {', '.join(kernel_names())})")
    mod = KERNELS[name]
    out = dict(mod.DEFAULTS)
    for key, value in (params or {}).items():
        if key not in mod.DEFAULTS:
            raise ValueError(f"kernel {name} has no parameter {key!r}")
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"parameter {key} must be an integer, got {value!r}")
        lo, hi = mod.RANGES[key]
        if not lo <= value <= hi:
            raise ValueError(f"parameter {key}={value} outside [{lo}, {hi}]")
        out[key] = value
    return out


def asset_text(filename: str) -> str:
    return resources.files(__package__).joinpath("assets", filename).read_text()


def build_kernel(name: str, params: dict | None = None) -> tuple[Program, KernelSpec]:
    """Assemble kernel ``name``; default sizes come from the shipped assets."""
    full = resolve_params(name, params)
    mod = KERNELS[name]
    if full == mod.DEFAULTS:
        text, pseudo = asset_text(f"{name}.fasm"), asset_text(f"{name}.src")
        golden = None
    else:
        text, pseudo, meta = mod.generate(**full)
        golden = meta["golden"]
    program = assemble(text, f"{name}.fasm")
    if golden is None:
        golden = program.verify.golden
    labels = program.labels
    spec = KernelSpec(
        name=name,
        source=text,
        params=full,
        pseudo_source=pseudo,
        golden=golden,
        dominant_pcs=tuple(labels[lb] for lb in _DOMINANT[name]),
        guarded_ranges=tuple((labels[a], labels[b]) for a, b in _GUARDED[name]),
    )
    return program, spec


def write_assets(directory) -> None:
    """Regenerate the default-size assets (used once when the generators change)."""
    from pathlib import Path

    out = Path(directory)
    for name, mod in KERNELS.items():
        text, pseudo, _ = mod.generate(**mod.DEFAULTS)
        (out / f"{name}.fasm").write_text(text)
        (out / f"{name}.src").write_text(pseudo)
