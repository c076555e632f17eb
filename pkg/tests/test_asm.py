import pytest
from hypothesis import given
from hypothesis import strategies as st

from faultline.asm import AsmError, SourceLoc, assemble, format_listing
from faultline.isa import Op, float_to_bits, to_signed64
from faultline.kernels import build_kernel


def test_self_loop_resolves():
    p = assemble("L: jmp L\nhalt")
    assert len(p) == 2
    assert p.instructions[0].targets() == [0]


def test_loc_attribution_and_default():
    src = "fmovi f0, 1.0\n.loc main.c 42\nfadd f1, f0, f0\nfmul f2, f0, f0\nhalt\n"
    p = assemble(src, "t.fasm")
    assert p.debug[0] == SourceLoc("t.fasm", 1)
    assert p.debug[1] == SourceLoc("main.c", 42)
    assert p.debug[2] == SourceLoc("main.c", 42)
    assert len(p.debug) == len(p.instructions)


def test_undefined_label_names_label_and_line():
    with pytest.raises(AsmError) as ei:
        assemble("li r0, 1\njmp end\n")
    assert ei.value.diagnostics == [(2, "undefined label 'end'")]
    assert "end" in str(ei.value)


@pytest.mark.parametrize(
    "src, line, fragment",
    [
        ("frob r1\n", 1, "unknown mnemonic"),
        ("halt\nfadd f0, f1\n", 2, "expects 3"),
        ("a: halt\na: halt\n", 2, "duplicate label"),
        (".verify f0 AUTO 1e-8\n.verify f0 AUTO 1e-8\nhalt\n", 2, "duplicate .verify"),
        ("ld r1, [r99]\n", 1, "register"),
        (".verify f0 1.0 2.0\nhalt\n", 1, "epsilon"),
        (".bogus 1\n", 1, "unknown directive"),
        (".mem 4\n.data 10 1\nhalt\n", 2, "outside memory"),
    ],
)
def test_diagnostics(src, line, fragment):
    with pytest.raises(AsmError) as ei:
        assemble(src)
    lines = [ln for ln, _ in ei.value.diagnostics]
    assert line in lines
    assert any(fragment in msg for _, msg in ei.value.diagnostics)


def test_errors_are_collected_not_first_only():
    with pytest.raises(AsmError) as ei:
        assemble("frob\nhalt\nzap r1\njmp nowhere\n")
    assert [ln for ln, _ in ei.value.diagnostics] == [1, 3, 4]


def test_data_words_and_verify():
    p = assemble(".data 3 7 -2 1.5 0x7ff8000000000000\n.verify f31 AUTO 1e-8\n.nranks 4\nhalt\n")
    assert p.data[3] == 7 and p.data[4] == -2
    assert p.data[5] == to_signed64(float_to_bits(1.5))
    assert p.data[6] == 0x7FF8000000000000
    assert p.verify.freg == 31 and p.verify.golden is None and p.verify.epsilon == 1e-8
    assert p.nranks_default == 4
    img = p.memory_image()
    assert len(img) == p.mem_words and img[0] == 0


def test_entry_and_memory_operands():
    p = assemble(".entry go\nhalt\ngo: ld r1, [r2+3]\nst r1, [r2-1]\nfld f0, [12]\nhalt\n")
    assert p.entry == 1
    assert p.instructions[1].args == (1, 2, 3)
    assert p.instructions[2].args == (1, 2, -1)
    assert p.instructions[3].args == (0, -1, 12)


def test_listing_format():
    p = assemble("halt\n", "x.fasm")
    assert format_listing(p) == "0x00000000  halt    x.fasm:1\n"
    assert format_listing(assemble("; nothing\n")) == ""


def test_listing_round_trip_small():
    src = "top: li r1, 3\nfmovi f0, -0.5\nloop: fadd f1, f1, f0\naddi r1, r1, -1\nbne r1, r0, loop\nfst f1, [r0+7]\ncall top2\nhalt\ntop2: ret\n"
    p = assemble(src, "s.fasm")
    q = assemble(format_listing(p), "listing")
    assert q.instructions == p.instructions
    assert q.debug == p.debug
    assert format_listing(q) == format_listing(p)


@pytest.mark.parametrize("name", ["cg", "ft", "bt"])
def test_listing_round_trip_kernels(name):
    p, _ = build_kernel(name)
    q = assemble(format_listing(p))
    assert q.instructions == p.instructions
    assert q.debug == p.debug


MNEMS = [op.mnemonic for op in Op]
tokens = st.sampled_from(MNEMS + ["r1", "f2", "[r3+4]", "L", "L:", ",", "0x1F", "1.5", "-7", ".loc", ".data", ".verify", "AUTO", "]", "[", ";"])


@given(st.lists(st.lists(tokens, max_size=6).map(" ".join), max_size=12).map("\n".join))
def test_fuzz_never_crashes(src):
    try:
        p = assemble(src)
    except AsmError as exc:
        assert exc.diagnostics and all(line >= 1 for line, _ in exc.diagnostics)
    else:
        assert len(p.debug) == len(p.instructions)
        for ins in p.instructions:
            assert all(0 <= t < len(p) for t in ins.targets())


@given(st.text(max_size=200))
def test_fuzz_arbitrary_text(src):
    try:
        assemble(src)
    except AsmError as exc:
        assert all(line >= 1 for line, _ in exc.diagnostics)
