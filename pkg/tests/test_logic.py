import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tesselogic.errors import FragmentError, ParseError
from tesselogic.grid import Alphabet, all_tori
from tesselogic.harness import gen_formula, gen_sentence
from tesselogic.logic import (
    CLASS_C,
    EMSO,
    EMSO_NORMAL,
    FO,
    MSO,
    QF,
    UNIV_SFT,
    And,
    AtMostOne,
    ColorAt,
    Equal,
    InSet,
    Not,
    Quant,
    Sentence,
    Term,
    classify,
    format_formula,
    free_vars,
    is_prenex,
    nnf,
    parse,
    parse_formula,
    prenex,
    print_sentence,
    substitute,
    universal_count,
)
from tesselogic.semantics import evaluate

import random

HEADER = "alphabet white lime blue olive lightgray\n"


def test_three_consecutive_lime_offsets():
    s = parse(HEADER + "E z. lime(z) & lime(E1(z)) & lime(E1(E1(z)))")
    assert isinstance(s.body, Quant) and s.body.kind == "E"
    atoms = s.body.body.args
    assert [a.term.offset for a in atoms] == [(0, 0), (1, 0), (2, 0)]


def test_vertical_period_two_sentence():
    text = HEADER + """A z. (olive(z) -> olive(N1(N1(z))))
        & (white(z) -> white(N1(N1(z))))
        & (blue(z) -> blue(N1(N1(z))))
        & (lime(z) -> lime(N1(N1(z))))
        & (lightgray(z) -> lightgray(N1(N1(z))))"""
    s = parse(text)
    clauses = s.body.body.args
    assert len(clauses) == 5
    assert all(c.right.term.offset == (0, 2) and c.left.term.offset == (0, 0) for c in clauses)


def test_syntax_error_has_position():
    with pytest.raises(ParseError) as e:
        parse("alphabet white lime\nE z. lime(z")
    assert str(e.value).startswith("2:")


@pytest.mark.parametrize("body", [
    "E z. purple(z)",           # undeclared color
    "E z. lime(y)",             # unbound variable
    "A z. X(z)",                # unbound set variable
    "E lime. lime(lime)",       # binding a color name
    "E z. lime(z) &",           # dangling operator
])
def test_parse_rejects(body):
    with pytest.raises(ParseError):
        parse("alphabet white lime\n" + body)


def test_missing_alphabet_header():
    with pytest.raises(ParseError):
        parse("E z. lime(z)")


def test_term_printing_and_normalization():
    A = Alphabet(("white", "lime"))
    f = parse_formula("lime(N1(N1(W1(z)))) & lime(z@(-1,2)) & lime(N1(S1(E1(W1(z)))))", A, free_fo={"z"})
    assert f.args[0] == f.args[1]
    assert f.args[2].term == Term("z")
    assert format_formula(f.args[2]) == "lime(z)"
    assert format_formula(f.args[0]) == "lime(z@(-1,2))"


def test_classify_examples():
    A = "alphabet white lime blue\n"
    assert classify(parse(A + "A z. !(lime(z) & lime(z@(1,0)))")) == {
        UNIV_SFT, CLASS_C, FO, EMSO, MSO, EMSO_NORMAL}
    challenge = parse(A + "A x. A y. (lime(x) & blue(E1(y))) -> x = y")
    assert classify(challenge) == {CLASS_C, FO, EMSO, MSO}
    assert universal_count(challenge) == 2
    assert classify(parse(A + "A2 X. E z. X(z)")) == {MSO}
    assert classify(parse(A + "E2 X. (A z. X(z) -> lime(z)) & (E y. X(y))")) >= {EMSO, EMSO_NORMAL, MSO}


def test_classify_tag_inclusions():
    for frag in (UNIV_SFT, CLASS_C, FO, EMSO, MSO, EMSO_NORMAL):
        for seed in range(15):
            tags = classify(gen_sentence(seed, frag, p=2 if frag == CLASS_C else 1))
            assert frag in tags
            if UNIV_SFT in tags:
                assert CLASS_C in tags
            if CLASS_C in tags:
                assert EMSO in tags
            if EMSO in tags:
                assert MSO in tags
            if FO in tags:
                assert EMSO in tags
            assert QF not in tags


def test_prenex_examples():
    A = "alphabet white lime\n"
    s = parse(A + "A z. E y. lime(z) | lime(y)")
    assert prenex(s) == s
    p = prenex(parse(A + "(E z. lime(z)) & (E z. !lime(z))"))
    assert print_sentence(p).splitlines()[1] == "E z. E z1. lime(z) & !lime(z1)"
    assert is_prenex(p.body)


def test_prenex_rejects_pseudo_atom_crossing():
    A = Alphabet(("white", "lime"))
    f = And((AtMostOne("X"), Quant("A", "z", InSet("X", Term("z")))))
    with pytest.raises(FragmentError):
        prenex(Sentence(A, Quant("E", "X", f, True)))


def test_prenex_preserves_models():
    A = Alphabet(("white", "lime"))
    tori = list(all_tori(A, 2, 2))
    for seed in range(100):
        s = gen_sentence(seed, FO if seed % 2 else EMSO, colors=A, depth=2)
        p = prenex(s)
        assert is_prenex(p.body)
        for C in tori[::3]:
            assert evaluate(s, C) == evaluate(p, C)


def test_substitute_avoids_capture():
    A = Alphabet(("white", "lime"))
    f = parse_formula("E y. lime(x) & !lime(y@(1,0))", A, free_fo={"x"})
    g = substitute(f, {"x": Term("y", 1, 0)})
    assert free_vars(g) == ({"y"}, set())
    assert g.var != "y"
    C = list(all_tori(A, 3, 1))[5]
    for y in range(3):
        env = {"y": (y, 0)}
        assert evaluate(g, C, env=env) == evaluate(f, C, env={"x": ((y + 1) % 3, 0)})


def test_nnf_pushes_negation():
    A = Alphabet(("white", "lime"))
    f = parse_formula("!(A x. lime(x) -> (white(x) <-> lime(x@(0,1))))", A)
    g = nnf(f)
    for node in _walk(g):
        if isinstance(node, Not):
            assert isinstance(node.arg, (ColorAt, InSet, Equal, AtMostOne))
    for C in all_tori(A, 2, 2):
        assert evaluate(f, C) == evaluate(g, C)


def _walk(f):
    from tesselogic.logic import walk
    return walk(f)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000))
def test_print_parse_round_trip(seed):
    frag = [UNIV_SFT, CLASS_C, FO, EMSO, MSO, EMSO_NORMAL][seed % 6]
    s = gen_sentence(seed, frag, colors=3, p=2 if frag == CLASS_C else 1, n=2)
    assert parse(print_sentence(s)) == s


def test_round_trip_with_pseudo_atoms_and_equalities():
    A = Alphabet(("white", "lime"))
    rng = random.Random(4)
    for _ in range(30):
        f = gen_formula(rng, A, ["x", "y"], ["X"], depth=3, span=2, equalities=True)
        s = Sentence(A, Quant("E", "X", Quant("A", "x", Quant("E", "y", And((f, AtMostOne("X"))))), True))
        assert parse(print_sentence(s)) == s
