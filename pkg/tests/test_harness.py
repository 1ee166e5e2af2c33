import pytest
from hypothesis import given, settings, strategies as st

from tesselogic.compile import formula_to_sft
from tesselogic.grid import Alphabet, TorusConfig, WindowConfig, all_tori
from tesselogic.harness import (
    FAIL,
    INCONCLUSIVE,
    PASS,
    _mask,
    equiv_on_tori,
    gen_assignment,
    gen_open_formula,
    gen_sentence,
    gen_sft,
    gen_torus,
    naive_eval,
    pick_method,
    sft_vs_formula,
)
from tesselogic.logic import CLASS_C, EMSO, EMSO_NORMAL, FO, MSO, UNIV_SFT, classify, parse, print_sentence
from tesselogic.semantics import TORUS, WINDOW_ATOM_FALSE, evaluate, window_flagged

EXISTS = parse("alphabet white lime\nE z. lime(z)")
FORALL = parse("alphabet white lime\nA z. lime(z)")


def test_exists_vs_forall_counterexample():
    rep = equiv_on_tori(EXISTS, FORALL, 3, 3)
    assert rep.verdict == FAIL
    assert rep.sizes == [(1, 1), (2, 1)]
    # the first differing torus in enumeration order: x=0 white, x=1 lime
    assert rep.witness.cells == (0, 1) and rep.values == (True, False)
    assert rep.replay() == rep.values
    assert rep.to_text() == (
        "verdict FAIL\ncheck formula equivalence on tori\nsizes 1x1 2x1\nvisited 4\nvalues 1 0\n"
        "alphabet white lime\ntorus witness 2 1 { white lime }\n"
    )


def test_equivalent_sentences_pass():
    s = parse("alphabet white lime\nA z. lime(z) | white(z)")
    t = parse("alphabet white lime\nA z. !(lime(z) & white(z)) | lime(z)")
    rep = equiv_on_tori(s, t, 3, 3)
    assert rep.verdict == PASS and rep.witness is None
    assert rep.visited == sum(2 ** (w * h) for w in range(1, 4) for h in range(1, 4))


def test_budget_gives_inconclusive():
    rep = equiv_on_tori(EXISTS, EXISTS, 4, 4, budget=100)
    assert rep.verdict == INCONCLUSIVE and rep.notes


def test_methods_agree():
    for seed in range(10):
        s = gen_sentence(seed, FO, colors=2)
        e = gen_sentence(seed, EMSO, colors=2)
        for w, h in ((2, 1), (2, 2)):
            b = _mask(s, w, h, "batch", 10 ** 6)
            assert (b == _mask(s, w, h, "brute", 10 ** 6)).all()
            assert (_mask(e, w, h, "sat", 10 ** 6) == _mask(e, w, h, "brute", 10 ** 6)).all()


def test_pick_method():
    assert pick_method(EXISTS, 2, 2) == "batch"
    assert pick_method(parse("alphabet white lime\nE2 X. A z. X(z)"), 2, 2) == "sat"
    assert pick_method(parse("alphabet white lime\nA2 X. E z. X(z) | lime(z)"), 2, 2) == "brute"


def test_sft_vs_formula_detects_mismatch():
    s = parse("alphabet white lime\nA z. !(lime(z) & lime(z@(1,0)))")
    X = formula_to_sft(s)
    assert sft_vs_formula(X, s, [(2, 2), (3, 1)]).ok
    other = parse("alphabet white lime\nA z. !(lime(z) & lime(z@(0,1)))")
    rep = sft_vs_formula(X, other, [(1, 1), (2, 1), (1, 2)])
    assert rep.verdict == FAIL and rep.replay() == rep.values


@pytest.mark.parametrize("fragment", [UNIV_SFT, CLASS_C, EMSO_NORMAL, FO, EMSO, MSO])
def test_generators_are_deterministic_and_on_target(fragment):
    for seed in range(5):
        a = gen_sentence(seed, fragment)
        assert a == gen_sentence(seed, fragment)
        assert fragment in classify(a)


def test_generator_variety():
    texts = {print_sentence(gen_sentence(seed, UNIV_SFT)) for seed in range(300)}
    assert len(texts) >= 100
    assert gen_torus(3) == gen_torus(3) and gen_sft(4) == gen_sft(4)


def _conventions():
    return [TORUS, WINDOW_ATOM_FALSE, window_flagged({"X": (True, False), "Y": (False, True)})]


def test_naive_evaluator_agrees_on_open_formulas():
    A = Alphabet(("white", "lime"))
    checked = 0
    for seed in range(200):
        f, fo, so = gen_open_formula(seed)
        conv = _conventions()[seed % 3]
        cls = TorusConfig if conv is TORUS else WindowConfig
        G = gen_torus(seed, A, 2 + seed % 2, 2)
        C = cls(A, G.width, G.height, G.cells)
        env = gen_assignment(seed, C, fo, so)
        assert evaluate(f, C, conv, env) == naive_eval(f, C, conv, env), seed
        checked += 1
    assert checked == 200


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([FO, EMSO, MSO]))
def test_naive_evaluator_agrees_on_sentences(seed, fragment):
    s = gen_sentence(seed, fragment, colors=2)
    for C in all_tori(s.alphabet, 2, 1):
        assert evaluate(s, C) == naive_eval(s, C)
