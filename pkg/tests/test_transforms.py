
import pytest

from tesselogic.compile import SatEvaluator
from tesselogic.errors import FragmentError
from tesselogic.grid import Alphabet, Pattern, Projection, TorusConfig, WindowConfig, all_tori, all_windows, count_occurrences
from tesselogic.harness import equiv_on_tori, gen_formula, gen_sentence, quarter_plane_models
from tesselogic.logic import (
    CLASS_C,
    EMSO_NORMAL,
    Quant,
    Sentence,
    Term,
    classify,
    format_formula,
    has_pseudo_atoms,
    parse,
    parse_formula,
    print_sentence,
    universal_count,
    walk,
)
from tesselogic.semantics import TORUS, evaluate, e_projection_member, models, window_flagged
from tesselogic.transforms import (
    ABSTRACT,
    CONCRETE,
    EQ,
    GEQ,
    analyze_clause,
    clauses_to_formula,
    cnf_clauses,
    colors_to_sets,
    counting_formula,
    eliminate_disequality,
    intersect_emso,
    pattern_sentinel,
    project_formula,
    quarter_plane_clauses,
    quarter_plane_defaults,
    reduce_universals,
    to_cnf,
    union_emso,
)

import random

CHALLENGE = "alphabet white lime blue\nA x. A y. (lime(x) & blue(E1(y))) -> x = y"


def cells_of(ms):
    return {C.cells for C in ms}


def test_to_cnf_distributes(WL):
    f = parse_formula("lime(z) | (white(z@(1,0)) & lime(z@(0,1)))", WL, free_fo={"z"})
    assert format_formula(to_cnf(f)) == "(lime(z) | white(z@(1,0))) & (lime(z) | lime(z@(0,1)))"
    g = parse_formula("(lime(z) | white(z)) & !lime(z@(1,0))", WL, free_fo={"z"})
    assert {frozenset(c) for c in cnf_clauses(to_cnf(g))} == {frozenset(c) for c in cnf_clauses(g)}


def test_to_cnf_preserves_truth(WL):
    rng = random.Random(11)
    tori = list(all_tori(WL, 2, 2))
    for _ in range(100):
        f = gen_formula(rng, WL, ["z"], depth=3, span=1)
        g = to_cnf(f)
        for C in tori:
            for z in C.coords():
                assert evaluate(f, C, env={"z": z}) == evaluate(g, C, env={"z": z})


def test_eliminate_disequality_example():
    s = parse("alphabet white lime blue\nA x. A y. !(x@(1,0) = y) | blue(y)")
    out = eliminate_disequality(s)
    assert print_sentence(out) == "alphabet white lime blue\nA x. blue(x@(1,0))\n"
    plain = parse("alphabet white lime blue\nA x. lime(x) | blue(x@(0,1))")
    assert eliminate_disequality(plain) == plain


def test_same_variable_equalities_are_flagged():
    notes = []
    s = parse("alphabet white lime\nA x. A y. !(x@(1,0) = x) | lime(y)")
    out = eliminate_disequality(s, notes)
    assert out.body.value is True
    assert notes and "x@(1,0) = x" in notes[0]


def test_unfolded_elimination_keeps_wraparound():
    s = parse("alphabet white lime\nA x. A y. !(x@(1,0) = y) | !(y = x) | lime(x)")
    folded, kept = eliminate_disequality(s), eliminate_disequality(s, fold=False)
    assert folded.body.value is True
    # on a width-1 torus x@(1,0) is x itself, so the all-white column is no model
    assert not equiv_on_tori(s, folded, 1, 1, min_w=1, min_h=1).ok
    assert equiv_on_tori(s, kept, 3, 3, min_w=1, min_h=1).ok


def test_reduction_is_torus_exact_with_same_variable_equalities():
    s = gen_sentence(5, CLASS_C, colors=2, p=2, n=1)
    assert equiv_on_tori(s, reduce_universals(s, ABSTRACT), 3, 3, min_w=1, min_h=1).ok


def test_eliminate_disequality_preserves_models():
    A = Alphabet(("white", "lime"))
    for seed in range(12):
        body = gen_formula(random.Random(seed), A, ["x", "y"], depth=2, span=1)
        s = Sentence(A, Quant("A", "x", Quant("A", "y", parse_formula(
            f"!(x@(1,0) = y) | ({format_formula(body)})", A, free_fo={"x", "y"}))))
        assert equiv_on_tori(s, eliminate_disequality(s), 3, 3, min_w=1, min_h=1).ok


def test_clause_analysis_buckets():
    A = Alphabet(("white", "lime", "blue"))
    c = cnf_clauses(parse_formula("!lime(z2) | z2 = z1@(1,0) | blue(z1)", A, free_fo={"z1", "z2"}))[0]
    a = analyze_clause(c, "z2")
    assert len(a.eps) == 1 and len(a.eqs) == 1 and len(a.theta) == 1


def test_reduce_p1_unchanged():
    s = parse("alphabet white lime\nE2 X. A z. X(z) <-> lime(z)")
    assert reduce_universals(s) == s


def test_reduce_challenge_shape_and_equivalence():
    s = parse(CHALLENGE)
    for mode in (ABSTRACT, CONCRETE):
        out = reduce_universals(s, mode)
        assert universal_count(out) == 1 and CLASS_C in classify(out)
        assert has_pseudo_atoms(out.body) == (mode == ABSTRACT)
    out = reduce_universals(s, ABSTRACT)
    rep = equiv_on_tori(s, out, 2, 2)
    assert rep.ok, rep.to_text()


def test_reduce_two_whites():
    s = parse("alphabet white lime\nA x. A y. white(x) | white(y)")
    out = reduce_universals(s)
    assert universal_count(out) == 1
    assert equiv_on_tori(s, out, 2, 2).ok
    # holds iff every cell is white
    assert cells_of(models(s, 2, 2)) == {(0, 0, 0, 0)}


def test_reduce_growth_bound():
    for seed in range(10):
        s = gen_sentence(seed, CLASS_C, colors=2, p=2, n=1)
        s = eliminate_disequality(s)
        if universal_count(s) < 2:
            continue
        out = reduce_universals(s, CONCRETE)
        n_in = sum(1 for g in walk(s.body) if isinstance(g, Quant) and g.second_order)
        n_out = sum(1 for g in walk(out.body) if isinstance(g, Quant) and g.second_order)
        clauses = len(cnf_clauses(_matrix(s)))
        m = max(1, max(len(analyze_clause(c, _inner(s)).eqs) for c in cnf_clauses(_matrix(s))))
        # per clause: S_i, A_i and its mirror for each equality, plus E, X and their mirrors
        assert n_out - n_in <= clauses * (3 * m + 4)


def _matrix(s):
    f = s.body
    while isinstance(f, Quant):
        f = f.body
    return f


def _inner(s):
    f, last = s.body, None
    while isinstance(f, Quant):
        if not f.second_order:
            last = f.var
        f = f.body
    return last


def test_reduce_rejects_non_class_c():
    with pytest.raises(FragmentError):
        reduce_universals(parse("alphabet white lime\nA x. E y. lime(x) | lime(y)"))


def _psi(mirror=None):
    return clauses_to_formula(quarter_plane_clauses("S", "A", Term("x"), mirror))


def _subsets(cells):
    for m in range(1 << len(cells)):
        yield frozenset(c for i, c in enumerate(cells) if m >> i & 1)


def _corners(w, h):
    cells = [(x, y) for y in range(h) for x in range(w)]
    return {frozenset((x, y) for x, y in cells if x >= a and y >= b) for a in range(w) for b in range(h)} | {frozenset()}


def _brute_gadget(W, conv, psi, mirrored):
    cells = list(W.coords())
    out = set()
    for A in _subsets(cells):
        # the mirror equals A inside the window, so only that choice can satisfy the gadget
        for S in _subsets(cells):
            env = {"A": A, "S": S, "B": A} if mirrored else {"A": A, "S": S}
            if all(evaluate(psi, W, conv, {**env, "x": c}) for c in cells):
                out.add((A, S))
    return out


@pytest.mark.parametrize("w, h", [(1, 1), (2, 1), (1, 2), (2, 2), (3, 2), (2, 3)])
def test_mirrored_gadget_bruteforce(WL, w, h):
    conv = window_flagged(quarter_plane_defaults([("A", "B")]))
    W = WindowConfig(WL, w, h, (0,) * (w * h))
    brute = _brute_gadget(W, conv, _psi("B"), True)
    assert brute == set(quarter_plane_models(w, h))
    assert {A for A, _ in brute} == _corners(w, h)


def test_mirror_must_equal_a(WL):
    conv = window_flagged(quarter_plane_defaults([("A", "B")]))
    W = WindowConfig(WL, 2, 2, (0,) * 4)
    psi = _psi("B")
    full = frozenset(W.coords())
    env = {"A": full, "S": frozenset({(0, 0)}), "B": frozenset()}
    assert not all(evaluate(psi, W, conv, {**env, "x": c}) for c in W.coords())


@pytest.mark.parametrize("w, h", [(w, h) for w in range(1, 5) for h in range(1, 5)])
def test_mirrored_gadget_enumeration(w, h):
    models = quarter_plane_models(w, h)
    assert len(models) == w * h + 1
    assert {A for A, _ in models} == _corners(w, h)
    assert all(len(S) <= 1 for _, S in models)
    assert {c for _, S in models for c in S} == {(x, y) for x in range(w) for y in range(h)}


@pytest.mark.parametrize("w, h", [(1, 1), (2, 1), (2, 2), (3, 2)])
def test_unmirrored_gadget_is_pinned_on_windows(WL, w, h):
    """Without the mirror the north-east edge decides A for the whole window."""
    psi = _psi()
    W = WindowConfig(WL, w, h, (0,) * (w * h))
    full = frozenset(W.coords())
    assert _brute_gadget(W, window_flagged({"A": (True, False)}), psi, False) == {(full, frozenset({(0, 0)}))}
    assert _brute_gadget(W, window_flagged({"A": (False, False)}), psi, False) == {(frozenset(), frozenset())}


@pytest.mark.parametrize("w, h", [(1, 1), (2, 1), (2, 2), (3, 2)])
def test_gadget_on_tori_keeps_s_empty(WL, w, h):
    C = TorusConfig(WL, w, h, (0,) * (w * h))
    sols = _brute_gadget(C, TORUS, _psi("B"), True)
    assert {A for A, _ in sols} == {frozenset(), frozenset(C.coords())}
    assert {S for _, S in sols} == {frozenset()}


def _flagged_from_notes(notes):
    d = {}
    for n in notes:
        if n.startswith("window-flagged defaults"):
            for item in n.split()[2:]:
                k, v = item.split("=")
                ne, sw = v.split(",")
                d[k] = (ne == "1", sw == "1")
    return window_flagged(d)


def _window_agreement(s, sizes):
    notes = []
    r = reduce_universals(s, CONCRETE, notes)
    conv = _flagged_from_notes(notes)
    plain = window_flagged({})
    for w, h in sizes:
        ev = SatEvaluator(r, w, h, conv)
        try:
            for W in all_windows(s.alphabet, w, h):
                assert ev(W) == evaluate(s, W, plain), (w, h, W.cells)
        finally:
            ev.close()


def test_concrete_reduction_on_flagged_windows():
    _window_agreement(parse(CHALLENGE), [(2, 2), (3, 2), (2, 3)])
    for seed in range(12):
        s = gen_sentence(seed, CLASS_C, colors=2, p=2, n=1)
        _window_agreement(s, [(2, 2), (3, 2), (2, 3)])


def test_concrete_reduction_needs_room_for_terms():
    # z1@(1,1) names no cell of a one-row window, so substituting it for z2 is unsound there
    s = gen_sentence(23, CLASS_C, colors=2, p=2, n=1)
    assert print_sentence(eliminate_disequality(s)).endswith("A z1. A z2. false\n")
    W = WindowConfig(s.alphabet, 2, 1, (0, 0))
    assert evaluate(s, W, window_flagged({}))


def test_counting_k0_eq_shape(WL):
    s = counting_formula(Pattern.of(WL, {(0, 0): "lime"}), 0, EQ)
    assert print_sentence(s).splitlines()[1] == "A x. !lime(x)"


@pytest.mark.parametrize("mode, op", [(EQ, lambda n, k: n == k), (GEQ, lambda n, k: n >= k)])
def test_counting_twins_match_brute_counts(WL, mode, op):
    pats = [Pattern.of(WL, {(0, 0): "lime"}), Pattern.of(WL, {(0, 0): "lime", (1, 0): "lime"})]
    for P in pats:
        for k in range(3):
            s = counting_formula(P, k, mode, ABSTRACT)
            assert EMSO_NORMAL in classify(s) or k == 0
            for w, h in ((1, 1), (2, 1), (2, 2)):
                got = cells_of(models(s, w, h))
                want = {C.cells for C in all_tori(WL, w, h) if op(count_occurrences(P, C, w * h), k)}
                assert got == want, (mode, k, w, h)


def test_geq_direction_alternative_counts_at_most(WL):
    P = Pattern.of(WL, {(0, 0): "lime"})
    s = counting_formula(P, 1, GEQ, ABSTRACT, geq_direction="occurrence-implies-marked")
    got = cells_of(models(s, 2, 2))
    assert got == {C.cells for C in all_tori(WL, 2, 2) if count_occurrences(P, C, 4) <= 1}


def test_pattern_sentinel(WL):
    assert format_formula(pattern_sentinel(Pattern.of(WL, {(0, 0): "lime"}))) == "lime(z)"
    P = Pattern.of(WL, {(0, 0): "lime", (1, 0): "lime"})
    assert format_formula(pattern_sentinel(P)) == "lime(z) & lime(z@(1,0))"
    from tesselogic.grid import occurs_at
    for C in all_tori(WL, 2, 2):
        for z in C.coords():
            assert evaluate(pattern_sentinel(P), C, env={"z": z}) == occurs_at(P, C, z)


def test_union_and_intersection_examples(WL):
    white = parse("alphabet white lime\nA z. white(z)")
    lime = parse("alphabet white lime\nA z. lime(z)")
    assert cells_of(models(union_emso(white, lime), 1, 1)) == {(0,), (1,)}
    some = parse("alphabet white lime\nE z. lime(z)")
    assert cells_of(models(intersect_emso(some, some), 2, 1)) == cells_of(models(some, 2, 1))
    never = parse("alphabet white lime\nA z. white(z) & lime(z)")
    assert cells_of(models(union_emso(some, never), 2, 1)) == cells_of(models(some, 2, 1))


def test_union_intersection_of_counting_sets(WL):
    P = Pattern.of(WL, {(0, 0): "lime"})
    D = Pattern.of(WL, {(0, 0): "lime", (0, 1): "lime"})
    a, b = counting_formula(P, 1, EQ), counting_formula(D, 0, GEQ)
    c = counting_formula(D, 1, GEQ)
    for x, y in ((a, b), (a, c), (b, c)):
        for w, h in ((1, 1), (2, 1), (1, 2), (2, 2)):
            mx, my = cells_of(models(x, w, h)), cells_of(models(y, w, h))
            assert cells_of(models(union_emso(x, y), w, h)) == mx | my
            assert cells_of(models(intersect_emso(x, y), w, h)) == mx & my


def test_project_formula(WLB):
    G = Alphabet(("white", "gray"))
    pi = Projection.of(WLB, G, {"white": "white", "lime": "gray", "blue": "gray"})
    s = parse("alphabet white lime blue\nE z. lime(z)")
    t = project_formula(pi, s)
    for C in all_tori(G, 2, 1):
        assert evaluate(t, C) == e_projection_member(pi, s, C)
    ident = project_formula(Projection.identity(WLB), s)
    assert cells_of(models(ident, 2, 1)) == cells_of(models(s, 2, 1))


def test_colors_to_sets_round_trip(WL):
    for seed in range(6):
        s = gen_sentence(seed, CLASS_C, colors=WL, n=1)
        t, pi = colors_to_sets(s)
        back = project_formula(pi, t)
        for C in all_tori(WL, 2, 1):
            assert evaluate(back, C) == evaluate(s, C)


def test_concrete_reduction_is_not_torus_faithful():
    # the quarter-plane gadget needs an edge to anchor to; on tori S stays empty
    s = parse(CHALLENGE)
    rep = equiv_on_tori(s, reduce_universals(s, CONCRETE), 2, 1)
    assert not rep.ok and rep.witness.cells == (1, 2)


def _window_count(P, W):
    xs = [o.dx for o, _ in P.cells]
    ys = [o.dy for o, _ in P.cells]
    n = 0
    for y0 in range(-min(ys), W.height - max(ys)):
        for x0 in range(-min(xs), W.width - max(xs)):
            n += all(W.cells[(y0 + o.dy) * W.width + x0 + o.dx] == c for o, c in P.cells)
    return n


@pytest.mark.parametrize("mode", [EQ, GEQ])
def test_concrete_counting_on_flagged_windows(WL, mode):
    for P in (Pattern.of(WL, {(0, 0): "lime"}), Pattern.of(WL, {(0, 0): "lime", (1, 0): "lime"})):
        for k in range(3):
            notes = []
            s = counting_formula(P, k, mode, CONCRETE, notes=notes)
            conv = _flagged_from_notes(notes)
            assert bool(notes) == (k > 0)
            for w, h in ((1, 1), (2, 1), (2, 2), (3, 2), (2, 3)):
                ev = SatEvaluator(s, w, h, conv)
                for W in all_windows(WL, w, h):
                    n = _window_count(P, W)
                    assert ev(W) == (n == k if mode == EQ else n >= k)
                ev.close()
