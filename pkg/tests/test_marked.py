import itertools

import pytest

from tesselogic.compile import SFT, SatEvaluator, formula_to_sft
from tesselogic.errors import AlphabetMismatch, FragmentError, ParseError
from tesselogic.grid import Alphabet, Pattern, Projection, WindowConfig, all_tori, all_windows
from tesselogic.harness import marked_window_suite
from tesselogic.logic import parse
from tesselogic.marked import (
    IntersectNode,
    LayeredSFT,
    LayeredWindow,
    Leaf,
    UnionNode,
    alphabet_size,
    canonical_paint,
    check_completeness,
    check_determinism,
    check_soundness,
    check_zone_rectangle,
    counting_marked_sft,
    emso_to_marked,
    format_marked,
    from_sft,
    intersect_marked,
    is_doubly_marked,
    marked_to_emso,
    marker_cells,
    parse_combination,
    pin_layers,
    projected_acceptance,
    read_marked,
    rectangle,
    union_marked,
    violations,
    window_accepts,
    zone_from_flags,
)
from tesselogic.semantics import WINDOW_ATOM_FALSE, evaluate
from tesselogic.transforms import EQ, GEQ

A2 = Alphabet(("white", "lime"))
LIME = Pattern.of(A2, {(0, 0): "lime"})
DOMINO = Pattern.of(A2, {(0, 0): "lime", (1, 0): "lime"})


def ne_occurrences(P, W):
    """Occurrences inside W, keyed by the upper-right corner of P's box."""
    xs = [o.dx for o, _ in P.cells]
    ys = [o.dy for o, _ in P.cells]
    out = set()
    for y in range(W.height):
        for x in range(W.width):
            ok = True
            for o, c in P.cells:
                px, py = x - max(xs) + o.dx, y - max(ys) + o.dy
                if not (0 <= px < W.width and 0 <= py < W.height) or W.cells[py * W.width + px] != c:
                    ok = False
                    break
            if ok:
                out.add((x, y))
    return out


def oracle_accepts(P, k, mode, W):
    occ = ne_occurrences(P, W)
    cells = [(x, y) for y in range(W.height) for x in range(W.width)]
    for p0, p1 in itertools.permutations(cells, 2):
        if k >= 1 and (p0[0] == p1[0] or p0[1] == p1[1]):
            continue
        zone = {(x, y) for (x, y) in cells
                if min(p0[0], p1[0]) < x <= max(p0[0], p1[0]) and min(p0[1], p1[1]) < y <= max(p0[1], p1[1])}
        if len(occ & zone) != k:
            continue
        if mode == EQ and occ - zone:
            continue
        return True
    return False


def accepted(m, w, h):
    return {W.cells for W in projected_acceptance(m, w, h)}


@pytest.mark.parametrize("P", [LIME, DOMINO], ids=["lime", "domino"])
@pytest.mark.parametrize("mode", [EQ, GEQ])
@pytest.mark.parametrize("k", [0, 1, 2])
def test_projected_acceptance_matches_oracle(P, mode, k):
    m = counting_marked_sft(P, k, mode)
    for w, h in ((2, 2), (3, 2), (2, 3)):
        want = {W.cells for W in all_windows(A2, w, h) if oracle_accepts(P, k, mode, W)}
        assert accepted(m, w, h) == want, (w, h)


def test_frozen_acceptance_counts():
    got = [len(projected_acceptance(counting_marked_sft(LIME, k, mode), 3, 2))
           for mode in (EQ, GEQ) for k in range(3)]
    assert got == [1, 2, 1, 64, 48, 16]


def test_zone_is_half_open_rectangle():
    assert rectangle((0, 0), (2, 2)) == {(1, 1), (1, 2), (2, 1), (2, 2)}
    assert rectangle((2, 2), (0, 0)) == rectangle((0, 0), (2, 2))
    assert rectangle((0, 1), (3, 1)) == set()
    res = check_zone_rectangle(5, 5)
    assert res.ok and res.cases > 0


@pytest.mark.parametrize("P", [LIME, DOMINO], ids=["lime", "domino"])
@pytest.mark.parametrize("mode", [EQ, GEQ])
def test_gadget_checks_small(P, mode):
    for k in (0, 1):
        for fn in (check_soundness, check_completeness, check_determinism):
            r = fn(P, k, mode, 3, 3)
            assert r.ok, r.failures


def test_window_suite_report():
    rep = marked_window_suite(LIME, 1, EQ, [(2, 2), (3, 2)])
    assert rep.ok and rep.visited > 0 and rep.sizes == [(2, 2), (3, 2)]


def test_canonical_paint_is_accepted_and_tampering_is_caught():
    m = counting_marked_sft(LIME, 1, EQ)
    W = WindowConfig(A2, 3, 3, (0, 0, 0, 0, 0, 0, 0, 0, 1))
    L = canonical_paint(W, (0, 0), (2, 2), {(2, 2): 1}, 1)
    assert window_accepts(m, L)
    assert zone_from_flags(L) == rectangle((0, 0), (2, 2))
    assert marker_cells(m, L, 0) == [(0, 0)] and marker_cells(m, L, 1) == [(2, 2)]
    # a second Q0 cell, a stray counter and a dropped counter all break some rule
    for layer, x, y in (("Q0", 1, 0), ("C1", 1, 1), ("C1", 2, 2)):
        T = L.flipped(layer, x, y)
        assert violations(m.sft, T), (layer, x, y)
    # the lime outside the zone is not allowed under EQ
    W2 = WindowConfig(A2, 3, 3, (1, 0, 0, 0, 0, 0, 0, 0, 1))
    assert not window_accepts(m, canonical_paint(W2, (0, 0), (2, 2), {(2, 2): 1}, 1))
    assert window_accepts(counting_marked_sft(LIME, 1, GEQ), canonical_paint(W2, (0, 0), (2, 2), {(2, 2): 1}, 1))


def test_unmarked_window_is_not_accepted():
    m = counting_marked_sft(LIME, 0, EQ)
    L = LayeredWindow(WindowConfig(A2, 1, 1, (0,)), m.sft.layers, (0,))
    assert not is_doubly_marked(m, L)


def test_canonical_paint_validation():
    W = WindowConfig(A2, 3, 3, (0,) * 9)
    with pytest.raises(ValueError):
        canonical_paint(W, (1, 1), (1, 1), {})
    with pytest.raises(ValueError):
        canonical_paint(W, (0, 0), (2, 2), {(0, 0): 1}, 1)


def test_large_patterns_are_rejected():
    with pytest.raises(FragmentError):
        counting_marked_sft(Pattern.of(A2, {(0, 0): "lime", (2, 0): "lime"}), 1)


def _single_cell_brute(sft):
    n = 0
    for c in range(len(sft.base)):
        for bits in range(1 << len(sft.layers)):
            L = LayeredWindow(WindowConfig(sft.base, 1, 1, (c,)), sft.layers, (bits,))
            n += not violations(sft, L)
    return n


def test_alphabet_size_matches_direct_count():
    sft = counting_marked_sft(LIME, 0, EQ).sft
    # 3 x 3 row/column states per marker, minus both points at once; with no
    # counters a lime cell would be an unmarked zone occurrence, so only white remains
    assert alphabet_size(sft) == _single_cell_brute(sft) == 80
    sft = counting_marked_sft(LIME, 0, GEQ).sft
    assert alphabet_size(sft) == _single_cell_brute(sft)
    assert alphabet_size(LayeredSFT(A2, pin_layers("P"), ())) == 64


def test_layered_sft_validation():
    with pytest.raises(ValueError):
        LayeredSFT(A2, ("P", "P"), ())
    with pytest.raises((ValueError, FragmentError)):
        LayeredSFT(A2, ("lime",), ())


def test_union_and_intersection_windows():
    a = counting_marked_sft(LIME, 1, EQ)
    b = counting_marked_sft(DOMINO, 0, GEQ)
    u, i = union_marked(a, b), intersect_marked(a, b)
    assert len(u.sft.base) == 4 and len(i.sft.base) == 2
    assert i.sft.base.colors == ("white__white", "lime__lime")
    for w, h in ((2, 2), (3, 2)):
        A, B = accepted(a, w, h), accepted(b, w, h)
        assert accepted(u, w, h) == A | B
        assert accepted(i, w, h) == A & B


def test_union_with_itself():
    a = counting_marked_sft(LIME, 1, GEQ)
    assert accepted(union_marked(a, a), 2, 2) == accepted(a, 2, 2)


def test_empty_fiber():
    T = Alphabet(("o", "p"))
    B = Alphabet(("red",))
    X = from_sft(SFT(A2), ["white"], ["lime"], Projection.of(A2, T, {"white": "o", "lime": "o"}))
    Y = from_sft(SFT(B), ["red"], ["red"], Projection.of(B, T, {"red": "p"}))
    m = intersect_marked(X, Y)
    assert m.sft.base.colors == ("void",)
    assert accepted(m, 1, 1) == set() and accepted(m, 2, 1) == set()
    with pytest.raises(AlphabetMismatch):
        intersect_marked(X, from_sft(SFT(B), ["red"], ["red"]))


def test_text_round_trip():
    a = counting_marked_sft(LIME, 1, EQ)
    for m in (a, union_marked(a, counting_marked_sft(DOMINO, 0, GEQ)), intersect_marked(a, a)):
        assert read_marked(format_marked(m)) == m
    with pytest.raises(ParseError):
        read_marked("alphabet white\nbase white\nrule r : true\n")


def test_combination_trees():
    pats = {"P": LIME, "D": DOMINO}
    tree = parse_combination("union(eq(P, 1), intersect(geq(D, 0), eq(P, 2)))", pats)
    assert tree == UnionNode(Leaf(LIME, 1, EQ), IntersectNode(Leaf(DOMINO, 0, GEQ), Leaf(LIME, 2, EQ)))
    for bad in ("eq(Q, 1)", "eq(P)", "union(eq(P,1))", "eq(P, 1) x", "nand(eq(P,1), eq(P,1))"):
        with pytest.raises(ParseError):
            parse_combination(bad, pats)
    m = emso_to_marked(parse_combination("union(eq(P, 0), eq(P, 2))", pats))
    want = accepted(counting_marked_sft(LIME, 0, EQ), 3, 2) | accepted(counting_marked_sft(LIME, 2, EQ), 3, 2)
    assert accepted(m, 3, 2) == want


def _sentence_windows(s, w, h):
    ev = SatEvaluator(s, w, h, WINDOW_ATOM_FALSE)
    try:
        return {W.cells for W in all_windows(s.alphabet, w, h) if ev(W)}
    finally:
        ev.close()


@pytest.mark.parametrize("build", [
    lambda: counting_marked_sft(LIME, 1, EQ),
    lambda: counting_marked_sft(DOMINO, 0, GEQ),
    lambda: union_marked(counting_marked_sft(LIME, 0, EQ), counting_marked_sft(LIME, 1, EQ)),
], ids=["eq1", "geq0-domino", "union"])
def test_marked_to_emso_on_windows(build):
    m = build()
    s = marked_to_emso(m, window_guards=True)
    for w, h in ((2, 2), (3, 2)):
        assert _sentence_windows(s, w, h) == accepted(m, w, h)


def test_marked_to_emso_intersection_small():
    m = intersect_marked(counting_marked_sft(LIME, 0, GEQ), counting_marked_sft(LIME, 1, GEQ))
    s = marked_to_emso(m, window_guards=True)
    assert _sentence_windows(s, 2, 2) == accepted(m, 2, 2)


def test_marked_to_emso_from_sft_on_tori():
    full = from_sft(SFT(A2), ["white", "lime"], ["white", "lime"])
    s = marked_to_emso(full)
    for w, h in ((1, 1), (2, 1), (2, 2)):
        assert all(evaluate(s, C) for C in all_tori(A2, w, h))
    nodom = formula_to_sft(parse("alphabet white lime\nA z. !(lime(z) & lime(z@(1,0)))"))
    s = marked_to_emso(from_sft(nodom, ["white", "lime"], ["white", "lime"]))
    for w, h in ((2, 1), (3, 1), (2, 2)):
        for C in all_tori(A2, w, h):
            no_dom = all(not (C.at(x, y) == 1 and C.at(x + 1, y) == 1) for x, y in C.coords())
            assert evaluate(s, C) == no_dom
