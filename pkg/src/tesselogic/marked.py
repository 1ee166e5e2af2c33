"""Doubly-marked finite-type gadgets for counting sets, with union,
intersection and window-level oracles.

A layered SFT is a base alphabet plus named boolean layers constrained by
local rules. Each rule is a quantifier-free formula in the variable ``z``
over base color atoms and layer atoms at offsets from ``z``; a window
satisfies the rule when every anchor whose offsets all fall inside the
window makes the formula true. Rule domains always fit in a 2 x 2 square.

The markers ``q0``/``q1`` are single-cell predicates; a window is doubly
marked when some cell satisfies each.

Position gadget ("pinpoint" with prefix P): layers P, P_n, P_s, P_e, P_w.
The row state of a cell is S (P_s), 0, or N (P_n) and is constant along
rows; going north it may only step S->S, S->0, 0->N, N->N. Column states
W/0/E behave the same going east. P holds exactly at the cell in the 0
row and 0 column, so at most one such cell exists and the tags of every
cell say whether it lies strictly north/south/east/west of it.
"""

from __future__ import annotations

import itertools
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from pysat.card import CardEnc, EncType

from .errors import AlphabetMismatch, FragmentError, ParseError
from .grid import Alphabet, Offset, Pattern, Projection, WindowConfig
from .logic import (
    FALSE,
    TRUE,
    And,
    AtMostOne,
    ColorAt,
    Const,
    Equal,
    Formula,
    Iff,
    Implies,
    InSet,
    Not,
    Or,
    Quant,
    Sentence,
    Term,
    children,
    format_formula,
    mk_and,
    mk_not,
    mk_or,
    offsets_used,
    parse_formula,
    prenex,
    quantify,
    rebuild,
    terms_of,
    walk,
)
from .semantics import WINDOW_ATOM_FALSE, shift_table
from .solver import CnfBuilder, Grounding
from .transforms import EQ, GEQ, pattern_sentinel, project_formula

log = logging.getLogger(__name__)

Z = Term("z")


def _at(layer: str, dx: int = 0, dy: int = 0) -> Formula:
    return InSet(layer, Term("z", dx, dy))


@dataclass(frozen=True)
class LocalRule:
    name: str
    body: Formula

    @property
    def domain(self) -> tuple[Offset, ...]:
        offs = offsets_used(self.body) | {Offset(0, 0)}
        return tuple(sorted((Offset(*o) for o in offs), key=lambda o: (o.dy, o.dx)))


@dataclass(frozen=True)
class LayeredSFT:
    base: Alphabet
    layers: tuple[str, ...]
    rules: tuple[LocalRule, ...]

    def __post_init__(self):
        if len(set(self.layers)) != len(self.layers):
            raise ValueError("duplicate layer names")
        clash = set(self.layers) & set(self.base.colors)
        if clash:
            raise ValueError(f"layer names clash with colors: {sorted(clash)}")
        known = set(self.layers)
        for r in self.rules:
            for g in walk(r.body):
                if isinstance(g, InSet) and g.var not in known:
                    raise ValueError(f"rule {r.name} mentions unknown layer {g.var}")
                if isinstance(g, ColorAt) and g.color not in self.base:
                    raise ValueError(f"rule {r.name} mentions unknown color {g.color}")
                if isinstance(g, (Quant, AtMostOne)):
                    raise ValueError(f"rule {r.name} must be quantifier-free")
                for t in terms_of(g):
                    if t.var != "z":
                        raise ValueError(f"rule {r.name} must only use the variable z")


@dataclass(frozen=True)
class DoublyMarkedSFT:
    sft: LayeredSFT
    q0: Formula
    q1: Formula


@dataclass(frozen=True)
class MarkedSoficRepr:
    marked: DoublyMarkedSFT
    pi: Projection

    def __post_init__(self):
        if self.pi.source != self.marked.sft.base:
            raise AlphabetMismatch("projection source must be the base alphabet")

    @property
    def sft(self) -> LayeredSFT:
        return self.marked.sft

    @property
    def target(self) -> Alphabet:
        return self.pi.target


@dataclass(frozen=True)
class LayeredWindow:
    base: WindowConfig
    layers: tuple[str, ...]
    bits: tuple[int, ...]

    @property
    def width(self) -> int:
        return self.base.width

    @property
    def height(self) -> int:
        return self.base.height

    def has(self, layer: str, x: int, y: int) -> bool:
        i = self.layers.index(layer)
        return bool((self.bits[y * self.width + x] >> i) & 1)

    def cells_with(self, layer: str) -> list[tuple[int, int]]:
        i = self.layers.index(layer)
        return [(j % self.width, j // self.width) for j, b in enumerate(self.bits) if (b >> i) & 1]

    def flipped(self, layer: str, x: int, y: int) -> "LayeredWindow":
        i = self.layers.index(layer)
        bits = list(self.bits)
        bits[y * self.width + x] ^= 1 << i
        return LayeredWindow(self.base, self.layers, tuple(bits))


def from_sft(sft, q0: Iterable[str], q1: Iterable[str], pi: Projection | None = None) -> MarkedSoficRepr:
    """Wrap an explicit SFT with marker color subsets."""
    alphabet = sft.alphabet
    rules = tuple(LocalRule(f"forbid{i}", mk_not(pattern_sentinel(P))) for i, P in enumerate(sft.forbidden))
    layered = LayeredSFT(alphabet, (), rules)
    m0 = mk_or(ColorAt(c, Z) for c in q0)
    m1 = mk_or(ColorAt(c, Z) for c in q1)
    return MarkedSoficRepr(DoublyMarkedSFT(layered, m0, m1), pi or Projection.identity(alphabet))


# ---------------------------------------------------------------------------
# the position gadget


def pin_layers(p: str) -> tuple[str, ...]:
    return (p, f"{p}_n", f"{p}_s", f"{p}_e", f"{p}_w")


def pin_rules(p: str) -> list[LocalRule]:
    P, n, s, e, w = pin_layers(p)
    return [
        LocalRule(f"{p}.row_state", Not(And((_at(n), _at(s))))),
        LocalRule(f"{p}.col_state", Not(And((_at(e), _at(w))))),
        LocalRule(f"{p}.point", Iff(_at(P), mk_and([Not(_at(n)), Not(_at(s)), Not(_at(e)), Not(_at(w))]))),
        LocalRule(f"{p}.row_n_const", Iff(_at(n), _at(n, 1, 0))),
        LocalRule(f"{p}.row_s_const", Iff(_at(s), _at(s, 1, 0))),
        LocalRule(f"{p}.col_e_const", Iff(_at(e), _at(e, 0, 1))),
        LocalRule(f"{p}.col_w_const", Iff(_at(w), _at(w, 0, 1))),
        LocalRule(f"{p}.n_stays", Implies(_at(n), _at(n, 0, 1))),
        LocalRule(f"{p}.s_from_s", Implies(_at(s, 0, 1), _at(s))),
        LocalRule(f"{p}.zero_once", Implies(Not(_at(s)), _at(n, 0, 1))),
        LocalRule(f"{p}.no_s_to_n", Not(And((_at(s), _at(n, 0, 1))))),
        LocalRule(f"{p}.e_stays", Implies(_at(e), _at(e, 1, 0))),
        LocalRule(f"{p}.w_from_w", Implies(_at(w, 1, 0), _at(w))),
        LocalRule(f"{p}.zero_once_col", Implies(Not(_at(w)), _at(e, 1, 0))),
        LocalRule(f"{p}.no_w_to_e", Not(And((_at(w), _at(e, 1, 0))))),
    ]


def paint_pin(p: str, pos: tuple[int, int] | None, x: int, y: int) -> dict[str, bool]:
    """Intended layer values at (x, y) for a gadget whose point is pos."""
    P, n, s, e, w = pin_layers(p)
    if pos is None:
        return {P: False, n: False, s: True, e: False, w: True}
    x0, y0 = pos
    return {P: (x, y) == (x0, y0), n: y > y0, s: y < y0, e: x > x0, w: x < x0}


def zone_formula(a: str = "Q0", b: str = "Q1") -> Formula:
    return And((Not(Iff(_at(f"{a}_n"), _at(f"{b}_n"))), Not(Iff(_at(f"{a}_e"), _at(f"{b}_e")))))


def rectangle(pos0: tuple[int, int], pos1: tuple[int, int]) -> set[tuple[int, int]]:
    """Cells strictly beyond the lower/left marker coordinate, up to and including the upper/right one."""
    (x0, y0), (x1, y1) = pos0, pos1
    return {
        (x, y)
        for x in range(min(x0, x1) + 1, max(x0, x1) + 1)
        for y in range(min(y0, y1) + 1, max(y0, y1) + 1)
    }


# ---------------------------------------------------------------------------
# counting gadget


def counting_layers(k: int) -> tuple[str, ...]:
    out = pin_layers("Q0") + pin_layers("Q1")
    for i in range(1, k + 1):
        out += pin_layers(f"C{i}")
    return out


def occurrence_formula(P: Pattern) -> Formula:
    """P occurs with its bounding box's upper-right corner at z."""
    _, _, x_hi, y_hi = P.bbox()
    return pattern_sentinel(P.shifted((-x_hi, -y_hi)), "z")


def counting_marked_sft(P: Pattern, k: int, mode: str = EQ, base: Alphabet | None = None) -> MarkedSoficRepr:
    """Layered SFT whose doubly-marked windows hold exactly k occurrences of P in the marker zone.

    EQ additionally forbids occurrences outside the zone. Occurrences are
    anchored at the upper-right cell of P's bounding box.
    """
    mode = mode.upper()
    if mode not in (EQ, GEQ):
        raise ValueError(f"unknown mode {mode!r}")
    if k < 0:
        raise ValueError("k must be nonnegative")
    base = base or P.alphabet
    if base != P.alphabet:
        raise AlphabetMismatch("pattern must be over the base alphabet")
    x_lo, y_lo, x_hi, y_hi = P.bbox()
    if x_hi - x_lo > 1 or y_hi - y_lo > 1:
        raise FragmentError("pattern must fit in a 2 x 2 box to keep rules radius-1")
    occ = occurrence_formula(P)
    zone = zone_formula()
    rules = pin_rules("Q0") + pin_rules("Q1")
    rules.append(LocalRule("markers_exclusive", Not(And((_at("Q0"), _at("Q1"))))))
    counters = [f"C{i}" for i in range(1, k + 1)]
    if k >= 1:
        rules.append(LocalRule("markers_distinct_rows", Implies(_at("Q0"), Or((_at("Q1_n"), _at("Q1_s"))))))
        rules.append(LocalRule("markers_distinct_cols", Implies(_at("Q0"), Or((_at("Q1_e"), _at("Q1_w"))))))
    for c in counters:
        rules += pin_rules(c)
        rules += [
            LocalRule(f"{c}.north_of_zone", Implies(And((_at("Q0_n"), _at("Q1_n"))), _at(f"{c}_n"))),
            LocalRule(f"{c}.south_of_zone", Implies(And((Not(_at("Q0_n")), Not(_at("Q1_n")))), _at(f"{c}_s"))),
            LocalRule(f"{c}.east_of_zone", Implies(And((_at("Q0_e"), _at("Q1_e"))), _at(f"{c}_e"))),
            LocalRule(f"{c}.west_of_zone", Implies(And((Not(_at("Q0_e")), Not(_at("Q1_e")))), _at(f"{c}_w"))),
            LocalRule(f"{c}.top_row_q0", Implies(And((_at("Q0"), _at("Q1_n"))), Not(_at(f"{c}_s")))),
            LocalRule(f"{c}.top_row_q1", Implies(And((_at("Q1"), _at("Q0_n"))), Not(_at(f"{c}_s")))),
            LocalRule(f"{c}.right_col_q0", Implies(And((_at("Q0"), _at("Q1_e"))), Not(_at(f"{c}_w")))),
            LocalRule(f"{c}.right_col_q1", Implies(And((_at("Q1"), _at("Q0_e"))), Not(_at(f"{c}_w")))),
            LocalRule(f"{c}.in_zone", Implies(_at(c), zone)),
            LocalRule(f"{c}.on_occurrence", Implies(_at(c), occ)),
        ]
    for a, b in itertools.combinations(counters, 2):
        rules.append(LocalRule(f"{a}.{b}.exclusive", Not(And((_at(a), _at(b))))))
    rules.append(LocalRule("zone_occurrences_marked", Implies(And((occ, zone)), mk_or(_at(c) for c in counters))))
    if mode == EQ:
        rules.append(LocalRule("occurrences_in_zone", Implies(occ, zone)))
    sft = LayeredSFT(base, counting_layers(k), tuple(rules))
    return MarkedSoficRepr(DoublyMarkedSFT(sft, _at("Q0"), _at("Q1")), Projection.identity(base))


def canonical_paint(base: WindowConfig, pos0: tuple[int, int], pos1: tuple[int, int],
                    assignment: Mapping[tuple[int, int], int], k: int | None = None) -> LayeredWindow:
    """Intended gadget layers for markers at pos0/pos1 and counters at the assigned cells.

    assignment maps occurrence cells to counter indices 1..k. Counters
    without a cell are painted south/west everywhere.
    """
    if tuple(pos0) == tuple(pos1):
        raise ValueError("marker positions must differ")
    k = max(assignment.values(), default=0) if k is None else k
    if len(set(assignment.values())) != len(assignment):
        raise ValueError("counter indices must be distinct")
    zone = rectangle(pos0, pos1)
    where: dict[int, tuple[int, int]] = {}
    for cell, i in assignment.items():
        if not 1 <= i <= k:
            raise ValueError(f"counter index {i} outside 1..{k}")
        if tuple(cell) not in zone:
            raise ValueError(f"assigned cell {tuple(cell)} is outside the zone")
        where[i] = tuple(cell)
    layers = counting_layers(k)
    pos = {name: i for i, name in enumerate(layers)}
    bits = []
    for y in range(base.height):
        for x in range(base.width):
            vals = paint_pin("Q0", pos0, x, y)
            vals.update(paint_pin("Q1", pos1, x, y))
            for i in range(1, k + 1):
                vals.update(paint_pin(f"C{i}", where.get(i), x, y))
            b = 0
            for name, v in vals.items():
                if v:
                    b |= 1 << pos[name]
            bits.append(b)
    return LayeredWindow(base, layers, tuple(bits))


def zone_from_flags(L: LayeredWindow, a: str = "Q0", b: str = "Q1") -> set[tuple[int, int]]:
    out = set()
    for y in range(L.height):
        for x in range(L.width):
            if (L.has(f"{a}_n", x, y) != L.has(f"{b}_n", x, y)) and (L.has(f"{a}_e", x, y) != L.has(f"{b}_e", x, y)):
                out.add((x, y))
    return out


def occurrence_cells(P: Pattern, W: WindowConfig) -> set[tuple[int, int]]:
    """Upper-right anchors of occurrences of P lying fully inside W."""
    _, _, x_hi, y_hi = P.bbox()
    Q = P.shifted((-x_hi, -y_hi))
    out = set()
    for y in range(W.height):
        for x in range(W.width):
            if all(W.at(x + o.dx, y + o.dy) == c for o, c in Q.cells):
                out.add((x, y))
    return out


# ---------------------------------------------------------------------------
# direct window checking


def _compile_rule(body: Formula, base: Alphabet, layers: tuple[str, ...], tables: dict):
    """Closure (base_cells, bits, anchor) -> bool for an anchor with the whole domain inside."""
    if isinstance(body, Const):
        v = body.value
        return lambda cs, bs, a: v
    if isinstance(body, ColorAt):
        tbl, cid = tables[body.term.offset], base.index(body.color)
        return lambda cs, bs, a: cs[tbl[a]] == cid
    if isinstance(body, InSet):
        tbl, li = tables[body.term.offset], layers.index(body.var)
        return lambda cs, bs, a: (bs[tbl[a]] >> li) & 1 == 1
    if isinstance(body, Equal):
        t1, t2 = tables[body.left.offset], tables[body.right.offset]
        return lambda cs, bs, a: t1[a] == t2[a]
    parts = [_compile_rule(c, base, layers, tables) for c in children(body)]
    if isinstance(body, Not):
        p = parts[0]
        return lambda cs, bs, a: not p(cs, bs, a)
    if isinstance(body, And):
        return lambda cs, bs, a: all(p(cs, bs, a) for p in parts)
    if isinstance(body, Or):
        return lambda cs, bs, a: any(p(cs, bs, a) for p in parts)
    if isinstance(body, Implies):
        p, q = parts
        return lambda cs, bs, a: (not p(cs, bs, a)) or q(cs, bs, a)
    if isinstance(body, Iff):
        p, q = parts
        return lambda cs, bs, a: p(cs, bs, a) == q(cs, bs, a)
    raise TypeError(f"unexpected rule node {body!r}")


def inside_anchors(domain: Iterable[Offset], w: int, h: int) -> list[int]:
    dom = list(domain)
    out = []
    for y in range(h):
        for x in range(w):
            if all(0 <= x + o.dx < w and 0 <= y + o.dy < h for o in dom):
                out.append(y * w + x)
    return out


def violations(sft: LayeredSFT, L: LayeredWindow) -> list[tuple[str, tuple[int, int]]]:
    """(rule name, anchor) for every violated rule instance fully inside the window."""
    if L.base.alphabet != sft.base or tuple(L.layers) != tuple(sft.layers):
        raise AlphabetMismatch("layered window does not match the layered SFT")
    w, h = L.width, L.height
    out = []
    for rule in sft.rules:
        tables = {o: shift_table(w, h, False, o.dx, o.dy) for o in rule.domain}
        fn = _compile_rule(rule.body, sft.base, sft.layers, tables)
        for a in inside_anchors(rule.domain, w, h):
            if not fn(L.base.cells, L.bits, a):
                out.append((rule.name, (a % w, a // w)))
    return out


def window_satisfies(m: MarkedSoficRepr | LayeredSFT, L: LayeredWindow) -> bool:
    sft = m.sft if isinstance(m, MarkedSoficRepr) else m
    return not violations(sft, L)


def marker_cells(m: MarkedSoficRepr, L: LayeredWindow, which: int) -> list[tuple[int, int]]:
    pred = m.marked.q0 if which == 0 else m.marked.q1
    tables = {Offset(0, 0): shift_table(L.width, L.height, False, 0, 0)}
    fn = _compile_rule(pred, m.sft.base, m.sft.layers, tables)
    return [(j % L.width, j // L.width) for j in range(L.width * L.height) if fn(L.base.cells, L.bits, j)]


def is_doubly_marked(m: MarkedSoficRepr, L: LayeredWindow) -> bool:
    return bool(marker_cells(m, L, 0)) and bool(marker_cells(m, L, 1))


def window_accepts(m: MarkedSoficRepr, L: LayeredWindow) -> bool:
    return window_satisfies(m, L) and is_doubly_marked(m, L)


# ---------------------------------------------------------------------------
# SAT encoding of a window


class WindowEncoder:
    """CNF for 'a layered w x h window satisfies every rule (and is doubly marked)'."""

    def __init__(self, m: MarkedSoficRepr, width: int, height: int, require_marks: bool = True):
        self.m = m
        self.w, self.h = width, height
        self.n = width * height
        sft = m.sft
        b = self.b = CnfBuilder()
        base = sft.base.colors
        for j in range(self.n):
            lits = [b.var(("c", j, c)) for c in base]
            b.add(lits)
            for x, y in itertools.combinations(lits, 2):
                b.add([-x, -y])
        for layer in sft.layers:
            for j in range(self.n):
                b.var(("s", layer, j))
        self.g = Grounding(b, width, height, WINDOW_ATOM_FALSE)
        for rule in sft.rules:
            for a in inside_anchors(rule.domain, width, height):
                b.add([self.g.ground(rule.body, {"z": a})])
        self.q0 = [self.g.ground(m.marked.q0, {"z": j}) for j in range(self.n)]
        self.q1 = [self.g.ground(m.marked.q1, {"z": j}) for j in range(self.n)]
        if require_marks:
            b.add(self.q0)
            b.add(self.q1)
        self._solver = None

    def color(self, j: int, c: str) -> int:
        return self.b.var(("c", j, c))

    def layer(self, name: str, j: int) -> int:
        return self.b.var(("s", name, j))

    def ground(self, f: Formula, anchor: int):
        return self.g.ground(f, {"z": anchor})

    @property
    def solver(self):
        if self._solver is None:
            self._solver = self.b.solver()
        return self._solver

    def target_assumptions(self, W: WindowConfig) -> list[int]:
        pi = self.m.pi
        if W.alphabet != pi.target or (W.width, W.height) != (self.w, self.h):
            raise AlphabetMismatch("window does not match the encoder")
        out = []
        for j, t in enumerate(W.cells):
            for i, c in enumerate(pi.source.colors):
                if pi.mapping[i] != t:
                    out.append(-self.color(j, c))
        return out

    def base_assumptions(self, W: WindowConfig) -> list[int]:
        return [self.color(j, W.alphabet.colors[c]) for j, c in enumerate(W.cells)]

    def accepts_target(self, W: WindowConfig) -> bool:
        return bool(self.solver.solve(assumptions=self.target_assumptions(W)))

    def decode(self, model: Iterable[int]) -> LayeredWindow:
        true = {v for v in model if v > 0}
        sft = self.m.sft
        cells, bits = [], []
        for j in range(self.n):
            cells.append(next(i for i, c in enumerate(sft.base.colors) if self.color(j, c) in true))
            bj = 0
            for li, layer in enumerate(sft.layers):
                if self.layer(layer, j) in true:
                    bj |= 1 << li
            bits.append(bj)
        return LayeredWindow(WindowConfig(sft.base, self.w, self.h, tuple(cells)), sft.layers, tuple(bits))

    def find(self, assumptions: Iterable[int] = ()) -> LayeredWindow | None:
        if self.solver.solve(assumptions=list(assumptions)):
            return self.decode(self.solver.get_model())
        return None

    def close(self):
        if self._solver is not None:
            self._solver.delete()
            self._solver = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def projected_acceptance(m: MarkedSoficRepr, w: int, h: int) -> list[WindowConfig]:
    """Target windows that are the projection of some accepted layered window."""
    enc = WindowEncoder(m, w, h)
    out = []
    for cells in itertools.product(range(len(m.target)), repeat=w * h):
        W = WindowConfig(m.target, w, h, cells)
        if enc.accepts_target(W):
            out.append(W)
    enc.close()
    return out


def alphabet_size(sft: LayeredSFT, limit: int = 100_000) -> int:
    """Number of (base color, layer bits) cells that pass every single-cell rule."""
    dummy = MarkedSoficRepr(DoublyMarkedSFT(sft, TRUE, TRUE), Projection.identity(sft.base))
    enc = WindowEncoder(dummy, 1, 1, require_marks=False)
    keys = [enc.color(0, c) for c in sft.base.colors] + [enc.layer(l, 0) for l in sft.layers]
    count = 0
    s = enc.solver
    while s.solve():
        model = set(s.get_model())
        count += 1
        if count > limit:
            raise FragmentError("alphabet enumeration limit reached")
        s.add_clause([-v if v in model else v for v in keys])
    enc.close()
    return count


# ---------------------------------------------------------------------------
# union and intersection


def _lift_rule(rule: LocalRule, color_map: Mapping[str, Formula], layer_map: Mapping[str, str], prefix: str,
               guard=None) -> LocalRule:
    def go(f):
        if isinstance(f, ColorAt):
            return _shift_formula(color_map[f.color], f.term)
        if isinstance(f, InSet):
            return InSet(layer_map[f.var], f.term)
        if isinstance(f, (Const, Equal)):
            return f
        return rebuild(f, [go(c) for c in children(f)])

    body = go(rule.body)
    if guard is not None:
        body = Implies(mk_and(guard(o) for o in rule.domain), body)
    return LocalRule(f"{prefix}{rule.name}", body)


def _shift_formula(f: Formula, t: Term) -> Formula:
    """f is written at z; move it to term t."""
    from .logic import map_terms

    return map_terms(f, lambda u: Term(t.var, t.dx + u.dx, t.dy + u.dy))


def union_marked(a: MarkedSoficRepr, b: MarkedSoficRepr) -> MarkedSoficRepr:
    """Disjoint union of alphabets; adjacent cells share a side."""
    if a.target != b.target:
        raise AlphabetMismatch("union needs a common target alphabet")
    sides = []
    colors: list[str] = []
    layers: list[str] = []
    mapping: list[int] = []
    for tag, m in (("u0", a), ("u1", b)):
        cmap = {c: f"{tag}_{c}" for c in m.sft.base.colors}
        lmap = {l: f"{tag.upper()}_{l}" for l in m.sft.layers}
        colors += cmap.values()
        layers += lmap.values()
        mapping += list(m.pi.mapping)
        sides.append((tag, m, cmap, lmap))
    base = Alphabet(tuple(colors))
    rules: list[LocalRule] = []
    side_of = {}
    for tag, m, cmap, lmap in sides:
        side_of[tag] = lambda t, cmap=cmap: mk_or(ColorAt(c, t) for c in cmap.values())
    for tag, m, cmap, lmap in sides:
        mine = side_of[tag]
        others = [l for (t2, _, _, lm) in sides if t2 != tag for l in lm.values()]
        if others:
            rules.append(LocalRule(f"{tag}.other_layers_off", Implies(mine(Z), mk_and(Not(InSet(l, Z)) for l in others))))
        rules.append(LocalRule(f"{tag}.same_side_east", Iff(mine(Z), mine(Z.shift(1, 0)))))
        rules.append(LocalRule(f"{tag}.same_side_north", Iff(mine(Z), mine(Z.shift(0, 1)))))
        cm = {c: ColorAt(v, Z) for c, v in cmap.items()}
        for r in m.sft.rules:
            rules.append(_lift_rule(r, cm, lmap, f"{tag}.", guard=lambda o, mine=mine: mine(Term("z", o.dx, o.dy))))
    sft = LayeredSFT(base, tuple(layers), tuple(rules))
    q = []
    for which in (0, 1):
        parts = []
        for tag, m, cmap, lmap in sides:
            pred = m.marked.q0 if which == 0 else m.marked.q1
            cm = {c: ColorAt(v, Z) for c, v in cmap.items()}
            lifted = _lift_rule(LocalRule("m", pred), cm, lmap, "").body
            parts.append(And((side_of[tag](Z), lifted)))
        q.append(mk_or(parts))
    pi = Projection(base, a.target, tuple(mapping))
    return MarkedSoficRepr(DoublyMarkedSFT(sft, q[0], q[1]), pi)


def intersect_marked(a: MarkedSoficRepr, b: MarkedSoficRepr) -> MarkedSoficRepr:
    """Fiber product with a fresh marker pair whose closed zone must hold all four old markers."""
    if a.target != b.target:
        raise AlphabetMismatch("intersection needs a common target alphabet")
    A, B = a.sft.base.colors, b.sft.base.colors
    pairs = [(i, j) for i in range(len(A)) for j in range(len(B)) if a.pi.mapping[i] == b.pi.mapping[j]]
    if not pairs:
        log.warning("empty fiber product: the intersection accepts nothing")
        base = Alphabet(("void",))
        sft = LayeredSFT(base, (), (LocalRule("empty", FALSE),))
        pi = Projection(base, a.target, (0,))
        return MarkedSoficRepr(DoublyMarkedSFT(sft, FALSE, FALSE), pi)
    names = [f"{A[i]}__{B[j]}" for i, j in pairs]
    if len(set(names)) != len(names):
        names = [f"f{i}_{j}" for i, j in pairs]
    base = Alphabet(tuple(names))
    left = {c: mk_or(ColorAt(n, Z) for n, (i, _) in zip(names, pairs) if A[i] == c) for c in A}
    right = {c: mk_or(ColorAt(n, Z) for n, (_, j) in zip(names, pairs) if B[j] == c) for c in B}
    lmap_a = {l: f"I0_{l}" for l in a.sft.layers}
    lmap_b = {l: f"I1_{l}" for l in b.sft.layers}
    rules = [_lift_rule(r, left, lmap_a, "i0.") for r in a.sft.rules]
    rules += [_lift_rule(r, right, lmap_b, "i1.") for r in b.sft.rules]
    markers = [
        _lift_rule(LocalRule("m", a.marked.q0), left, lmap_a, "").body,
        _lift_rule(LocalRule("m", a.marked.q1), left, lmap_a, "").body,
        _lift_rule(LocalRule("m", b.marked.q0), right, lmap_b, "").body,
        _lift_rule(LocalRule("m", b.marked.q1), right, lmap_b, "").body,
    ]
    layers = list(lmap_a.values()) + list(lmap_b.values()) + list(pin_layers("R0")) + list(pin_layers("R1"))
    rules += pin_rules("R0") + pin_rules("R1")
    for i, pred in enumerate(markers, 1):
        v = f"V{i}"
        layers += pin_layers(v)
        rules += pin_rules(v)
        rules += [
            LocalRule(f"{v}.on_marker", Implies(_at(v), pred)),
            LocalRule(f"{v}.north_of_zone", Implies(And((_at("R0_n"), _at("R1_n"))), _at(f"{v}_n"))),
            LocalRule(f"{v}.south_of_zone", Implies(And((_at("R0_s"), _at("R1_s"))), _at(f"{v}_s"))),
            LocalRule(f"{v}.east_of_zone", Implies(And((_at("R0_e"), _at("R1_e"))), _at(f"{v}_e"))),
            LocalRule(f"{v}.west_of_zone", Implies(And((_at("R0_w"), _at("R1_w"))), _at(f"{v}_w"))),
        ]
        for r, o in (("R0", "R1"), ("R1", "R0")):
            rules += [
                LocalRule(f"{v}.{r}_top", Implies(And((_at(r), Not(_at(f"{o}_s")))), Not(_at(f"{v}_s")))),
                LocalRule(f"{v}.{r}_bottom", Implies(And((_at(r), Not(_at(f"{o}_n")))), Not(_at(f"{v}_n")))),
                LocalRule(f"{v}.{r}_right", Implies(And((_at(r), Not(_at(f"{o}_w")))), Not(_at(f"{v}_w")))),
                LocalRule(f"{v}.{r}_left", Implies(And((_at(r), Not(_at(f"{o}_e")))), Not(_at(f"{v}_e")))),
            ]
    sft = LayeredSFT(base, tuple(layers), tuple(rules))
    pi = Projection(base, a.target, tuple(a.pi.mapping[i] for i, _ in pairs))
    return MarkedSoficRepr(DoublyMarkedSFT(sft, _at("R0"), _at("R1")), pi)


# ---------------------------------------------------------------------------
# combination trees and the translation back to sentences


@dataclass(frozen=True)
class Leaf:
    pattern: Pattern
    k: int
    mode: str = EQ


@dataclass(frozen=True)
class UnionNode:
    left: object
    right: object


@dataclass(frozen=True)
class IntersectNode:
    left: object
    right: object


@dataclass(frozen=True)
class Combination:
    tree: object
    projection: Projection | None = None


def emso_to_marked(desc: Combination | Leaf | UnionNode | IntersectNode) -> MarkedSoficRepr:
    if not isinstance(desc, Combination):
        desc = Combination(desc)

    def build(node):
        if isinstance(node, Leaf):
            return counting_marked_sft(node.pattern, node.k, node.mode)
        if isinstance(node, UnionNode):
            return union_marked(build(node.left), build(node.right))
        if isinstance(node, IntersectNode):
            return intersect_marked(build(node.left), build(node.right))
        raise FragmentError(f"malformed combination node {node!r}")

    m = build(desc.tree)
    if desc.projection is not None:
        m = MarkedSoficRepr(m.marked, m.pi.compose(desc.projection))
    return m


_TREE_TOKEN = re.compile(r"\s*(?:([A-Za-z_][A-Za-z0-9_]*)|(\d+)|([(),]))")


def parse_combination(text: str, patterns: Mapping[str, Pattern]) -> object:
    """Parse e.g. ``union(eq(P, 1), intersect(geq(Q, 0), eq(P, 2)))``."""
    toks = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TREE_TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"bad combination syntax near {text[pos:pos + 10]!r}")
        toks.append(m.group(1) or m.group(2) or m.group(3))
        pos = m.end()
    i = 0

    def expect(t):
        nonlocal i
        if i >= len(toks) or toks[i] != t:
            raise ParseError(f"expected {t!r} in combination")
        i += 1

    def node():
        nonlocal i
        if i >= len(toks):
            raise ParseError("unexpected end of combination")
        head = toks[i]
        i += 1
        expect("(")
        if head in ("eq", "geq"):
            name = toks[i]
            if name not in patterns:
                raise ParseError(f"unknown pattern {name!r}")
            i += 1
            expect(",")
            if i >= len(toks) or not toks[i].isdigit():
                raise ParseError("expected a count")
            k = int(toks[i])
            i += 1
            expect(")")
            return Leaf(patterns[name], k, head.upper())
        if head in ("union", "intersect"):
            l = node()
            expect(",")
            r = node()
            expect(")")
            return UnionNode(l, r) if head == "union" else IntersectNode(l, r)
        raise ParseError(f"unknown combinator {head!r}")

    tree = node()
    if i != len(toks):
        raise ParseError("trailing tokens in combination")
    return tree


def marked_to_emso(m: MarkedSoficRepr, window_guards: bool = False) -> Sentence:
    """Existential sentence over the target alphabet defining the projected doubly-marked set.

    Layers become set variables. With window_guards each rule is prefixed
    by z@d = z@d for its offsets d, which holds everywhere on the plane and
    on tori but makes the rule vacuous where it leaves a window under the
    atom-false convention.
    """
    sft = m.sft
    rules = []
    for r in sft.rules:
        body = r.body
        if window_guards:
            guards = [Equal(Term("z", o.dx, o.dy), Term("z", o.dx, o.dy)) for o in r.domain if o != (0, 0)]
            if guards:
                body = Implies(mk_and(guards), body)
        rules.append(body)
    univ = Quant("A", "z", mk_and(rules))
    marks = And((Quant("E", "a", _shift_formula(m.marked.q0, Term("a"))),
                 Quant("E", "b", _shift_formula(m.marked.q1, Term("b")))))
    inner = quantify([("E", l, True) for l in sft.layers], And((univ, marks)))
    s = Sentence(sft.base, inner)
    if m.pi.is_identity():
        return s
    return prenex(project_formula(m.pi, s))


# ---------------------------------------------------------------------------
# text format


def format_marked(m: MarkedSoficRepr) -> str:
    sft = m.sft
    lines = [
        f"alphabet {' '.join(m.target.colors)}",
        f"base {' '.join(sft.base.colors)}",
    ]
    if sft.layers:
        lines.append(f"layers {' '.join(sft.layers)}")
    for r in sft.rules:
        lines.append(f"rule {r.name} : {format_formula(r.body)}")
    lines.append(f"marker0 : {format_formula(m.marked.q0)}")
    lines.append(f"marker1 : {format_formula(m.marked.q1)}")
    lines.append("project " + " ".join(f"{c}->{m.target.colors[m.pi.mapping[i]]}" for i, c in enumerate(sft.base.colors)))
    return "\n".join(lines) + "\n"


def read_marked(text: str) -> MarkedSoficRepr:
    target = base = None
    layers: tuple[str, ...] = ()
    rules, q = [], {}
    proj = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, _, rest = line.partition(" ")
        if head == "alphabet":
            target = Alphabet(tuple(rest.split()))
        elif head == "base":
            base = Alphabet(tuple(rest.split()))
        elif head == "layers":
            layers = tuple(rest.split())
        elif head in ("rule", "marker0", "marker1"):
            if base is None:
                raise ParseError("base must be declared before rules", n, 1)
            if head == "rule":
                name, sep, ftext = rest.partition(":")
                if not sep:
                    raise ParseError("rule needs 'NAME : formula'", n, 1)
            else:
                name, ftext = head, rest.lstrip(": ").strip() if rest.startswith(":") else rest
            f = parse_formula(ftext, base, free_fo={"z"}, free_so=set(layers), line0=n)
            if head == "rule":
                rules.append(LocalRule(name.strip(), f))
            else:
                q[head] = f
        elif head == "project":
            for item in rest.split():
                src, sep, dst = item.partition("->")
                if not sep:
                    raise ParseError(f"bad projection entry {item!r}", n, 1)
                proj[src] = dst
        else:
            raise ParseError(f"unexpected line start {head!r}", n, 1)
    if target is None or base is None or "marker0" not in q or "marker1" not in q:
        raise ParseError("marked file needs alphabet, base, marker0 and marker1")
    try:
        pi = Projection.of(base, target, proj)
        sft = LayeredSFT(base, layers, tuple(rules))
    except (KeyError, ValueError) as e:
        raise ParseError(str(e)) from None
    return MarkedSoficRepr(DoublyMarkedSFT(sft, q["marker0"], q["marker1"]), pi)


# ---------------------------------------------------------------------------
# window-level checks of the counting gadget


@dataclass
class GadgetCheck:
    """Outcome of one exhaustive gadget check; failures hold counterexample descriptions."""

    name: str
    cases: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def fail(self, msg: str, limit: int = 20) -> None:
        if len(self.failures) < limit:
            self.failures.append(msg)


def _positions(w: int, h: int) -> list[tuple[int, int]]:
    return [(x, y) for y in range(h) for x in range(w)]


def _marker_pairs(w: int, h: int, k: int):
    for p0 in _positions(w, h):
        for p1 in _positions(w, h):
            if p0 == p1:
                continue
            if k >= 1 and (p0[0] == p1[0] or p0[1] == p1[1]):
                continue
            yield p0, p1


def check_soundness(P: Pattern, k: int, mode: str, w: int, h: int) -> GadgetCheck:
    """SAT: no accepted window puts a count other than k in the marker rectangle.

    Also checks that each marker occurs at exactly one cell and, for EQ,
    that no occurrence lies outside the rectangle.
    """
    m = counting_marked_sft(P, k, mode)
    enc = WindowEncoder(m, w, h)
    occ_f = occurrence_formula(P)
    occ = [enc.ground(occ_f, a) if a in set(inside_anchors(_domain(occ_f), w, h)) else False
           for a in range(w * h)]
    res = GadgetCheck(f"soundness {mode} k={k} {w}x{h}")
    top = enc.b.top
    for layer in ("Q0", "Q1"):
        lits = [enc.layer(layer, j) for j in range(w * h)]
        res.cases += 1
        if len(lits) < 2:
            continue
        card = CardEnc.atleast(lits, bound=2, top_id=top, encoding=EncType.seqcounter)
        s = enc.b.solver(card.clauses)
        if s.solve():
            res.fail(f"{layer} holds at two cells")
        s.delete()
    for p0, p1 in _marker_pairs(w, h, 0):
        rect = rectangle(p0, p1)
        inside = [occ[y * w + x] for (x, y) in sorted(rect)]
        outside = [occ[y * w + x] for (x, y) in _positions(w, h) if (x, y) not in rect]
        assume = [enc.layer("Q0", p0[1] * w + p0[0]), enc.layer("Q1", p1[1] * w + p1[0])]
        queries = []
        lits = [l for l in inside if l is not False]
        if len(lits) >= k + 1:
            queries.append(("more than k", CardEnc.atleast(lits, bound=k + 1, top_id=top,
                                                           encoding=EncType.seqcounter).clauses))
        if k >= 1:
            if len(lits) < k:
                queries.append(("fewer than k", []))
            else:
                queries.append(("fewer than k", CardEnc.atmost(lits, bound=k - 1, top_id=top,
                                                              encoding=EncType.seqcounter).clauses))
        if mode.upper() == EQ:
            out = [l for l in outside if l is not False]
            if out:
                queries.append(("occurrence outside", [out]))
        for what, extra in queries:
            res.cases += 1
            s = enc.b.solver(extra)
            if s.solve(assumptions=assume):
                res.fail(f"markers {p0},{p1}: accepted window with {what}")
            s.delete()
    enc.close()
    return res


def _domain(f: Formula) -> list[Offset]:
    return [Offset(*o) for o in offsets_used(f) | {Offset(0, 0)}]


def _vec_eval(f: Formula, tables: dict, anchor: int, bases: np.ndarray, bits: tuple[int, ...],
              base: Alphabet, layers: tuple[str, ...]):
    if isinstance(f, Const):
        return f.value
    if isinstance(f, ColorAt):
        return bases[:, tables[f.term.offset][anchor]] == base.index(f.color)
    if isinstance(f, InSet):
        return bool((bits[tables[f.term.offset][anchor]] >> layers.index(f.var)) & 1)
    if isinstance(f, Equal):
        return tables[f.left.offset][anchor] == tables[f.right.offset][anchor]
    parts = [_vec_eval(c, tables, anchor, bases, bits, base, layers) for c in children(f)]
    if isinstance(f, Not):
        return np.logical_not(parts[0])
    if isinstance(f, And):
        out = True
        for p in parts:
            out = np.logical_and(out, p)
        return out
    if isinstance(f, Or):
        out = False
        for p in parts:
            out = np.logical_or(out, p)
        return out
    if isinstance(f, Implies):
        return np.logical_or(np.logical_not(parts[0]), parts[1])
    if isinstance(f, Iff):
        return np.equal(parts[0], parts[1])
    raise TypeError(f"unexpected rule node {f!r}")


def check_completeness(P: Pattern, k: int, mode: str, w: int, h: int) -> GadgetCheck:
    """Every base window with exactly k occurrences in a marker rectangle (none outside for EQ)
    is accepted with the canonical paint, and that paint accepts nothing else.

    All base windows are checked at once as a numpy batch per paint.
    """
    m = counting_marked_sft(P, k, mode)
    sft = m.sft
    n = w * h
    q = len(sft.base)
    bases = np.array(list(itertools.product(range(q), repeat=n)), dtype=np.int8)[:, ::-1].copy()
    if n == 0:
        bases = bases.reshape(1, 0)
    _, _, x_hi, y_hi = P.bbox()
    Q = P.shifted((-x_hi, -y_hi))
    occ = np.zeros((len(bases), n), dtype=bool)
    for y in range(h):
        for x in range(w):
            if all(0 <= x + o.dx < w and 0 <= y + o.dy < h for o, _ in Q.cells):
                hit = np.ones(len(bases), dtype=bool)
                for o, c in Q.cells:
                    hit &= bases[:, (y + o.dy) * w + x + o.dx] == c
                occ[:, y * w + x] = hit
    plans = []
    for rule in sft.rules:
        tables = {o: shift_table(w, h, False, o.dx, o.dy) for o in rule.domain}
        plans.append((rule, tables, inside_anchors(rule.domain, w, h), rule.domain))
    res = GadgetCheck(f"completeness {mode} k={k} {w}x{h}")
    cache: dict = {}
    for p0, p1 in _marker_pairs(w, h, k):
        rect = sorted(rectangle(p0, p1))
        outside = [y * w + x for (x, y) in _positions(w, h) if (x, y) not in rect]
        for chosen in itertools.combinations(rect, k):
            res.cases += 1
            paint = canonical_paint(WindowConfig(sft.base, w, h, (0,) * n), p0, p1,
                                    {c: i for i, c in enumerate(chosen, 1)}, k)
            acc = np.ones(len(bases), dtype=bool)
            for r, (rule, tables, anchors, dom) in enumerate(plans):
                for a in anchors:
                    key = (r, a, tuple(paint.bits[tables[o][a]] for o in dom))
                    v = cache.get(key)
                    if v is None:
                        v = _vec_eval(rule.body, tables, a, bases, paint.bits, sft.base, sft.layers)
                        if not isinstance(v, (bool, np.bool_)):
                            v = True if v.all() else (False if not v.any() else v)
                        cache[key] = v = v if not isinstance(v, np.bool_) else bool(v)
                    if v is False:
                        acc = np.zeros(len(bases), dtype=bool)
                    elif v is not True:
                        acc &= v
            expected = np.ones(len(bases), dtype=bool)
            chosen_idx = {y * w + x for x, y in chosen}
            for (x, y) in rect:
                j = y * w + x
                expected &= occ[:, j] if j in chosen_idx else ~occ[:, j]
            if mode.upper() == EQ and outside:
                expected &= ~occ[:, outside].any(axis=1)
            if (expected & ~acc).any():
                bad = bases[np.argmax(expected & ~acc)]
                res.fail(f"markers {p0},{p1} counters {chosen}: base {bad.tolist()} rejected")
            if (acc & ~expected).any():
                bad = bases[np.argmax(acc & ~expected)]
                res.fail(f"markers {p0},{p1} counters {chosen}: base {bad.tolist()} wrongly accepted")
    return res


def check_determinism(P: Pattern, k: int, mode: str, w: int, h: int) -> GadgetCheck:
    """SAT: fixing the layers on the outer ring to a canonical paint forces the interior layers."""
    m = counting_marked_sft(P, k, mode)
    sft = m.sft
    enc = WindowEncoder(m, w, h, require_marks=False)
    s = enc.solver
    ring = [j for j in range(w * h) if j % w in (0, w - 1) or j // w in (0, h - 1)]
    interior = [j for j in range(w * h) if j not in ring]
    res = GadgetCheck(f"determinism {mode} k={k} {w}x{h}")
    for p0, p1 in _marker_pairs(w, h, k):
        rect = sorted(rectangle(p0, p1))
        for chosen in itertools.combinations(rect, k):
            res.cases += 1
            paint = canonical_paint(WindowConfig(sft.base, w, h, (0,) * (w * h)), p0, p1,
                                    {c: i for i, c in enumerate(chosen, 1)}, k)
            if not interior:
                continue
            assume = []
            for j in ring:
                for li, layer in enumerate(sft.layers):
                    v = enc.layer(layer, j)
                    assume.append(v if (paint.bits[j] >> li) & 1 else -v)
            sel = enc.b.new()
            diff = []
            for j in interior:
                for li, layer in enumerate(sft.layers):
                    v = enc.layer(layer, j)
                    diff.append(-v if (paint.bits[j] >> li) & 1 else v)
            s.add_clause([-sel] + diff)
            if s.solve(assumptions=assume + [sel]):
                res.fail(f"markers {p0},{p1} counters {chosen}: interior not forced")
            s.add_clause([-sel])
    enc.close()
    return res


def check_zone_rectangle(max_w: int, max_h: int) -> GadgetCheck:
    """The zone read off the marker tags equals the half-open rectangle between the markers."""
    res = GadgetCheck(f"zone vs rectangle up to {max_w}x{max_h}")
    A = Alphabet(("o",))
    for w in range(1, max_w + 1):
        for h in range(1, max_h + 1):
            W = WindowConfig(A, w, h, (0,) * (w * h))
            for p0, p1 in _marker_pairs(w, h, 0):
                res.cases += 1
                if zone_from_flags(canonical_paint(W, p0, p1, {}, 0)) != rectangle(p0, p1):
                    res.fail(f"{w}x{h} markers {p0},{p1}")
    return res
