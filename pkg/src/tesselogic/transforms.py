"""Syntactic constructions on sentences.

Clause form, disequality elimination, reduction of a universal block to a
single universal quantifier, counting-set formulas, and the union,
intersection and projection combinators on existential monadic sentences.
"""

from __future__ import annotations

import itertools
import logging
from typing import Iterable, Mapping
from dataclasses import dataclass

from .errors import FragmentError
from .grid import Alphabet, Pattern, Projection
from .logic import (
    TRUE,
    ATOMS,
    And,
    AtMostOne,
    ColorAt,
    Const,
    Equal,
    Formula,
    FreshNames,
    Iff,
    Implies,
    InSet,
    Not,
    Or,
    Quant,
    Sentence,
    Term,
    all_names,
    children,
    class_c_parts,
    has_quantifier,
    mk_and,
    mk_not,
    mk_or,
    nnf,
    normal_parts,
    prenex_formula,
    quantify,
    rebuild,
    rename_sets,
    substitute,
    terms_of,
    _strip_eso,
    _has_so_quant,
)

log = logging.getLogger(__name__)

ABSTRACT = "ABSTRACT"
CONCRETE = "CONCRETE"
EQ = "EQ"
GEQ = "GEQ"

Clause = list  # list of literals: atoms or Not(atom)


# ---------------------------------------------------------------------------
# clause form


def is_literal(f: Formula) -> bool:
    return isinstance(f, ATOMS) or (isinstance(f, Not) and isinstance(f.arg, ATOMS))


def negate_literal(lit: Formula) -> Formula:
    return lit.arg if isinstance(lit, Not) else Not(lit)


def _simplify_clause(clause: Clause) -> Clause | None:
    """Drop duplicates and false constants; None if the clause is valid."""
    out: list[Formula] = []
    seen = set()
    for lit in clause:
        if isinstance(lit, Const):
            if lit.value:
                return None
            continue
        if isinstance(lit, Not) and isinstance(lit.arg, Const):
            if not lit.arg.value:
                return None
            continue
        if negate_literal(lit) in seen:
            return None
        if lit not in seen:
            seen.add(lit)
            out.append(lit)
    return out


def cnf_clauses(f: Formula) -> list[Clause]:
    """Clauses of a quantifier-free formula, by distribution over its negation normal form."""
    if has_quantifier(f):
        raise FragmentError("clause form needs a quantifier-free formula")

    def go(g) -> list[Clause]:
        if isinstance(g, Const):
            return [] if g.value else [[]]
        if is_literal(g):
            return [[g]]
        if isinstance(g, And):
            out = []
            for a in g.args:
                out.extend(go(a))
            return out
        if isinstance(g, Or):
            acc: list[Clause] = [[]]
            for a in g.args:
                sub = go(a)
                acc = [c1 + c2 for c1 in acc for c2 in sub]
            return acc
        raise TypeError(f"unexpected node {g!r}")

    result = []
    seen = set()
    for c in go(nnf(f)):
        c2 = _simplify_clause(c)
        if c2 is None:
            continue
        key = frozenset(c2)
        if key in seen:
            continue
        seen.add(key)
        result.append(c2)
    return result


def clauses_to_formula(clauses: list[Clause]) -> Formula:
    return mk_and(mk_or(c) for c in clauses)


def to_cnf(matrix: Formula) -> Formula:
    return clauses_to_formula(cnf_clauses(matrix))


def clause_vars(clause: Clause) -> set[str]:
    return {t.var for lit in clause for t in terms_of(lit.arg if isinstance(lit, Not) else lit)}


# ---------------------------------------------------------------------------
# pattern sentinel


def pattern_sentinel(P: Pattern, var: str = "z") -> Formula:
    """Quantifier-free formula true at z exactly when P occurs at z."""
    names = P.alphabet.colors
    return mk_and(ColorAt(names[c], Term(var, o.dx, o.dy)) for o, c in P.cells)


# ---------------------------------------------------------------------------
# class C helpers


@dataclass(frozen=True)
class ClassC:
    alphabet: Alphabet
    sets: tuple[str, ...]
    univ: tuple[str, ...]
    clauses: tuple[tuple[Formula, ...], ...]

    def sentence(self) -> Sentence:
        body = clauses_to_formula([list(c) for c in self.clauses])
        prefix = [("E", X, True) for X in self.sets] + [("A", z, False) for z in self.univ]
        return Sentence(self.alphabet, quantify(prefix, body))


def as_class_c(s: Sentence) -> ClassC:
    cc = class_c_parts(prenex_formula(s.body))
    if cc is None:
        raise FragmentError("sentence is not in class C (E2* A* quantifier-free)")
    sets, univ, matrix = cc
    return ClassC(s.alphabet, tuple(sets), tuple(univ), tuple(tuple(c) for c in cnf_clauses(matrix)))


def _same_var_value(eq: Equal, notes: list[str] | None) -> Const:
    val = eq.left.offset == eq.right.offset
    msg = f"same-variable equality {eq.left} = {eq.right} replaced by {str(val).lower()} (plane semantics)"
    log.info(msg)
    if notes is not None:
        notes.append(msg)
    return Const(val)


def _fold_same_var(clause: Clause, notes) -> Clause | None:
    out = []
    for lit in clause:
        atom = lit.arg if isinstance(lit, Not) else lit
        if isinstance(atom, Equal) and atom.left.var == atom.right.var:
            v = _same_var_value(atom, notes)
            lit = mk_not(v) if isinstance(lit, Not) else v
        out.append(lit)
    return _simplify_clause(out)


def eliminate_disequality(s: Sentence, notes: list[str] | None = None, fold: bool = True) -> Sentence:
    """Remove disequalities between distinct universal variables clause by clause.

    A literal x@u != y@v is dropped after substituting the later-quantified of
    the two variables, which is sound because the universal block distributes
    over the clauses. With fold, the same-variable equalities this leaves are
    replaced by their plane truth value; without it they are kept, which keeps
    the result equivalent on every torus.
    """
    cc = as_class_c(s)
    order = {z: i for i, z in enumerate(cc.univ)}
    out = []
    for clause in cc.clauses:
        cl = list(clause)
        while True:
            hit = None
            for i, lit in enumerate(cl):
                if isinstance(lit, Not) and isinstance(lit.arg, Equal):
                    a, b = lit.arg.left, lit.arg.right
                    if a.var != b.var:
                        hit = (i, a, b)
                        break
            if hit is None:
                break
            i, a, b = hit
            if order[a.var] > order[b.var]:
                a, b = b, a
            # b.var is eliminated: b.var@b.off != a.var@a.off  iff  b.var != a.var@(a.off - b.off)
            repl = Term(a.var, a.dx - b.dx, a.dy - b.dy)
            rest = cl[:i] + cl[i + 1 :]
            cl = [substitute(lit, {b.var: repl}) for lit in rest]
        folded = _fold_same_var(cl, notes) if fold else _simplify_clause(cl)
        if folded is not None:
            out.append(tuple(folded))
    used = set()
    for c in out:
        used |= clause_vars(list(c))
    univ = tuple(z for z in cc.univ if z in used)
    return ClassC(cc.alphabet, cc.sets, univ, tuple(out)).sentence()


# ---------------------------------------------------------------------------
# single-universal reduction


@dataclass(frozen=True)
class ClauseAnalysis:
    """A clause split around the eliminated variable z_p.

    eps: literals mentioning only z_p; eqs: terms f with a literal z_p = f;
    theta: literals not mentioning z_p.
    """

    eps: tuple[Formula, ...]
    eqs: tuple[Term, ...]
    theta: tuple[Formula, ...]


def analyze_clause(clause: Clause, zp: str) -> ClauseAnalysis:
    eps, eqs, theta = [], [], []
    for lit in clause:
        atom = lit.arg if isinstance(lit, Not) else lit
        vs = {t.var for t in terms_of(atom)}
        if zp not in vs:
            theta.append(lit)
        elif vs == {zp}:
            eps.append(lit)
        elif isinstance(lit, Equal):
            a, b = (lit.left, lit.right) if lit.left.var == zp else (lit.right, lit.left)
            eqs.append(Term(b.var, b.dx - a.dx, b.dy - a.dy))
        else:
            raise FragmentError(f"disequality {lit} should have been eliminated")
    return ClauseAnalysis(tuple(eps), tuple(eqs), tuple(theta))


def _pos(X: str, t: Term) -> Formula:
    return InSet(X, t)


def _neg(X: str, t: Term) -> Formula:
    return Not(InSet(X, t))


def _constant_clauses(X: str, z: Term, mirror: str | None = None) -> list[Clause]:
    """X is invariant under N and E steps.

    With a mirror the backward implications read the mirror, which keeps
    the constraint vacuous past a flagged window's north/east edge when X
    defaults to true there and the mirror to false.
    """
    n, e = z.shift(0, 1), z.shift(1, 0)
    back = mirror or X
    out = [[_neg(X, z), _pos(X, n)], [_pos(X, z), _neg(back, n)], [_neg(X, z), _pos(X, e)], [_pos(X, z), _neg(back, e)]]
    if mirror:
        out += [[_neg(X, z), _pos(mirror, z)], [_pos(X, z), _neg(mirror, z)]]
    return out


def quarter_plane_clauses(S: str, A: str, z: Term, mirror: str | None = None) -> list[Clause]:
    """A is closed under N and E steps (and the converse); S is the corner of A.

    With a mirror set B the converse reads B instead of A and B(z) <-> A(z)
    is added. On the plane and on tori this changes nothing. On flagged
    windows with A defaulting to true past the north/east edge and B to
    false everywhere, the converse becomes vacuous at the edge, so the
    solutions for A are exactly the corners {x >= a, y >= b} and the empty set.
    """
    n, e, s, w = z.shift(0, 1), z.shift(1, 0), z.shift(0, -1), z.shift(-1, 0)
    back = mirror or A
    clauses = [
        [_neg(A, z), _pos(A, n)],
        [_neg(A, z), _pos(A, e)],
        [_neg(back, n), _neg(back, e), _pos(A, z)],
        [_neg(S, z), _pos(A, z)],
        [_neg(S, z), _neg(A, s)],
        [_neg(S, z), _neg(A, w)],
        [_neg(A, z), _pos(A, s), _pos(A, w), _pos(S, z)],
    ]
    if mirror:
        clauses += [[_neg(A, z), _pos(mirror, z)], [_pos(A, z), _neg(mirror, z)]]
    return clauses


def quarter_plane_defaults(pairs: Iterable[tuple[str, str]]) -> dict[str, tuple[bool, bool]]:
    """Flagged-window (ne, sw) defaults for (A, mirror) gadget pairs."""
    out = {}
    for A, B in pairs:
        out[A] = (True, False)
        out[B] = (False, False)
    return out


def defaults_note(defaults: Mapping[str, tuple[bool, bool]]) -> str:
    items = " ".join(f"{k}={int(ne)},{int(sw)}" for k, (ne, sw) in sorted(defaults.items()))
    return f"window-flagged defaults {items}"


def reduce_universals(s: Sentence, mode: str = ABSTRACT, notes: list[str] | None = None,
                      fresh: FreshNames | None = None) -> Sentence:
    """Equivalent class C sentence with a single universal quantifier.

    For each clause mentioning the innermost universal z_p, the set
    B = {z : not eps(z)} must be covered by the m terms equated with z_p
    unless theta holds everywhere. Sets S_1..S_m of at most one element
    each cover B; a constant flag E records that B is nonempty, and a
    constant set X selects the branch where theta holds for all values.
    """
    mode = mode.upper()
    if mode not in (ABSTRACT, CONCRETE):
        raise ValueError(f"unknown mode {mode!r}")
    cc = as_class_c(s)
    if len(cc.univ) <= 1:
        return s
    # same-variable equalities only mention one variable, so they can stay in eps
    cc = as_class_c(eliminate_disequality(s, notes, fold=False))
    if fresh is None:
        fresh = FreshNames(all_names(s.body) | set(s.alphabet.colors))
    sets = list(cc.sets)
    univ = list(cc.univ)
    clauses = [list(c) for c in cc.clauses]
    gadgets: list[tuple[str, str]] = []

    def constant(X: str, t: Term) -> list[Clause]:
        if mode == ABSTRACT:
            return _constant_clauses(X, t)
        M = fresh.fresh("M")
        sets.append(M)
        gadgets.append((X, M))
        return _constant_clauses(X, t, M)

    while len(univ) > 1:
        zp, z1 = univ[-1], univ[0]
        t1 = Term(z1)
        new: list[Clause] = []
        for clause in clauses:
            if zp not in clause_vars(clause):
                new.append(clause)
                continue
            ca = analyze_clause(clause, zp)
            eps1 = [substitute(l, {zp: t1}) for l in ca.eps]
            m = len(ca.eqs)
            guarded: list[Clause] = []
            if m == 0:
                guarded.append(list(eps1))
            else:
                S = [fresh.fresh("S") for _ in range(m)]
                E = fresh.fresh("E")
                sets.extend(S)
                sets.append(E)
                for Si in S:
                    new.append([_neg(Si, t1), _pos(E, t1)])
                    if mode == ABSTRACT:
                        new.append([AtMostOne(Si)])
                    else:
                        A, B = fresh.fresh("A"), fresh.fresh("B")
                        sets += [A, B]
                        gadgets.append((A, B))
                        new.extend(quarter_plane_clauses(Si, A, t1, B))
                    for l in eps1:
                        guarded.append([_neg(Si, t1), negate_literal(l)])
                    new.append([_neg(E, t1)] + [_pos(Si, f) for f in ca.eqs] + list(ca.theta))
                new.extend(constant(E, t1))
                guarded.append(list(eps1) + [_pos(Si, t1) for Si in S])
            if ca.theta:
                X = fresh.fresh("X")
                sets.append(X)
                new.extend(constant(X, t1))
                new.append([_neg(X, t1)] + list(ca.theta))
                new.extend([_pos(X, t1)] + g for g in guarded)
            else:
                new.extend(guarded)
        clauses = []
        for c in new:
            c2 = _simplify_clause(c)
            if c2 is not None:
                clauses.append(c2)
        univ.pop()
    if gadgets and notes is not None:
        notes.append(defaults_note(quarter_plane_defaults(gadgets)))
    return ClassC(cc.alphabet, tuple(sets), tuple(univ), tuple(tuple(c) for c in clauses)).sentence()


# ---------------------------------------------------------------------------
# sentences of the shape  E2 X.. ((A z. phi1) & (E z.. phi2))


@dataclass(frozen=True)
class NormalParts:
    sets: tuple[str, ...]
    univ: tuple[str, Formula] | None
    exist: tuple[tuple[str, ...], Formula] | None


def as_normal(s: Sentence) -> NormalParts:
    parts = normal_parts(s.body)
    if parts is None:
        cc = class_c_parts(prenex_formula(s.body))
        if cc is not None and len(cc[1]) <= 1:
            parts = normal_parts(prenex_formula(s.body))
    if parts is None:
        raise FragmentError("sentence is not of the shape E2 X.. ((A z. phi1) & (E z.. phi2))")
    sets, univ, exist = parts
    return NormalParts(tuple(sets), univ, (tuple(exist[0]), exist[1]) if exist else None)


def normal_sentence(alphabet: Alphabet, sets, univ, exist) -> Sentence:
    blocks = []
    if univ is not None:
        blocks.append(Quant("A", univ[0], univ[1]))
    if exist is not None:
        blocks.append(quantify([("E", v, False) for v in exist[0]], exist[1]))
    body = blocks[0] if len(blocks) == 1 else And(tuple(blocks)) if blocks else TRUE
    return Sentence(alphabet, quantify([("E", X, True) for X in sets], body))


def counting_formula(P: Pattern, k: int, mode: str = EQ, variant: str = ABSTRACT,
                     geq_direction: str = "marked-implies-occurrence",
                     notes: list[str] | None = None) -> Sentence:
    """Sentence defining the configurations with exactly (EQ) or at least (GEQ) k occurrences of P.

    X_1..X_k are disjoint one-element sets marking occurrences. CONCRETE
    forces "one element" with a quarter-plane A_i (mirror B_i) whose corner
    is X_i, and records the flagged-window defaults it needs in notes;
    ABSTRACT uses the atmostone pseudo-atom instead. For GEQ the default
    direction keeps "every marked cell is an occurrence"; the alternative
    "occurrence-implies-marked" is available for comparison.
    """
    mode, variant = mode.upper(), variant.upper()
    if k < 0:
        raise ValueError("k must be nonnegative")
    if mode not in (EQ, GEQ) or variant not in (ABSTRACT, CONCRETE):
        raise ValueError("bad mode or variant")
    x = Term("x")
    phi = pattern_sentinel(P, "x")
    if k == 0:
        body = mk_not(phi) if mode == EQ else TRUE
        return Sentence(P.alphabet, Quant("A", "x", body))
    X = [f"X{i}" for i in range(1, k + 1)]
    A = [f"A{i}" for i in range(1, k + 1)]
    z = [f"z{i}" for i in range(1, k + 1)]
    univ: list[Formula] = []
    B = [f"B{i}" for i in range(1, k + 1)]
    if variant == CONCRETE and notes is not None:
        notes.append(defaults_note(quarter_plane_defaults(zip(A, B))))
    if variant == CONCRETE:
        for Xi, Ai, Bi in zip(X, A, B):
            univ.append(clauses_to_formula(quarter_plane_clauses(Xi, Ai, x, Bi)))
    for i, j in itertools.combinations(range(k), 2):
        univ.append(Not(And((InSet(X[i], x), InSet(X[j], x)))))
    marked = mk_or(InSet(Xi, x) for Xi in X)
    if mode == EQ:
        univ.append(Iff(marked, phi))
    elif geq_direction == "marked-implies-occurrence":
        univ.append(Implies(marked, phi))
    elif geq_direction == "occurrence-implies-marked":
        univ.append(Implies(phi, marked))
    else:
        raise ValueError(f"unknown GEQ direction {geq_direction!r}")
    exist: list[Formula] = [InSet(Xi, Term(zi)) for Xi, zi in zip(X, z)]
    if variant == ABSTRACT:
        exist.extend(AtMostOne(Xi) for Xi in X)
    sets = X + ([v for pair in zip(A, B) for v in pair] if variant == CONCRETE else [])
    return normal_sentence(P.alphabet, sets, ("x", mk_and(univ)), (tuple(z), mk_and(exist)))


def _rename_side(parts: NormalParts, set_map, univ_var, exist_vars):
    u = e = None
    if parts.univ is not None:
        v, f = parts.univ
        u = substitute(rename_sets(f, set_map), {v: Term(univ_var)})
    if parts.exist is not None:
        vs, f = parts.exist
        e = substitute(rename_sets(f, set_map), {a: Term(b) for a, b in zip(vs, exist_vars)})
    return u, e


def union_emso(s1: Sentence, s2: Sentence) -> Sentence:
    """Sentence whose models are the union of both inputs' models.

    A constant set X picks which side holds: it is empty or the whole
    domain because membership is invariant under N and E steps.
    """
    if s1.alphabet != s2.alphabet:
        raise FragmentError("union needs a common alphabet")
    a, b = as_normal(s1), as_normal(s2)
    fresh = FreshNames(all_names(s1.body) | all_names(s2.body) | set(s1.alphabet.colors))
    n = max(len(a.sets), len(b.sets))
    shared = [fresh.fresh("U") for _ in range(n)]
    zz = fresh.fresh("z")
    p = max(len(a.exist[0]) if a.exist else 0, len(b.exist[0]) if b.exist else 0, 1)
    ws = [fresh.fresh("w") for _ in range(p)]
    X = fresh.fresh("X")
    t = Term(zz)
    sides = []
    for parts in (a, b):
        u, e = _rename_side(parts, dict(zip(parts.sets, shared)), zz, ws)
        pads = [Not(InSet(U, t)) for U in shared[len(parts.sets):]]
        sides.append((mk_and([u if u is not None else TRUE] + pads), e if e is not None else TRUE))
    (u1, e1), (u2, e2) = sides
    univ = mk_and([
        Iff(InSet(X, t), InSet(X, t.shift(0, 1))),
        Iff(InSet(X, t), InSet(X, t.shift(1, 0))),
        Implies(InSet(X, t), u1),
        Implies(Not(InSet(X, t)), u2),
    ])
    w1 = Term(ws[0])
    exist = Or((mk_and([InSet(X, w1), e1]), mk_and([Not(InSet(X, w1)), e2])))
    return normal_sentence(s1.alphabet, [X] + shared, (zz, univ), (tuple(ws), exist))


def intersect_emso(s1: Sentence, s2: Sentence) -> Sentence:
    if s1.alphabet != s2.alphabet:
        raise FragmentError("intersection needs a common alphabet")
    a, b = as_normal(s1), as_normal(s2)
    fresh = FreshNames(all_names(s1.body) | all_names(s2.body) | set(s1.alphabet.colors))
    zz = fresh.fresh("z")
    sets, univs, exists, evars = [], [], [], []
    for parts in (a, b):
        names = [fresh.fresh("U") for _ in parts.sets]
        ws = [fresh.fresh("w") for _ in (parts.exist[0] if parts.exist else ())]
        u, e = _rename_side(parts, dict(zip(parts.sets, names)), zz, ws)
        sets += names
        evars += ws
        if u is not None:
            univs.append(u)
        if e is not None:
            exists.append(e)
    univ = (zz, mk_and(univs)) if univs else None
    exist = (tuple(evars), mk_and(exists)) if exists else None
    return normal_sentence(s1.alphabet, sets, univ, exist)


# ---------------------------------------------------------------------------
# projections and colors as sets


def _colors_to_sets_map(f: Formula, mapping: dict[str, str]) -> Formula:
    if isinstance(f, ColorAt):
        return InSet(mapping[f.color], f.term)
    if isinstance(f, ATOMS):
        return f
    return rebuild(f, [_colors_to_sets_map(c, mapping) for c in children(f)])


def project_formula(pi: Projection, s: Sentence) -> Sentence:
    """Sentence over pi's target whose models are the images of s's models.

    Each source color c becomes a set variable Y_c; the sets partition the
    domain and Y_c only contains cells colored pi(c).
    """
    if s.alphabet != pi.source:
        raise FragmentError("sentence is not over the projection's source alphabet")
    fresh = FreshNames(all_names(s.body) | set(pi.source.colors) | set(pi.target.colors))
    Y = {c: fresh.take(f"Y_{c}") for c in pi.source.colors}
    body = _colors_to_sets_map(s.body, Y)

    def partition(var: str) -> Formula:
        t = Term(var)
        ys = [Y[c] for c in pi.source.colors]
        parts = [mk_or(InSet(y, t) for y in ys)]
        parts += [Not(And((InSet(a, t), InSet(b, t)))) for a, b in itertools.combinations(ys, 2)]
        parts += [
            Implies(InSet(Y[c], t), ColorAt(pi.target.colors[pi.mapping[i]], t))
            for i, c in enumerate(pi.source.colors)
        ]
        return mk_and(parts)

    ys = [Y[c] for c in pi.source.colors]
    parts = normal_parts(body)
    if parts is not None:
        sets, univ, exist = parts
        if univ is None:
            zv = fresh.take("z")
            univ = (zv, partition(zv))
        else:
            univ = (univ[0], mk_and([partition(univ[0]), univ[1]]))
        return normal_sentence(pi.target, ys + list(sets), univ, (tuple(exist[0]), exist[1]) if exist else None)
    zv = fresh.take("z")
    inner = And((Quant("A", zv, partition(zv)), body))
    return Sentence(pi.target, quantify([("E", y, True) for y in ys], inner))


def product_alphabet(alphabet: Alphabet, n: int) -> tuple[Alphabet, Projection, dict]:
    """Alphabet Q x {0,1}^n with names like lime_01; returns (alphabet, projection, index)."""
    if n == 0:
        return alphabet, Projection.identity(alphabet), {(c, ()): c for c in alphabet.colors}
    bits = list(itertools.product((0, 1), repeat=n))
    names, index = [], {}
    for c in alphabet.colors:
        for b in bits:
            name = f"{c}_{''.join(map(str, b))}"
            names.append(name)
            index[(c, b)] = name
    if len(set(names)) != len(names) or set(names) & set(alphabet.colors):
        names, index = [], {}
        for i, c in enumerate(alphabet.colors):
            for b in bits:
                name = f"q{i}_{''.join(map(str, b))}"
                names.append(name)
                index[(c, b)] = name
    prod = Alphabet(tuple(names))
    pi = Projection(prod, alphabet, tuple(i for i in range(len(alphabet)) for _ in bits))
    return prod, pi, index


def colors_to_sets(s: Sentence) -> tuple[Sentence, Projection]:
    """Trade the leading set variables for a product alphabet.

    InSet(X_i, t) becomes the disjunction of product colors with bit i set;
    a color atom becomes the disjunction of all its decorated versions.
    """
    sets, rest = _strip_eso(s.body)
    if _has_so_quant(rest):
        raise FragmentError("colors_to_sets needs an existential monadic sentence")
    n = len(sets)
    prod, pi, index = product_alphabet(s.alphabet, n)
    bits = list(itertools.product((0, 1), repeat=n))
    pos = {X: i for i, X in enumerate(sets)}

    def go(f):
        if isinstance(f, ColorAt):
            return mk_or(ColorAt(index[(f.color, b)], f.term) for b in bits)
        if isinstance(f, InSet):
            i = pos[f.var]
            return mk_or(ColorAt(index[(c, b)], f.term) for c in s.alphabet.colors for b in bits if b[i])
        if isinstance(f, AtMostOne):
            raise FragmentError("atmostone pseudo-atoms cannot be turned into colors")
        if isinstance(f, ATOMS):
            return f
        return rebuild(f, [go(c) for c in children(f)])

    return Sentence(prod, go(rest)), pi
