"""Formulas to forbidden-pattern systems and back, sofic representations,
and fast membership oracles for compiled objects.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import AlphabetMismatch, BudgetExceeded, FragmentError, ParseError
from .grid import Alphabet, Offset, Pattern, Projection, TorusConfig, _Grid, read_document
from .logic import (
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
    class_c_parts,
    has_pseudo_atoms,
    mk_and,
    mk_not,
    offsets_used,
    prenex_formula,
    quantify,
    walk,
    _strip_eso,
)
from .semantics import DEFAULT_BUDGET, TORUS, BoundaryConvention, shift_table
from .solver import CnfBuilder, Grounding
from .transforms import colors_to_sets, pattern_sentinel, project_formula

MAX_OFFSETS = 12


@dataclass(frozen=True)
class SFT:
    alphabet: Alphabet
    forbidden: tuple[Pattern, ...] = ()

    def __post_init__(self):
        pats = []
        seen = set()
        for p in self.forbidden:
            if p.alphabet != self.alphabet:
                raise AlphabetMismatch("forbidden pattern over a different alphabet")
            if p not in seen:
                seen.add(p)
                pats.append(p)
        pats.sort(key=Pattern.key)
        object.__setattr__(self, "forbidden", tuple(pats))


@dataclass(frozen=True)
class SoficRepr:
    inner: SFT
    pi: Projection

    def __post_init__(self):
        if self.pi.source != self.inner.alphabet:
            raise AlphabetMismatch("projection source must be the inner alphabet")

    @property
    def target(self) -> Alphabet:
        return self.pi.target


# ---------------------------------------------------------------------------
# formula <-> SFT


def univ_sft_parts(s: Sentence) -> tuple[str, Formula]:
    f = s.body
    if not (isinstance(f, Quant) and f.kind == "A" and not f.second_order):
        raise FragmentError("expected a sentence of the form A z. psi(z)")
    psi = f.body
    for g in walk(psi):
        if isinstance(g, Quant):
            raise FragmentError("matrix must be quantifier-free")
        if isinstance(g, (InSet, AtMostOne)):
            raise FragmentError("matrix must not mention set variables")
    return f.var, psi


def _compile_local(psi: Formula, alphabet: Alphabet, index: dict[Offset, int]):
    """Closure evaluating psi on a tuple of colors listed in the order of index."""
    if isinstance(psi, Const):
        v = psi.value
        return lambda cs: v
    if isinstance(psi, ColorAt):
        i, cid = index[psi.term.offset], alphabet.index(psi.color)
        return lambda cs: cs[i] == cid
    if isinstance(psi, Equal):
        v = psi.left.offset == psi.right.offset
        return lambda cs: v
    if isinstance(psi, Not):
        a = _compile_local(psi.arg, alphabet, index)
        return lambda cs: not a(cs)
    if isinstance(psi, (And, Or)):
        parts = [_compile_local(a, alphabet, index) for a in psi.args]
        if isinstance(psi, And):
            return lambda cs: all(p(cs) for p in parts)
        return lambda cs: any(p(cs) for p in parts)
    if isinstance(psi, Implies):
        a, b = _compile_local(psi.left, alphabet, index), _compile_local(psi.right, alphabet, index)
        return lambda cs: (not a(cs)) or b(cs)
    if isinstance(psi, Iff):
        a, b = _compile_local(psi.left, alphabet, index), _compile_local(psi.right, alphabet, index)
        return lambda cs: a(cs) == b(cs)
    raise FragmentError(f"unexpected node in matrix: {psi!r}")


def formula_to_sft(s: Sentence, budget: int = DEFAULT_BUDGET) -> SFT:
    """Forbid every pattern on the offset domain of psi that makes psi false.

    Equalities between terms are read with plane semantics (x@u = x@v iff u = v).
    """
    _, psi = univ_sft_parts(s)
    domain = sorted(offsets_used(psi) | {Offset(0, 0)}, key=lambda o: (o[1], o[0]))
    domain = [Offset(*o) for o in domain]
    q = len(s.alphabet)
    if len(domain) > MAX_OFFSETS or q ** len(domain) > budget:
        raise BudgetExceeded(f"formula_to_sft over {len(domain)} offsets", budget, q ** len(domain))
    index = {o: i for i, o in enumerate(domain)}
    fn = _compile_local(psi, s.alphabet, index)
    bad = []
    for cs in itertools.product(range(q), repeat=len(domain)):
        if not fn(cs):
            bad.append(Pattern(s.alphabet, tuple(zip(domain, cs))))
    return SFT(s.alphabet, tuple(bad))


def sft_to_formula(X: SFT, var: str = "z") -> Sentence:
    body = mk_and(mk_not(pattern_sentinel(P, var)) for P in X.forbidden)
    return Sentence(X.alphabet, Quant("A", var, body))


def emso_to_sofic(s: Sentence, budget: int = DEFAULT_BUDGET) -> SoficRepr:
    """Inner SFT over Q x {0,1}^n whose projection is the set defined by s."""
    cc = class_c_parts(prenex_formula(s.body))
    if cc is None:
        raise FragmentError("expected a class C sentence")
    sets, univ, matrix = cc
    if has_pseudo_atoms(matrix):
        raise FragmentError("pseudo-atoms must be expanded before compiling (use CONCRETE mode)")
    if len(univ) > 1:
        raise FragmentError("more than one universal quantifier; reduce first")
    z = univ[0] if univ else "z"
    body = quantify([("E", X, True) for X in sets], Quant("A", z, matrix))
    flat, pi = colors_to_sets(Sentence(s.alphabet, body))
    return SoficRepr(formula_to_sft(flat, budget), pi)


def sofic_to_formula(r: SoficRepr) -> Sentence:
    return project_formula(r.pi, sft_to_formula(r.inner))


# ---------------------------------------------------------------------------
# membership


def _torus_constraints(X: SFT, w: int, h: int) -> list[list[tuple[tuple[int, int], ...]]]:
    """Per cell index, the forbidden placements whose last cell is that index."""
    n = w * h
    by_last: list[set] = [set() for _ in range(n)]
    for P in X.forbidden:
        for y0 in range(h):
            for x0 in range(w):
                placed: dict[int, int] = {}
                ok = True
                for o, c in P.cells:
                    j = ((y0 + o.dy) % h) * w + (x0 + o.dx) % w
                    if placed.get(j, c) != c:
                        ok = False
                        break
                    placed[j] = c
                if ok:
                    cons = tuple(sorted(placed.items()))
                    by_last[cons[-1][0]].add(cons)
    return [sorted(s) for s in by_last]


def _backtrack(domains: list[tuple[int, ...]], constraints, budget: int, what: str) -> Iterator[tuple[int, ...]]:
    """Assignments (in lexicographic order) avoiding every constraint.

    constraints[i] lists tuples of (cell, color) that may not all hold;
    each is checked once cell i, its largest cell, is assigned.
    """
    n = len(domains)
    cur = [0] * n
    visited = 0

    def rec(i):
        nonlocal visited
        if i == n:
            yield tuple(cur)
            return
        for c in domains[i]:
            visited += 1
            if visited > budget:
                raise BudgetExceeded(what, budget)
            cur[i] = c
            bad = False
            for cons in constraints[i]:
                if all(cur[j] == cc for j, cc in cons):
                    bad = True
                    break
            if not bad:
                yield from rec(i + 1)

    yield from rec(0)


def torus_members_sft(X: SFT, w: int, h: int, budget: int = DEFAULT_BUDGET) -> list[TorusConfig]:
    """Tori whose periodic lift avoids every forbidden pattern, lexicographic order."""
    cons = _torus_constraints(X, w, h)
    doms = [tuple(range(len(X.alphabet)))] * (w * h)
    return [TorusConfig(X.alphabet, w, h, cs) for cs in _backtrack(doms, cons, budget, f"members {w}x{h}")]


def sft_member(X: SFT, C: TorusConfig) -> bool:
    if C.alphabet != X.alphabet:
        raise AlphabetMismatch("torus and SFT alphabets differ")
    for P in X.forbidden:
        for (x0, y0) in C.coords():
            if all(C.at(x0 + o.dx, y0 + o.dy) == c for o, c in P.cells):
                return False
    return True


def torus_members_sofic(r: SoficRepr, w: int, h: int, budget: int = DEFAULT_BUDGET) -> list[TorusConfig]:
    """Target tori with at least one same-size preimage in the inner SFT."""
    cons = _torus_constraints(r.inner, w, h)
    q2 = len(r.target)
    total = q2 ** (w * h)
    if total > budget:
        raise BudgetExceeded(f"sofic members {w}x{h}", budget, total)
    pre = [r.pi.preimage(t) for t in range(q2)]
    out = []
    for cells in itertools.product(range(q2), repeat=w * h):
        doms = [pre[c] for c in cells]
        if any(not d for d in doms):
            continue
        if next(_backtrack(doms, cons, budget, "preimage search"), None) is not None:
            out.append(TorusConfig(r.target, w, h, cells))
    return out


def sofic_member(r: SoficRepr, C: TorusConfig, budget: int = DEFAULT_BUDGET) -> bool:
    if C.alphabet != r.target:
        raise AlphabetMismatch("torus is not over the sofic target alphabet")
    cons = _torus_constraints(r.inner, C.width, C.height)
    doms = [r.pi.preimage(c) for c in C.cells]
    return next(_backtrack(doms, cons, budget, "preimage search"), None) is not None


def locally_admissible(X: SFT, w: int, h: int, r: int, budget: int = DEFAULT_BUDGET) -> list[Pattern]:
    """w x h patterns that extend to a (w+2r) x (h+2r) window with no forbidden occurrence inside."""
    W, H = w + 2 * r, h + 2 * r
    central = [(x + r, y + r) for y in range(h) for x in range(w)]
    ring = [(x, y) for y in range(H) for x in range(W) if (x, y) not in set(central)]
    order = central + ring
    pos = {c: i for i, c in enumerate(order)}
    n = len(order)
    cons: list[set] = [set() for _ in range(n)]
    for P in X.forbidden:
        x_lo, y_lo, x_hi, y_hi = P.bbox()
        for y0 in range(-y_lo, H - y_hi):
            for x0 in range(-x_lo, W - x_hi):
                placed = tuple(sorted((pos[(x0 + o.dx, y0 + o.dy)], c) for o, c in P.cells))
                cons[placed[-1][0]].add(placed)
    cons_l = [sorted(s) for s in cons]
    q = len(X.alphabet)
    k = len(central)
    full = tuple(range(q))
    out = []
    for head in _backtrack([full] * k, cons_l[:k], budget, f"admissible {w}x{h}"):
        doms = [(c,) for c in head] + [full] * (n - k)
        if next(_backtrack(doms, cons_l, budget, "extension search"), None) is not None:
            out.append(Pattern(X.alphabet, tuple((Offset(x, y), head[y * w + x]) for y in range(h) for x in range(w))))
    return out


def sft_member_mask(X: SFT, w: int, h: int, configs: np.ndarray) -> np.ndarray:
    """Vectorized torus membership for the rows of configs (shape (N, w*h))."""
    q = len(X.alphabet)
    N = configs.shape[0]
    ok = np.ones(N, dtype=bool)
    by_domain: dict[tuple, list[tuple[int, ...]]] = {}
    for P in X.forbidden:
        by_domain.setdefault(P.domain, []).append(tuple(c for _, c in P.cells))
    cfg = configs.astype(np.int64)
    for dom, colorings in by_domain.items():
        table = np.zeros(q ** len(dom), dtype=bool)
        for cs in colorings:
            code = 0
            for c in cs:
                code = code * q + c
            table[code] = True
        codes = np.zeros((N, w * h), dtype=np.int64)
        for o in dom:
            idx = np.array(shift_table(w, h, True, o.dx, o.dy), dtype=np.int64)
            codes = codes * q + cfg[:, idx]
        ok &= ~table[codes].any(axis=1)
    return ok


# ---------------------------------------------------------------------------
# SAT-backed membership for existential monadic sentences


class SatEvaluator:
    """Membership oracle for sentences  E2 X.. phi  with phi first-order.

    phi is grounded once for a fixed size into CNF over color and set
    variables; each configuration is then one incremental solver call with
    the color literals as assumptions.
    """

    def __init__(self, s: Sentence, width: int, height: int, conv: BoundaryConvention = TORUS):
        sets, rest = _strip_eso(s.body)
        self.alphabet = s.alphabet
        self.width, self.height = width, height
        self.builder = CnfBuilder()
        g = Grounding(self.builder, width, height, conv)
        root = g.ground(rest, {})
        self.const = root if isinstance(root, bool) else None
        n = width * height
        self.color_vars = [[self.builder.var(("c", j, c)) for c in s.alphabet.colors] for j in range(n)]
        self._solver = None
        if self.const is None:
            self._solver = self.builder.solver([[root]])

    def __call__(self, C: _Grid) -> bool:
        if self.const is not None:
            return self.const
        cells = C.cells if isinstance(C, _Grid) else C
        assumptions = []
        for j, cid in enumerate(cells):
            for c, v in enumerate(self.color_vars[j]):
                assumptions.append(v if c == cid else -v)
        return bool(self._solver.solve(assumptions=assumptions))

    def close(self):
        if self._solver is not None:
            self._solver.delete()
            self._solver = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


# ---------------------------------------------------------------------------
# text formats


def format_sft(X: SFT) -> str:
    lines = [f"alphabet {' '.join(X.alphabet.colors)}"]
    lines += [f"forbid {{ {P.describe()} }}" for P in X.forbidden]
    return "\n".join(lines) + "\n"


def _patterns_from(doc_forbid, alphabet: Alphabet) -> tuple[Pattern, ...]:
    return tuple(Pattern.of(alphabet, cells) for cells in doc_forbid)


def read_sft(text: str) -> SFT:
    doc = read_document(text)
    if doc.alphabet is None:
        raise ParseError("SFT file needs an alphabet line")
    return SFT(doc.alphabet, _patterns_from(doc.forbid, doc.alphabet))


def format_sofic(r: SoficRepr) -> str:
    lines = [f"alphabet {' '.join(r.target.colors)}", f"inner {' '.join(r.inner.alphabet.colors)}"]
    lines += [f"forbid {{ {P.describe()} }}" for P in r.inner.forbidden]
    mapping = " ".join(f"{c}->{r.target.colors[r.pi.mapping[i]]}" for i, c in enumerate(r.inner.alphabet.colors))
    lines.append(f"project {mapping}")
    return "\n".join(lines) + "\n"


def read_sofic(text: str) -> SoficRepr:
    doc = read_document(text)
    if doc.alphabet is None or doc.inner is None:
        raise ParseError("sofic file needs alphabet (target) and inner lines")
    missing = [c for c in doc.inner.colors if c not in doc.project]
    if missing:
        raise ParseError(f"projection undefined for {missing}")
    try:
        pi = Projection.of(doc.inner, doc.alphabet, doc.project)
    except KeyError as e:
        raise ParseError(str(e.args[0])) from None
    return SoficRepr(SFT(doc.inner, _patterns_from(doc.forbid, doc.inner)), pi)
