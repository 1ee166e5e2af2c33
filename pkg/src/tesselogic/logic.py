"""Monadic second-order syntax over the grid signature.

Terms are kept as a variable plus a net offset: the four unary maps N, S,
E, W are translations, so any composition of them is one displacement.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

from .errors import FragmentError, ParseError
from .grid import Alphabet, Offset

KEYWORDS = frozenset(
    {"E", "A", "E2", "A2", "N1", "S1", "E1", "W1", "atmostone", "true", "false", "alphabet"}
)
STEPS = {"N1": (0, 1), "S1": (0, -1), "E1": (1, 0), "W1": (-1, 0)}


@dataclass(frozen=True)
class Term:
    var: str
    dx: int = 0
    dy: int = 0

    @property
    def offset(self) -> Offset:
        return Offset(self.dx, self.dy)

    def shift(self, dx: int, dy: int) -> "Term":
        return Term(self.var, self.dx + dx, self.dy + dy)

    def __str__(self) -> str:
        if self.dx == 0 and self.dy == 0:
            return self.var
        return f"{self.var}@({self.dx},{self.dy})"


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class ColorAt:
    color: str
    term: Term


@dataclass(frozen=True)
class InSet:
    var: str
    term: Term


@dataclass(frozen=True)
class Equal:
    left: Term
    right: Term


@dataclass(frozen=True)
class AtMostOne:
    """Pseudo-atom: the set variable has at most one element."""

    var: str


@dataclass(frozen=True)
class Not:
    arg: "Formula"


@dataclass(frozen=True)
class And:
    args: tuple["Formula", ...]


@dataclass(frozen=True)
class Or:
    args: tuple["Formula", ...]


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Iff:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Quant:
    kind: str  # "E" or "A"
    var: str
    body: "Formula"
    second_order: bool = False

    def __post_init__(self):
        if self.kind not in ("E", "A"):
            raise ValueError(f"bad quantifier kind {self.kind!r}")


Atom = Union[Const, ColorAt, InSet, Equal, AtMostOne]
Formula = Union[Atom, Not, And, Or, Implies, Iff, Quant]
ATOMS = (Const, ColorAt, InSet, Equal, AtMostOne)
TRUE = Const(True)
FALSE = Const(False)


@dataclass(frozen=True)
class Sentence:
    alphabet: Alphabet
    body: Formula

    def __post_init__(self):
        fo, so = free_vars(self.body)
        if fo or so:
            raise ValueError(f"sentence has free variables {sorted(fo | so)}")
        for c in colors_used(self.body):
            if c not in self.alphabet:
                raise ValueError(f"color {c!r} not declared")

    def __str__(self) -> str:
        return format_formula(self.body)


# ---------------------------------------------------------------------------
# constructors


def exists(var: str, body: Formula) -> Quant:
    return Quant("E", var, body)


def forall(var: str, body: Formula) -> Quant:
    return Quant("A", var, body)


def exists_set(var: str, body: Formula) -> Quant:
    return Quant("E", var, body, True)


def forall_set(var: str, body: Formula) -> Quant:
    return Quant("A", var, body, True)


def quantify(prefix: Iterable[tuple[str, str, bool]], body: Formula) -> Formula:
    for kind, var, so in reversed(list(prefix)):
        body = Quant(kind, var, body, so)
    return body


def mk_and(args: Iterable[Formula]) -> Formula:
    out: list[Formula] = []
    for a in args:
        if isinstance(a, And):
            out.extend(a.args)
        elif a == TRUE:
            continue
        elif a == FALSE:
            return FALSE
        else:
            out.append(a)
    if not out:
        return TRUE
    return out[0] if len(out) == 1 else And(tuple(out))


def mk_or(args: Iterable[Formula]) -> Formula:
    out: list[Formula] = []
    for a in args:
        if isinstance(a, Or):
            out.extend(a.args)
        elif a == FALSE:
            continue
        elif a == TRUE:
            return TRUE
        else:
            out.append(a)
    if not out:
        return FALSE
    return out[0] if len(out) == 1 else Or(tuple(out))


def mk_not(a: Formula) -> Formula:
    if isinstance(a, Const):
        return Const(not a.value)
    if isinstance(a, Not):
        return a.arg
    return Not(a)


def mk_iff(a: Formula, b: Formula) -> Formula:
    return Iff(a, b)


# ---------------------------------------------------------------------------
# traversal


def children(f: Formula) -> tuple[Formula, ...]:
    if isinstance(f, Not):
        return (f.arg,)
    if isinstance(f, (And, Or)):
        return f.args
    if isinstance(f, (Implies, Iff)):
        return (f.left, f.right)
    if isinstance(f, Quant):
        return (f.body,)
    return ()


def walk(f: Formula) -> Iterator[Formula]:
    stack = [f]
    while stack:
        g = stack.pop()
        yield g
        stack.extend(reversed(children(g)))


def terms_of(a: Formula) -> tuple[Term, ...]:
    if isinstance(a, (ColorAt, InSet)):
        return (a.term,)
    if isinstance(a, Equal):
        return (a.left, a.right)
    return ()


def colors_used(f: Formula) -> set[str]:
    return {g.color for g in walk(f) if isinstance(g, ColorAt)}


def offsets_used(f: Formula) -> set[Offset]:
    return {t.offset for g in walk(f) for t in terms_of(g)}


def has_quantifier(f: Formula) -> bool:
    return any(isinstance(g, Quant) for g in walk(f))


def has_pseudo_atoms(f: Formula) -> bool:
    return any(isinstance(g, AtMostOne) for g in walk(f))


def free_vars(f: Formula) -> tuple[set[str], set[str]]:
    """(first-order, second-order) free variable names."""
    fo: set[str] = set()
    so: set[str] = set()

    def go(g, bfo, bso):
        if isinstance(g, Quant):
            if g.second_order:
                go(g.body, bfo, bso | {g.var})
            else:
                go(g.body, bfo | {g.var}, bso)
            return
        if isinstance(g, (InSet, AtMostOne)) and g.var not in bso:
            so.add(g.var)
        for t in terms_of(g):
            if t.var not in bfo:
                fo.add(t.var)
        for c in children(g):
            go(c, bfo, bso)

    go(f, frozenset(), frozenset())
    return fo, so


def all_names(f: Formula) -> set[str]:
    names: set[str] = set()
    for g in walk(f):
        if isinstance(g, Quant):
            names.add(g.var)
        elif isinstance(g, (InSet, AtMostOne)):
            names.add(g.var)
        elif isinstance(g, ColorAt):
            names.add(g.color)
        for t in terms_of(g):
            names.add(t.var)
    return names


class FreshNames:
    """Deterministic supply of identifiers that avoid a set of used names."""

    def __init__(self, used: Iterable[str] = (), counter: int = 0):
        self.used = set(used) | KEYWORDS
        self.counter = counter

    def take(self, base: str) -> str:
        if base not in self.used and base[:1].isalpha():
            self.used.add(base)
            return base
        while True:
            self.counter += 1
            cand = f"{base}{self.counter}" if base[-1:].isalpha() else f"{base}_{self.counter}"
            if cand not in self.used:
                self.used.add(cand)
                return cand

    def fresh(self, base: str) -> str:
        """Always suffixed with the counter."""
        while True:
            self.counter += 1
            cand = f"{base}_{self.counter}"
            if cand not in self.used:
                self.used.add(cand)
                return cand


def map_terms(f: Formula, fn) -> Formula:
    """Rebuild f applying fn to every term (no scoping)."""
    if isinstance(f, ColorAt):
        return ColorAt(f.color, fn(f.term))
    if isinstance(f, InSet):
        return InSet(f.var, fn(f.term))
    if isinstance(f, Equal):
        return Equal(fn(f.left), fn(f.right))
    if isinstance(f, (Const, AtMostOne)):
        return f
    return rebuild(f, [map_terms(c, fn) for c in children(f)])


def rebuild(f: Formula, kids: list[Formula]) -> Formula:
    if isinstance(f, Not):
        return Not(kids[0])
    if isinstance(f, And):
        return And(tuple(kids))
    if isinstance(f, Or):
        return Or(tuple(kids))
    if isinstance(f, Implies):
        return Implies(kids[0], kids[1])
    if isinstance(f, Iff):
        return Iff(kids[0], kids[1])
    if isinstance(f, Quant):
        return Quant(f.kind, f.var, kids[0], f.second_order)
    return f


def substitute(f: Formula, mapping: dict[str, Term], fresh: FreshNames | None = None) -> Formula:
    """Capture-avoiding replacement of free first-order variables by terms.

    A free occurrence ``x@(u)`` with ``x -> y@(v)`` becomes ``y@(u+v)``.
    """
    if fresh is None:
        fresh = FreshNames(all_names(f) | {t.var for t in mapping.values()})
    incoming = {t.var for t in mapping.values()}

    def go(g, m):
        if not m:
            return g
        if isinstance(g, Quant):
            if g.second_order:
                return Quant(g.kind, g.var, go(g.body, m), True)
            m2 = {k: v for k, v in m.items() if k != g.var}
            if g.var in incoming and m2:
                new = fresh.take(g.var)
                body = go(g.body, {g.var: Term(new)})
                return Quant(g.kind, new, go(body, m2), False)
            return Quant(g.kind, g.var, go(g.body, m2), False)
        if isinstance(g, ATOMS):
            def fn(t):
                if t.var in m:
                    r = m[t.var]
                    return Term(r.var, r.dx + t.dx, r.dy + t.dy)
                return t
            return map_terms(g, fn)
        return rebuild(g, [go(c, m) for c in children(g)])

    return go(f, dict(mapping))


def rename_sets(f: Formula, mapping: dict[str, str]) -> Formula:
    """Rename free set variables; bound ones shadow the mapping."""

    def go(g, m):
        if not m:
            return g
        if isinstance(g, Quant):
            if g.second_order and g.var in m:
                m = {k: v for k, v in m.items() if k != g.var}
            return Quant(g.kind, g.var, go(g.body, m), g.second_order)
        if isinstance(g, InSet):
            return InSet(m.get(g.var, g.var), g.term)
        if isinstance(g, AtMostOne):
            return AtMostOne(m.get(g.var, g.var))
        return rebuild(g, [go(c, m) for c in children(g)])

    return go(f, dict(mapping))


def rename(f: Formula, mapping: dict[str, str], second_order: bool = False) -> Formula:
    if second_order:
        return rename_sets(f, mapping)
    return substitute(f, {k: Term(v) for k, v in mapping.items()})


def rename_colors(f: Formula, mapping: dict[str, str]) -> Formula:
    if isinstance(f, ColorAt):
        return ColorAt(mapping.get(f.color, f.color), f.term)
    if isinstance(f, ATOMS):
        return f
    return rebuild(f, [rename_colors(c, mapping) for c in children(f)])


def standardize_apart(f: Formula, fresh: FreshNames | None = None) -> Formula:
    """Give every quantifier a distinct variable, distinct from free names."""
    fo_free, so_free = free_vars(f)
    if fresh is None:
        fresh = FreshNames(all_names(f) - _bound_names(f))
    seen = set(fo_free | so_free)

    def go(g):
        if isinstance(g, Quant):
            body = go(g.body)
            if g.var in seen:
                new = fresh.take(g.var)
                if g.second_order:
                    body = rename_sets(body, {g.var: new})
                else:
                    body = substitute(body, {g.var: Term(new)}, FreshNames(fresh.used))
                seen.add(new)
                return Quant(g.kind, new, body, g.second_order)
            seen.add(g.var)
            fresh.used.add(g.var)
            return Quant(g.kind, g.var, body, g.second_order)
        if isinstance(g, ATOMS):
            return g
        return rebuild(g, [go(c) for c in children(g)])

    return go(f)


def _bound_names(f: Formula) -> set[str]:
    return {g.var for g in walk(f) if isinstance(g, Quant)}


# ---------------------------------------------------------------------------
# normal forms


def nnf(f: Formula, negate: bool = False) -> Formula:
    """Negation normal form; -> and <-> are expanded."""
    if isinstance(f, Const):
        return Const(f.value != negate)
    if isinstance(f, ATOMS):
        return Not(f) if negate else f
    if isinstance(f, Not):
        return nnf(f.arg, not negate)
    if isinstance(f, And):
        parts = [nnf(a, negate) for a in f.args]
        return mk_or(parts) if negate else mk_and(parts)
    if isinstance(f, Or):
        parts = [nnf(a, negate) for a in f.args]
        return mk_and(parts) if negate else mk_or(parts)
    if isinstance(f, Implies):
        return nnf(Or((Not(f.left), f.right)), negate)
    if isinstance(f, Iff):
        a, b = f.left, f.right
        if negate:
            return mk_or([mk_and([nnf(a), nnf(b, True)]), mk_and([nnf(a, True), nnf(b)])])
        return mk_or([mk_and([nnf(a), nnf(b)]), mk_and([nnf(a, True), nnf(b, True)])])
    if isinstance(f, Quant):
        kind = f.kind if not negate else ("A" if f.kind == "E" else "E")
        return Quant(kind, f.var, nnf(f.body, negate), f.second_order)
    raise TypeError(f"not a formula: {f!r}")


def split_prefix(f: Formula) -> tuple[list[tuple[str, str, bool]], Formula]:
    prefix = []
    while isinstance(f, Quant):
        prefix.append((f.kind, f.var, f.second_order))
        f = f.body
    return prefix, f


def is_prenex(f: Formula) -> bool:
    _, m = split_prefix(f)
    return not has_quantifier(m)


_PRIORITY = {("E", True): 0, ("A", True): 1, ("A", False): 2, ("E", False): 3}


def _pull(f: Formula) -> tuple[list[tuple[str, str, bool]], Formula]:
    if isinstance(f, Quant):
        p, m = _pull(f.body)
        return [(f.kind, f.var, f.second_order)] + p, m
    if isinstance(f, (And, Or)):
        parts = [_pull(a) for a in f.args]
        has_amo = [has_pseudo_atoms(m) for _, m in parts]
        heads = [0] * len(parts)
        prefix = []
        while True:
            best = None
            for i, (p, _) in enumerate(parts):
                if heads[i] < len(p):
                    q = p[heads[i]]
                    if best is None or _PRIORITY[(q[0], q[2])] < _PRIORITY[(best[1][0], best[1][2])]:
                        best = (i, q)
            if best is None:
                break
            i, q = best
            if not q[2] and any(has_amo[j] for j in range(len(parts)) if j != i):
                raise FragmentError("AtMostOne pseudo-atom would cross a first-order quantifier")
            prefix.append(q)
            heads[i] += 1
        mats = [m for _, m in parts]
        return prefix, (mk_and(mats) if isinstance(f, And) else mk_or(mats))
    if isinstance(f, Not) or isinstance(f, ATOMS):
        return [], f
    raise FragmentError("prenex expects negation normal form")


def prenex_formula(f: Formula) -> Formula:
    if is_prenex(f):
        return f
    g = standardize_apart(nnf(f))
    prefix, matrix = _pull(g)
    return quantify(prefix, matrix)


def prenex(s: Sentence) -> Sentence:
    return Sentence(s.alphabet, prenex_formula(s.body))


# ---------------------------------------------------------------------------
# fragments

QF = "QF"
UNIV_SFT = "UnivSFT"
CLASS_C = "ClassC"
EMSO = "EMSO"
FO = "FO"
MSO = "MSO"
EMSO_NORMAL = "EMSONormal"
ALL_TAGS = (QF, UNIV_SFT, CLASS_C, EMSO, FO, MSO, EMSO_NORMAL)


def _has_so_quant(f: Formula) -> bool:
    return any(isinstance(g, Quant) and g.second_order for g in walk(f))


def _strip_eso(f: Formula) -> tuple[list[str], Formula]:
    names = []
    while isinstance(f, Quant) and f.second_order and f.kind == "E":
        names.append(f.var)
        f = f.body
    return names, f


def _univ_block(f: Formula) -> bool:
    """A z. QF with exactly one universal."""
    return isinstance(f, Quant) and not f.second_order and f.kind == "A" and not has_quantifier(f.body)


def _exist_block(f: Formula) -> bool:
    p, m = split_prefix(f)
    return all(k == "E" and not so for k, _, so in p) and not has_quantifier(m)


def normal_parts(f: Formula):
    """Match the shape  E2 X.. ((A z. phi1) & (E z.. phi2)).

    Returns (set vars, (z, phi1) | None, (vars, phi2) | None) or None. A bare
    quantifier-free body counts as an existential block with no variables.
    """
    sets, body = _strip_eso(f)
    univ = exist = None
    if _univ_block(body):
        univ = (body.var, body.body)
    elif _exist_block(body):
        p, m = split_prefix(body)
        exist = ([v for _, v, _ in p], m)
    elif isinstance(body, And) and len(body.args) == 2:
        a, b = body.args
        if _univ_block(b) and not _univ_block(a):
            a, b = b, a
        if _univ_block(a) and _exist_block(b):
            univ = (a.var, a.body)
            p, m = split_prefix(b)
            exist = ([v for _, v, _ in p], m)
        else:
            return None
    else:
        return None
    return sets, univ, exist


def class_c_parts(f: Formula):
    """(set vars, universal vars, matrix) when f is E2* A* QF, else None."""
    prefix, matrix = split_prefix(f)
    if has_quantifier(matrix):
        return None
    sets, univ = [], []
    for kind, var, so in prefix:
        if so and kind == "E" and not univ:
            sets.append(var)
        elif not so and kind == "A":
            univ.append(var)
        else:
            return None
    return sets, univ, matrix


def classify(s: Sentence) -> set[str]:
    body = s.body
    tags = {MSO}
    try:
        pre = prenex_formula(body)
    except FragmentError:
        pre = None
    forms = [body] + ([pre] if pre is not None else [])
    if not has_quantifier(body):
        tags.add(QF)
    if not _has_so_quant(body):
        tags.add(FO)
    for f in forms:
        _, rest = _strip_eso(f)
        if not _has_so_quant(rest):
            tags.add(EMSO)
        cc = class_c_parts(f)
        if cc is not None:
            tags.add(CLASS_C)
            sets, univ, matrix = cc
            if not sets and len(univ) == 1 and not has_pseudo_atoms(matrix) and not any(
                isinstance(g, InSet) for g in walk(matrix)
            ):
                tags.add(UNIV_SFT)
    if normal_parts(body) is not None:
        tags.add(EMSO_NORMAL)
    return tags


def universal_count(s: Sentence) -> int:
    cc = class_c_parts(prenex_formula(s.body))
    if cc is None:
        raise FragmentError("sentence is not in class C")
    return len(cc[1])


# ---------------------------------------------------------------------------
# printing

_PREC = {Quant: 0, Iff: 1, Implies: 2, Or: 3, And: 4, Not: 5}


def _prec(f: Formula) -> int:
    return _PREC.get(type(f), 6)


def format_formula(f: Formula) -> str:
    if isinstance(f, Const):
        return "true" if f.value else "false"
    if isinstance(f, ColorAt):
        return f"{f.color}({f.term})"
    if isinstance(f, InSet):
        return f"{f.var}({f.term})"
    if isinstance(f, Equal):
        return f"{f.left} = {f.right}"
    if isinstance(f, AtMostOne):
        return f"atmostone({f.var})"
    if isinstance(f, Quant):
        q = f.kind + ("2" if f.second_order else "")
        return f"{q} {f.var}. {format_formula(f.body)}"
    if isinstance(f, Not):
        inner = format_formula(f.arg)
        if _prec(f.arg) < _prec(f):
            inner = f"({inner})"
        return "!" + inner

    def wrap(c):
        text = format_formula(c)
        return f"({text})" if _prec(c) <= _prec(f) else text

    if isinstance(f, And):
        return " & ".join(wrap(c) for c in f.args)
    if isinstance(f, Or):
        return " | ".join(wrap(c) for c in f.args)
    if isinstance(f, Implies):
        return f"{wrap(f.left)} -> {wrap(f.right)}"
    if isinstance(f, Iff):
        return f"{wrap(f.left)} <-> {wrap(f.right)}"
    raise TypeError(f"not a formula: {f!r}")


def print_sentence(s: Sentence) -> str:
    return f"alphabet {' '.join(s.alphabet.colors)}\n{format_formula(s.body)}\n"


# ---------------------------------------------------------------------------
# parsing

_TOK = re.compile(
    r"(?P<ws>\s+)|(?P<comment>#[^\n]*)|(?P<op><->|->|[()!&|=@,.])|(?P<int>-?\d+)|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
)


def _lex(text: str, line0: int = 1):
    toks = []
    line, col_base = line0, 0
    pos = 0
    while pos < len(text):
        m = _TOK.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - col_base + 1)
        kind = m.lastgroup
        val = m.group(0)
        if kind not in ("ws", "comment"):
            toks.append((kind, val, line, m.start() - col_base + 1))
        nl = val.count("\n")
        if nl:
            line += nl
            col_base = m.start() + val.rindex("\n") + 1
        pos = m.end()
    toks.append(("eof", "", line, pos - col_base + 1))
    return toks


class _Parser:
    def __init__(self, toks, alphabet: Alphabet, free_fo=(), free_so=()):
        self.toks = toks
        self.i = 0
        self.colors = set(alphabet.colors)
        self.fo = [set(free_fo)]
        self.so = [set(free_so)]

    def peek(self, k=0):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def err(self, msg, tok=None):
        tok = tok or self.peek()
        return ParseError(msg, tok[2], tok[3])

    def expect(self, val):
        tok = self.peek()
        if tok[1] != val or tok[0] == "eof":
            raise self.err(f"expected {val!r}, found {tok[1] or 'end of input'!r}")
        self.i += 1
        return tok

    def at_quant(self):
        t0, t1, t2 = self.peek(), self.peek(1), self.peek(2)
        return t0[0] == "ident" and t0[1] in ("E", "A", "E2", "A2") and t1[0] == "ident" and t2[1] == "."

    def formula(self):
        left = self.implication()
        while self.peek()[1] == "<->":
            self.i += 1
            left = Iff(left, self.implication())
        return left

    def implication(self):
        left = self.disjunction()
        if self.peek()[1] == "->":
            self.i += 1
            return Implies(left, self.implication())
        return left

    def disjunction(self):
        args = [self.conjunction()]
        while self.peek()[1] == "|":
            self.i += 1
            args.append(self.conjunction())
        return args[0] if len(args) == 1 else Or(tuple(args))

    def conjunction(self):
        args = [self.unary()]
        while self.peek()[1] == "&":
            self.i += 1
            args.append(self.unary())
        return args[0] if len(args) == 1 else And(tuple(args))

    def unary(self):
        tok = self.peek()
        if tok[1] == "!":
            self.i += 1
            return Not(self.unary())
        if tok[1] == "(":
            self.i += 1
            f = self.formula()
            self.expect(")")
            return f
        if self.at_quant():
            return self.quantifier()
        return self.atom()

    def quantifier(self):
        qtok, vtok = self.peek(), self.peek(1)
        self.i += 3
        so = qtok[1].endswith("2")
        var = vtok[1]
        if var in KEYWORDS or var in self.colors:
            raise self.err(f"cannot bind {var!r}: it is a keyword or color", vtok)
        if so and not var[0].isupper():
            raise self.err(f"set variable {var!r} must start with an uppercase letter", vtok)
        if not so and not var[0].islower():
            raise self.err(f"first-order variable {var!r} must start with a lowercase letter", vtok)
        scope = self.so if so else self.fo
        scope.append(scope[-1] | {var})
        body = self.formula()
        scope.pop()
        return Quant(qtok[1][0], var, body, so)

    def atom(self):
        tok = self.peek()
        if tok[0] != "ident":
            raise self.err(f"unexpected {tok[1] or 'end of input'!r}")
        name = tok[1]
        if name in ("true", "false"):
            self.i += 1
            return Const(name == "true")
        if name == "atmostone":
            self.i += 1
            self.expect("(")
            v = self.peek()
            if v[0] != "ident" or v[1] not in self.so[-1]:
                raise self.err(f"unbound set variable {v[1]!r}", v)
            self.i += 1
            self.expect(")")
            return AtMostOne(v[1])
        nxt = self.peek(1)[1]
        if name in STEPS or (nxt != "(" and name not in self.colors):
            left = self.term()
            self.expect("=")
            return Equal(left, self.term())
        if name in self.colors:
            self.i += 1
            self.expect("(")
            t = self.term()
            self.expect(")")
            return ColorAt(name, t)
        if name[0].isupper():
            if name not in self.so[-1]:
                raise self.err(f"unbound set variable or undeclared color {name!r}", tok)
            self.i += 1
            self.expect("(")
            t = self.term()
            self.expect(")")
            return InSet(name, t)
        raise self.err(f"undeclared color {name!r}", tok)

    def term(self):
        tok = self.peek()
        if tok[0] != "ident":
            raise self.err(f"expected a term, found {tok[1] or 'end of input'!r}")
        name = tok[1]
        if name in STEPS:
            self.i += 1
            self.expect("(")
            inner = self.term()
            self.expect(")")
            dx, dy = STEPS[name]
            return inner.shift(dx, dy)
        if not name[0].islower() or name in KEYWORDS or name in self.colors:
            raise self.err(f"expected a first-order variable, found {name!r}", tok)
        if name not in self.fo[-1]:
            raise self.err(f"unbound variable {name!r}", tok)
        self.i += 1
        if self.peek()[1] == "@":
            self.i += 1
            self.expect("(")
            dx = self.integer()
            self.expect(",")
            dy = self.integer()
            self.expect(")")
            return Term(name, dx, dy)
        return Term(name)

    def integer(self):
        tok = self.peek()
        if tok[0] != "int":
            raise self.err(f"expected an integer, found {tok[1]!r}")
        self.i += 1
        return int(tok[1])


def _split_header(text: str) -> tuple[Alphabet, str, int]:
    lines = text.splitlines(keepends=True)
    for n, line in enumerate(lines):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        words = content.split()
        if words[0] != "alphabet":
            raise ParseError("expected an 'alphabet' line first", n + 1, 1)
        if len(words) < 2:
            raise ParseError("empty alphabet", n + 1, 1)
        for w in words[1:]:
            if w in KEYWORDS:
                raise ParseError(f"color name {w!r} is a keyword", n + 1, 1)
        try:
            alpha = Alphabet(tuple(words[1:]))
        except ValueError as e:
            raise ParseError(str(e), n + 1, 1) from None
        return alpha, "".join(lines[n + 1 :]), n + 2
    raise ParseError("empty input", 1, 1)


def parse_formula(text: str, alphabet: Alphabet, free_fo: Iterable[str] = (), free_so: Iterable[str] = (), line0: int = 1) -> Formula:
    p = _Parser(_lex(text, line0), alphabet, free_fo, free_so)
    f = p.formula()
    tok = p.peek()
    if tok[0] != "eof":
        raise p.err(f"unexpected {tok[1]!r} after formula")
    return f


def parse(text: str) -> Sentence:
    alphabet, rest, line0 = _split_header(text)
    body = parse_formula(rest, alphabet, line0=line0)
    return Sentence(alphabet, body)
