"""Propositional grounding of formulas on finite domains, solved with pysat.

Used for accelerated membership checks. Every use is cross-validated
against the brute-force evaluator on small instances in the test suite.
"""

from __future__ import annotations

from typing import Callable, Hashable, Iterable, Union

from pysat.solvers import Solver

from .errors import FragmentError
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
    Term,
)
from .semantics import TORUS, BoundaryConvention, shift_table

Lit = Union[int, bool]


class CnfBuilder:
    """Clause store with Tseitin gates; constants are Python booleans."""

    def __init__(self):
        self.top = 0
        self.clauses: list[list[int]] = []
        self._named: dict[Hashable, int] = {}
        self._gates: dict[tuple, int] = {}

    def new(self) -> int:
        self.top += 1
        return self.top

    def var(self, key: Hashable) -> int:
        v = self._named.get(key)
        if v is None:
            v = self._named[key] = self.new()
        return v

    def has(self, key: Hashable) -> bool:
        return key in self._named

    def add(self, clause: Iterable[Lit]) -> None:
        out = []
        for l in clause:
            if l is True:
                return
            if l is False:
                continue
            out.append(l)
        self.clauses.append(out)

    @staticmethod
    def neg(a: Lit) -> Lit:
        return (not a) if isinstance(a, bool) else -a

    def and_(self, lits: Iterable[Lit]) -> Lit:
        xs = []
        for l in lits:
            if l is False:
                return False
            if l is True:
                continue
            xs.append(l)
        xs = sorted(set(xs))
        if not xs:
            return True
        if len(xs) == 1:
            return xs[0]
        if any(-l in xs for l in xs):
            return False
        key = ("and",) + tuple(xs)
        g = self._gates.get(key)
        if g is not None:
            return g
        g = self._gates[key] = self.new()
        for l in xs:
            self.clauses.append([-g, l])
        self.clauses.append([g] + [-l for l in xs])
        return g

    def or_(self, lits: Iterable[Lit]) -> Lit:
        return self.neg(self.and_(self.neg(l) for l in lits))

    def iff(self, a: Lit, b: Lit) -> Lit:
        if isinstance(a, bool):
            return b if a else self.neg(b)
        if isinstance(b, bool):
            return a if b else self.neg(a)
        if a == b:
            return True
        if a == -b:
            return False
        key = ("iff", min(a, b), max(a, b))
        g = self._gates.get(key)
        if g is not None:
            return g
        g = self._gates[key] = self.new()
        self.clauses += [[-g, -a, b], [-g, a, -b], [g, a, b], [g, -a, -b]]
        return g

    def at_most_one(self, lits: Iterable[Lit]) -> Lit:
        """Literal equivalent to 'at most one of lits is true'."""
        xs = [l for l in lits if l is not False]
        if sum(1 for l in xs if l is True) >= 2:
            return False
        seen: Lit = False
        two: Lit = False
        for l in xs:
            two = self.or_([two, self.and_([seen, l])])
            seen = self.or_([seen, l])
        return self.neg(two)

    def solver(self, extra: Iterable[Iterable[int]] = ()) -> Solver:
        s = Solver(name="minisat22", bootstrap_with=self.clauses)
        for c in extra:
            s.add_clause(list(c))
        return s


class Grounding:
    """Ground a quantifier-free-or-first-order formula on a w x h domain.

    Color atoms map to builder variables ("c", cell, color); set atoms to
    ("s", name, cell). Out-of-window terms follow the boundary convention.
    """

    def __init__(self, builder: CnfBuilder, width: int, height: int, conv: BoundaryConvention = TORUS,
                 color_lit: Callable[[int, str], Lit] | None = None,
                 set_lit: Callable[[str, int], Lit] | None = None):
        self.b = builder
        self.w, self.h = width, height
        self.n = width * height
        self.conv = conv
        self.color_lit = color_lit or (lambda cell, color: builder.var(("c", cell, color)))
        self.set_lit = set_lit or (lambda name, cell: builder.var(("s", name, cell)))

    def _pos(self, t: Term, env: dict[str, int]):
        return shift_table(self.w, self.h, self.conv.wraps, t.dx, t.dy)[env[t.var]]

    def ground(self, f: Formula, env: dict[str, int]) -> Lit:
        b = self.b
        if isinstance(f, Const):
            return f.value
        if isinstance(f, ColorAt):
            j = self._pos(f.term, env)
            return self.color_lit(j, f.color) if isinstance(j, int) else False
        if isinstance(f, InSet):
            j = self._pos(f.term, env)
            if isinstance(j, int):
                return self.set_lit(f.var, j)
            d = self.conv.default_for(f.var)
            if d is None or j == "x":
                return False
            return d[0] if j == "ne" else d[1]
        if isinstance(f, Equal):
            a, c = self._pos(f.left, env), self._pos(f.right, env)
            return isinstance(a, int) and a == c
        if isinstance(f, AtMostOne):
            return b.at_most_one(self.set_lit(f.var, j) for j in range(self.n))
        if isinstance(f, Not):
            return b.neg(self.ground(f.arg, env))
        if isinstance(f, And):
            return b.and_(self.ground(a, env) for a in f.args)
        if isinstance(f, Or):
            return b.or_(self.ground(a, env) for a in f.args)
        if isinstance(f, Implies):
            return b.or_([b.neg(self.ground(f.left, env)), self.ground(f.right, env)])
        if isinstance(f, Iff):
            return b.iff(self.ground(f.left, env), self.ground(f.right, env))
        if isinstance(f, Quant):
            if f.second_order:
                raise FragmentError("only a leading block of existential set quantifiers can be grounded")
            parts = []
            for j in range(self.n):
                env2 = dict(env)
                env2[f.var] = j
                parts.append(self.ground(f.body, env2))
            return b.and_(parts) if f.kind == "A" else b.or_(parts)
        raise TypeError(f"not a formula: {f!r}")
