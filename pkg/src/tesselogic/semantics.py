"""Brute-force evaluation on tori and bounded windows.

This is the trusted slow oracle. Formulas are compiled once per domain size
into nested closures; first-order variables are bound to cell indices and
set variables to integer bitmasks over the cells.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Mapping

import numpy as np

from .errors import AlphabetMismatch, BudgetExceeded, FragmentError
from .grid import Alphabet, Projection, TorusConfig, WindowConfig, _Grid
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
    free_vars,
    offsets_used,
    terms_of,
    walk,
)

DEFAULT_BUDGET = 10_000_000

TORUS_MODE = "TORUS"
ATOM_FALSE_MODE = "WINDOW_ATOM_FALSE"
FLAGGED_MODE = "WINDOW_FLAGGED"


@dataclass(frozen=True)
class BoundaryConvention:
    mode: str
    defaults: tuple[tuple[str, bool, bool], ...] = ()

    def __post_init__(self):
        if self.mode not in (TORUS_MODE, ATOM_FALSE_MODE, FLAGGED_MODE):
            raise ValueError(f"unknown boundary mode {self.mode!r}")
        if self.defaults and self.mode != FLAGGED_MODE:
            raise ValueError("set-variable defaults only apply to WINDOW_FLAGGED")

    @property
    def wraps(self) -> bool:
        return self.mode == TORUS_MODE

    def default_for(self, var: str) -> tuple[bool, bool] | None:
        for name, ne, sw in self.defaults:
            if name == var:
                return (ne, sw)
        return None


TORUS = BoundaryConvention(TORUS_MODE)
WINDOW_ATOM_FALSE = BoundaryConvention(ATOM_FALSE_MODE)


def window_flagged(defaults: Mapping[str, tuple[bool, bool]]) -> BoundaryConvention:
    """Flagged window convention; defaults maps set variable -> (ne, sw)."""
    items = tuple(sorted((k, bool(v[0]), bool(v[1])) for k, v in defaults.items()))
    return BoundaryConvention(FLAGGED_MODE, items)


CONVENTIONS = {"torus": TORUS, "window-false": WINDOW_ATOM_FALSE}


# overflow codes for out-of-window terms
_NE, _SW, _CORNER = "ne", "sw", "x"


@lru_cache(maxsize=4096)
def shift_table(w: int, h: int, wrap: bool, dx: int, dy: int) -> tuple:
    """For each cell index, the index reached by (dx, dy), or an overflow code."""
    out = []
    for y in range(h):
        for x in range(w):
            x2, y2 = x + dx, y + dy
            if wrap:
                out.append((y2 % h) * w + (x2 % w))
                continue
            ox = 1 if x2 >= w else (-1 if x2 < 0 else 0)
            oy = 1 if y2 >= h else (-1 if y2 < 0 else 0)
            if ox == 0 and oy == 0:
                out.append(y2 * w + x2)
            elif ox >= 0 and oy >= 0:
                out.append(_NE)
            elif ox <= 0 and oy <= 0:
                out.append(_SW)
            else:
                out.append(_CORNER)
    return tuple(out)


class _Budget:
    def __init__(self, bound: int):
        self.bound = bound
        self.used = 0

    def charge(self, n: int = 1):
        self.used += n
        if self.used > self.bound:
            raise BudgetExceeded("second-order enumeration", self.bound)


class Evaluator:
    """A formula compiled for one domain size and boundary convention.

    Calling it with a configuration and an environment (variable name ->
    cell index for first-order, bitmask for second-order) returns the truth
    value.
    """

    def __init__(self, f: Formula, alphabet: Alphabet, width: int, height: int,
                 conv: BoundaryConvention = TORUS, budget: int = DEFAULT_BUDGET):
        self.formula = f
        self.alphabet = alphabet
        self.width, self.height = width, height
        self.conv = conv
        self.ncells = width * height
        self.budget = budget
        self._meter = _Budget(budget)
        self.free_fo, self.free_so = free_vars(f)
        self._fn = self._compile(f)

    # -- compilation -------------------------------------------------------
    def _table(self, t):
        return shift_table(self.width, self.height, self.conv.wraps, t.dx, t.dy)

    def _compile(self, f):
        c = self._compile
        if isinstance(f, Const):
            v = f.value
            return lambda cells, fo, so: v
        if isinstance(f, ColorAt):
            tbl, var, cid = self._table(f.term), f.term.var, self.alphabet.index(f.color)
            if self.conv.wraps:
                return lambda cells, fo, so: cells[tbl[fo[var]]] == cid

            def color_at(cells, fo, so):
                j = tbl[fo[var]]
                return j.__class__ is int and cells[j] == cid
            return color_at
        if isinstance(f, InSet):
            tbl, var, X = self._table(f.term), f.term.var, f.var
            if self.conv.wraps:
                return lambda cells, fo, so: (so[X] >> tbl[fo[var]]) & 1 == 1
            d = self.conv.default_for(X)
            ne, sw = d if d is not None else (False, False)
            outside = {_NE: ne, _SW: sw, _CORNER: False}

            def in_set(cells, fo, so):
                j = tbl[fo[var]]
                if j.__class__ is int:
                    return (so[X] >> j) & 1 == 1
                return outside[j]
            return in_set
        if isinstance(f, Equal):
            t1, t2 = self._table(f.left), self._table(f.right)
            v1, v2 = f.left.var, f.right.var

            def equal(cells, fo, so):
                a = t1[fo[v1]]
                return a.__class__ is int and a == t2[fo[v2]]
            return equal
        if isinstance(f, AtMostOne):
            X = f.var

            def at_most_one(cells, fo, so):
                m = so[X]
                return m & (m - 1) == 0
            return at_most_one
        if isinstance(f, Not):
            a = c(f.arg)
            return lambda cells, fo, so: not a(cells, fo, so)
        if isinstance(f, And):
            parts = [c(g) for g in f.args]

            def conj(cells, fo, so):
                for p in parts:
                    if not p(cells, fo, so):
                        return False
                return True
            return conj
        if isinstance(f, Or):
            parts = [c(g) for g in f.args]

            def disj(cells, fo, so):
                for p in parts:
                    if p(cells, fo, so):
                        return True
                return False
            return disj
        if isinstance(f, Implies):
            a, b = c(f.left), c(f.right)
            return lambda cells, fo, so: (not a(cells, fo, so)) or b(cells, fo, so)
        if isinstance(f, Iff):
            a, b = c(f.left), c(f.right)
            return lambda cells, fo, so: a(cells, fo, so) == b(cells, fo, so)
        if isinstance(f, Quant):
            body, var = c(f.body), f.var
            want = f.kind == "E"
            if f.second_order:
                rng = range(1 << self.ncells)
                meter = self._meter
                env_key = "so"
            else:
                rng = range(self.ncells)
                meter = None
                env_key = "fo"

            def quant(cells, fo, so):
                env = so if env_key == "so" else fo
                missing = var not in env
                old = env.get(var)
                try:
                    for i in rng:
                        if meter is not None:
                            meter.charge()
                        env[var] = i
                        if body(cells, fo, so) == want:
                            return want
                    return not want
                finally:
                    if missing:
                        del env[var]
                    else:
                        env[var] = old
            return quant
        raise TypeError(f"not a formula: {f!r}")

    # -- evaluation ----------------------------------------------------------
    def __call__(self, C: _Grid | tuple[int, ...], fo: Mapping[str, int] | None = None,
                 so: Mapping[str, int] | None = None) -> bool:
        cells = C.cells if isinstance(C, _Grid) else C
        fo = dict(fo or {})
        so = dict(so or {})
        missing = (self.free_fo - fo.keys()) | (self.free_so - so.keys())
        if missing:
            raise ValueError(f"unbound variables {sorted(missing)}")
        self._meter.used = 0
        return bool(self._fn(cells, fo, so))


def _check_domain(C: _Grid, conv: BoundaryConvention) -> None:
    if conv.wraps and not isinstance(C, TorusConfig):
        raise ValueError("TORUS convention requires a TorusConfig")
    if not conv.wraps and not isinstance(C, WindowConfig):
        raise ValueError("window conventions require a WindowConfig")


def env_from_cells(C: _Grid, env: Mapping[str, object] | None) -> tuple[dict, dict]:
    """Split an assignment given in coordinates into index/bitmask form."""
    fo, so = {}, {}
    for name, val in (env or {}).items():
        if isinstance(val, tuple) and len(val) == 2 and all(isinstance(v, int) for v in val):
            x, y = val
            if not (0 <= x < C.width and 0 <= y < C.height):
                raise ValueError(f"cell {val} outside the domain")
            fo[name] = y * C.width + x
        else:
            mask = 0
            for x, y in val:  # type: ignore[union-attr]
                if not (0 <= x < C.width and 0 <= y < C.height):
                    raise ValueError(f"cell {(x, y)} outside the domain")
                mask |= 1 << (y * C.width + x)
            so[name] = mask
    return fo, so


def evaluate(s: Sentence | Formula, C: _Grid, conv: BoundaryConvention = TORUS,
             env: Mapping[str, object] | None = None, budget: int = DEFAULT_BUDGET) -> bool:
    """Truth value of s on C. env maps variables to (x, y) cells or sets of cells."""
    _check_domain(C, conv)
    if isinstance(s, Sentence):
        if s.alphabet != C.alphabet:
            raise AlphabetMismatch("sentence and configuration alphabets differ")
        f = s.body
    else:
        f = s
    fo, so = env_from_cells(C, env)
    return Evaluator(f, C.alphabet, C.width, C.height, conv, budget)(C, fo, so)


def _configs(alphabet: Alphabet, w: int, h: int, conv: BoundaryConvention):
    cls = TorusConfig if conv.wraps else WindowConfig
    for cells in itertools.product(range(len(alphabet)), repeat=w * h):
        yield cls(alphabet, w, h, cells)


def models(s: Sentence, w: int, h: int, conv: BoundaryConvention = TORUS,
           budget: int = DEFAULT_BUDGET) -> list[_Grid]:
    total = len(s.alphabet) ** (w * h)
    if total > budget:
        raise BudgetExceeded(f"models {w}x{h}", budget, total)
    ev = Evaluator(s.body, s.alphabet, w, h, conv, budget)
    return [C for C in _configs(s.alphabet, w, h, conv) if ev(C)]


def _preimages(pi: Projection, C: _Grid, budget: int):
    if pi.target != C.alphabet:
        raise AlphabetMismatch("configuration is not over the projection's target alphabet")
    choices = [pi.preimage(c) for c in C.cells]
    total = 1
    for ch in choices:
        total *= len(ch)
    if total > budget:
        raise BudgetExceeded("preimage enumeration", budget, total)
    for cells in itertools.product(*choices):
        yield type(C)(pi.source, C.width, C.height, cells)


def e_projection_member(pi: Projection, s: Sentence, C: _Grid, conv: BoundaryConvention = TORUS,
                        budget: int = DEFAULT_BUDGET) -> bool:
    """Some same-size preimage of C satisfies s."""
    if s.alphabet != pi.source:
        raise AlphabetMismatch("sentence is not over the projection's source alphabet")
    _check_domain(C, conv)
    ev = Evaluator(s.body, s.alphabet, C.width, C.height, conv, budget)
    return any(ev(D) for D in _preimages(pi, C, budget))


def a_projection_member(pi: Projection, s: Sentence, C: _Grid, conv: BoundaryConvention = TORUS,
                        budget: int = DEFAULT_BUDGET) -> bool:
    """Every same-size preimage of C satisfies s."""
    if s.alphabet != pi.source:
        raise AlphabetMismatch("sentence is not over the projection's source alphabet")
    _check_domain(C, conv)
    ev = Evaluator(s.body, s.alphabet, C.width, C.height, conv, budget)
    return all(ev(D) for D in _preimages(pi, C, budget))


# ---------------------------------------------------------------------------
# vectorized evaluation of first-order sentences over many tori at once


def torus_batch(q: int, w: int, h: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Tori number start..stop-1 in lexicographic order, shape (n, w*h)."""
    n = w * h
    total = q ** n
    stop = total if stop is None else min(stop, total)
    codes = np.arange(start, stop, dtype=np.int64)
    out = np.empty((len(codes), n), dtype=np.int8)
    for i in range(n):
        out[:, i] = (codes // q ** (n - 1 - i)) % q
    return out


def batch_evaluate(f: Formula, alphabet: Alphabet, w: int, h: int, configs: np.ndarray) -> np.ndarray:
    """Evaluate a closed first-order formula on many tori (rows of configs)."""
    if any(isinstance(g, (InSet, AtMostOne)) or (isinstance(g, Quant) and g.second_order) for g in walk(f)):
        raise FragmentError("batch evaluation supports first-order sentences only")
    N = configs.shape[0]
    tables = {}

    def table(t):
        key = (t.dx, t.dy)
        if key not in tables:
            tables[key] = np.array(shift_table(w, h, True, t.dx, t.dy), dtype=np.int64)
        return tables[key]

    def place(arr, axes, scope):
        # arr: leading config axis (size N or 1), then one axis per variable in axes
        pos = [scope.index(a) for a in axes]
        order = sorted(range(len(axes)), key=lambda i: pos[i])
        arr = arr.transpose([0] + [1 + i for i in order])
        shape = [arr.shape[0]] + [1] * len(scope)
        for k, i in enumerate(order):
            shape[1 + pos[i]] = arr.shape[1 + k]
        return arr.reshape(shape)

    def ev(g, scope):
        if isinstance(g, Const):
            return np.full((1,) + (1,) * len(scope), g.value)
        if isinstance(g, ColorAt):
            cid = alphabet.index(g.color)
            vals = configs[:, table(g.term)] == cid
            return place(vals, [g.term.var], scope)
        if isinstance(g, Equal):
            a, b = table(g.left), table(g.right)
            if g.left.var == g.right.var:
                return place((a == b)[None, :], [g.left.var], scope)
            return place((a[:, None] == b[None, :])[None], [g.left.var, g.right.var], scope)
        if isinstance(g, Not):
            return ~ev(g.arg, scope)
        if isinstance(g, And):
            out = ev(g.args[0], scope)
            for a in g.args[1:]:
                out = out & ev(a, scope)
            return out
        if isinstance(g, Or):
            out = ev(g.args[0], scope)
            for a in g.args[1:]:
                out = out | ev(a, scope)
            return out
        if isinstance(g, Implies):
            return ~ev(g.left, scope) | ev(g.right, scope)
        if isinstance(g, Iff):
            return ev(g.left, scope) == ev(g.right, scope)
        if isinstance(g, Quant):
            inner = scope + [g.var]
            val = ev(g.body, inner)
            return val.all(axis=-1) if g.kind == "A" else val.any(axis=-1)
        raise TypeError(f"not a formula: {g!r}")

    _check_shadowing(f)
    out = ev(f, [])
    return np.broadcast_to(out.reshape(-1), (N,)).copy() if out.shape[0] == 1 else out.reshape(N)


def _check_shadowing(f: Formula) -> None:
    def go(g, bound):
        if isinstance(g, Quant):
            if g.var in bound:
                raise FragmentError("batch evaluation needs distinct bound variable names")
            go(g.body, bound | {g.var})
            return
        for t in terms_of(g):
            if t.var not in bound:
                raise ValueError(f"unbound variable {t.var!r}")
        from .logic import children
        for ch in children(g):
            go(ch, bound)

    go(f, frozenset())


def batch_models_mask(s: Sentence, w: int, h: int, chunk: int = 1 << 16) -> np.ndarray:
    """Boolean mask over all w x h tori (lexicographic) of which satisfy s."""
    q = len(s.alphabet)
    total = q ** (w * h)
    nvars = sum(1 for g in walk(s.body) if isinstance(g, Quant))
    per = max(1, chunk // max(1, (w * h) ** max(0, nvars - 1)))
    out = np.empty(total, dtype=bool)
    for start in range(0, total, per):
        cfg = torus_batch(q, w, h, start, start + per)
        out[start:start + len(cfg)] = batch_evaluate(s.body, s.alphabet, w, h, cfg)
    return out


def span(f: Formula) -> tuple[int, int]:
    offs = offsets_used(f) | {(0, 0)}
    xs = [o[0] for o in offs]
    ys = [o[1] for o in offs]
    return max(xs) - min(xs), max(ys) - min(ys)
