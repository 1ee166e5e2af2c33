"""Seeded generators, exhaustive equivalence sweeps and an independent naive evaluator."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .compile import SFT, SatEvaluator, sft_member_mask, univ_sft_parts
from .errors import BudgetExceeded, FragmentError
from .grid import Alphabet, Pattern, TorusConfig, _Grid, format_torus, sizes_upto
from .logic import (
    EMSO,
    EMSO_NORMAL,
    FO,
    MSO,
    QF,
    UNIV_SFT,
    CLASS_C,
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
    classify,
    quantify,
    walk,
)
from .marked import check_completeness, check_determinism, check_soundness
from .solver import CnfBuilder, Grounding
from .transforms import clauses_to_formula, quarter_plane_clauses, quarter_plane_defaults
from .semantics import (
    DEFAULT_BUDGET,
    FLAGGED_MODE,
    TORUS,
    BoundaryConvention,
    Evaluator,
    batch_evaluate,
    torus_batch,
    window_flagged,
)

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"


@dataclass
class EquivReport:
    verdict: str
    check: str
    sizes: list[tuple[int, int]] = field(default_factory=list)
    visited: int = 0
    elapsed: float = 0.0
    witness: _Grid | None = None
    values: tuple[bool, bool] | None = None
    seed: int | None = None
    notes: list[str] = field(default_factory=list)
    replayer: Callable[[], tuple[bool, bool]] | None = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return self.verdict == PASS

    def replay(self) -> tuple[bool, bool] | None:
        """Re-evaluate the counterexample; a sound FAIL reproduces its values."""
        return self.replayer() if self.replayer else None

    def to_text(self, timing: bool = False) -> str:
        lines = [f"verdict {self.verdict}", f"check {self.check}"]
        if self.seed is not None:
            lines.append(f"seed {self.seed}")
        lines.append("sizes " + (" ".join(f"{w}x{h}" for w, h in self.sizes) or "-"))
        lines.append(f"visited {self.visited}")
        if timing:
            lines.append(f"elapsed {self.elapsed:.3f}")
        if self.values is not None:
            lines.append(f"values {int(self.values[0])} {int(self.values[1])}")
        if self.witness is not None:
            lines.append("alphabet " + " ".join(self.witness.alphabet.colors))
            lines.append(format_torus(self.witness, "witness"))
        lines += [f"note {n}" for n in self.notes]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# per-size evaluators


def _is_fo(s: Sentence) -> bool:
    return not any(isinstance(g, (InSet, AtMostOne)) or (isinstance(g, Quant) and g.second_order)
                   for g in walk(s.body))


def _leading_eso(s: Sentence) -> bool:
    f = s.body
    while isinstance(f, Quant) and f.second_order and f.kind == "E":
        f = f.body
    return not any(isinstance(g, Quant) and g.second_order for g in walk(f))


def pick_method(s: Sentence, w: int, h: int) -> str:
    if _is_fo(s):
        return "batch"
    if _leading_eso(s):
        return "sat"
    return "brute"


def _mask(s: Sentence, w: int, h: int, method: str, budget: int) -> np.ndarray:
    q = len(s.alphabet)
    total = q ** (w * h)
    if method == "batch":
        out = np.empty(total, dtype=bool)
        step = 1 << 14
        for start in range(0, total, step):
            cfg = torus_batch(q, w, h, start, start + step)
            out[start:start + len(cfg)] = batch_evaluate(s.body, s.alphabet, w, h, cfg)
        return out
    cfgs = torus_batch(q, w, h)
    if method == "sat":
        ev = SatEvaluator(s, w, h)
        try:
            return np.fromiter((ev(tuple(c)) for c in cfgs.tolist()), dtype=bool, count=total)
        finally:
            ev.close()
    ev = Evaluator(s.body, s.alphabet, w, h, TORUS, budget)
    return np.fromiter((ev(tuple(c)) for c in cfgs.tolist()), dtype=bool, count=total)


def _one(s: Sentence, C: TorusConfig, method: str, budget: int) -> bool:
    if method == "batch":
        return bool(batch_evaluate(s.body, s.alphabet, C.width, C.height, np.array([C.cells], dtype=np.int8))[0])
    if method == "sat":
        ev = SatEvaluator(s, C.width, C.height)
        try:
            return ev(C)
        finally:
            ev.close()
    return Evaluator(s.body, s.alphabet, C.width, C.height, TORUS, budget)(C)


def _sweep(label: str, alphabet: Alphabet, sizes: Iterable[tuple[int, int]],
           left: Callable[[int, int], np.ndarray], right: Callable[[int, int], np.ndarray],
           left_one: Callable[[TorusConfig], bool], right_one: Callable[[TorusConfig], bool],
           budget: int, seed: int | None = None) -> EquivReport:
    t0 = time.perf_counter()
    rep = EquivReport(PASS, label, seed=seed)
    q = len(alphabet)
    for w, h in sizes:
        total = q ** (w * h)
        if rep.visited + total > budget:
            rep.verdict = INCONCLUSIVE
            rep.notes.append(f"budget {budget} reached before {w}x{h}")
            break
        try:
            a, b = left(w, h), right(w, h)
        except BudgetExceeded as e:
            rep.verdict = INCONCLUSIVE
            rep.notes.append(f"budget exceeded at {w}x{h}: {e}")
            break
        diff = np.flatnonzero(a != b)
        if len(diff):
            i = int(diff[0])
            rep.visited += i + 1
            rep.sizes.append((w, h))
            cells = tuple(int(v) for v in torus_batch(q, w, h, i, i + 1)[0])
            C = TorusConfig(alphabet, w, h, cells)
            rep.verdict = FAIL
            rep.witness = C
            rep.values = (bool(a[i]), bool(b[i]))
            rep.replayer = lambda C=C: (left_one(C), right_one(C))
            break
        rep.visited += total
        rep.sizes.append((w, h))
    rep.elapsed = time.perf_counter() - t0
    return rep


def equiv_on_tori(s1: Sentence, s2: Sentence, max_w: int, max_h: int, alphabet: Alphabet | None = None,
                  budget: int = DEFAULT_BUDGET, method: str = "auto", min_w: int = 1, min_h: int = 1) -> EquivReport:
    """Compare two sentences on every torus up to max_w x max_h, smallest area first."""
    alphabet = alphabet or s1.alphabet
    if s1.alphabet != alphabet or s2.alphabet != alphabet:
        raise FragmentError("sentences must share the sweep alphabet")
    m1 = method if method != "auto" else None
    m2 = method if method != "auto" else None

    def side(s, m):
        return (lambda w, h: _mask(s, w, h, m or pick_method(s, w, h), budget),
                lambda C: _one(s, C, m or pick_method(s, C.width, C.height), budget))

    l, l1 = side(s1, m1)
    r, r1 = side(s2, m2)
    return _sweep("formula equivalence on tori", alphabet, sizes_upto(max_w, max_h, min_w, min_h),
                  l, r, l1, r1, budget)


def sft_vs_formula(X: SFT, s: Sentence, sizes: Iterable[tuple[int, int]],
                   budget: int = DEFAULT_BUDGET) -> EquivReport:
    """SFT torus membership against formula evaluation; values are (sft, formula)."""
    if X.alphabet != s.alphabet:
        raise FragmentError("SFT and sentence alphabets differ")
    q = len(X.alphabet)

    def sft_mask(w, h):
        return sft_member_mask(X, w, h, torus_batch(q, w, h))

    def sft_one(C):
        return bool(sft_member_mask(X, C.width, C.height, np.array([C.cells], dtype=np.int8))[0])

    return _sweep("sft membership vs formula", X.alphabet, list(sizes), sft_mask,
                  lambda w, h: _mask(s, w, h, pick_method(s, w, h), budget), sft_one,
                  lambda C: _one(s, C, pick_method(s, C.width, C.height), budget), budget)


def marked_window_suite(P: Pattern, k: int, mode: str, sizes: Iterable[tuple[int, int]]) -> EquivReport:
    """Soundness, completeness and local determinism of the counting gadget on the given window sizes."""
    t0 = time.perf_counter()
    rep = EquivReport(PASS, f"counting gadget {mode} k={k}")
    for w, h in sizes:
        for fn in (check_soundness, check_completeness, check_determinism):
            r = fn(P, k, mode, w, h)
            rep.visited += r.cases
            if not r.ok:
                rep.verdict = FAIL
                rep.notes += [f"{r.name}: {m}" for m in r.failures]
        rep.sizes.append((w, h))
        if rep.verdict == FAIL:
            def rerun(w=w, h=h):
                ok = all(fn(P, k, mode, w, h).ok for fn in (check_soundness, check_completeness, check_determinism))
                return (True, ok)
            rep.replayer = rerun
            rep.values = (True, False)
            break
    rep.elapsed = time.perf_counter() - t0
    return rep


def _sat_sft_formula_witness(X: SFT, s: Sentence, w: int, h: int) -> TorusConfig | None:
    """A w x h torus where SFT membership and  A z. psi  disagree, or None if none exists.

    Two queries: a member where psi fails, then a non-member where psi
    holds everywhere. Both properties are invariant under translation, so
    the failure of psi, or the forbidden occurrence, may be placed at cell 0.
    """
    var, psi = univ_sft_parts(s)
    colors = X.alphabet.colors
    n = w * h

    def base():
        b = CnfBuilder()
        for j in range(n):
            lits = [b.var(("c", j, c)) for c in colors]
            b.add(lits)
            for i, a in enumerate(lits):
                for c in lits[i + 1:]:
                    b.add([-a, -c])
        return b, Grounding(b, w, h, TORUS)

    def color_vars(b):
        return np.array([[b.var(("c", j, c)) for c in colors] for j in range(n)], dtype=np.int64)

    def at(b, P, x0, y0):
        return [b.var(("c", ((y0 + o.dy) % h) * w + (x0 + o.dx) % w, colors[c])) for o, c in P.cells]

    b1, g1 = base()
    b1.add([b1.neg(g1.ground(psi, {var: 0}))])
    cv = color_vars(b1)
    by_domain: dict[tuple, list[tuple[int, ...]]] = {}
    for P in X.forbidden:
        by_domain.setdefault(P.domain, []).append(tuple(c for _, c in P.cells))
    for dom, colorings in by_domain.items():
        cols = np.array(colorings, dtype=np.int64)
        for j in range(n):
            x0, y0 = j % w, j // w
            cells = np.array([((y0 + o.dy) % h) * w + (x0 + o.dx) % w for o in dom], dtype=np.int64)
            b1.clauses.extend((-cv[cells[None, :], cols]).tolist())
    b2, g2 = base()
    for j in range(n):
        b2.add([g2.ground(psi, {var: j})])
    b2.add([b2.and_(at(b2, P, 0, 0)) for P in X.forbidden])
    for b in (b1, b2):
        solver = b.solver()
        try:
            if solver.solve():
                model = set(solver.get_model())
                cells = tuple(next(i for i, c in enumerate(colors) if b.var(("c", j, c)) in model) for j in range(n))
                return TorusConfig(X.alphabet, w, h, cells)
        finally:
            solver.delete()
    return None


def sft_vs_formula_sat(X: SFT, s: Sentence, sizes: Iterable[tuple[int, int]]) -> EquivReport:
    """Same question as sft_vs_formula, answered per size by one SAT call instead of enumeration.

    An UNSAT answer covers every torus of that size; visited counts them.
    """
    if X.alphabet != s.alphabet:
        raise FragmentError("SFT and sentence alphabets differ")
    t0 = time.perf_counter()
    rep = EquivReport(PASS, "sft membership vs formula (sat)")
    q = len(X.alphabet)
    for w, h in sizes:
        rep.sizes.append((w, h))
        C = _sat_sft_formula_witness(X, s, w, h)
        if C is not None:
            rep.verdict = FAIL
            rep.witness = C
            member = bool(sft_member_mask(X, w, h, np.array([C.cells], dtype=np.int8))[0])
            rep.values = (member, Evaluator(s.body, s.alphabet, w, h, TORUS)(C))
            rep.replayer = lambda C=C: (bool(sft_member_mask(X, C.width, C.height, np.array([C.cells], dtype=np.int8))[0]),
                                        Evaluator(s.body, s.alphabet, C.width, C.height, TORUS)(C))
            break
        rep.visited += q ** (w * h)
    rep.elapsed = time.perf_counter() - t0
    return rep


# ---------------------------------------------------------------------------
# generators


def _rand_term(rng: random.Random, var: str, span: int) -> Term:
    return Term(var, rng.randint(0, span), rng.randint(0, span))


def gen_formula(rng: random.Random, alphabet: Alphabet, fo_vars: list[str], so_vars: list[str] = (),
                depth: int = 3, span: int = 1, equalities: bool = False) -> Formula:
    """Random quantifier-free formula over the given free variables."""
    so_vars = list(so_vars)

    def atom():
        var = rng.choice(fo_vars)
        roll = rng.random()
        if so_vars and roll < 0.3:
            return InSet(rng.choice(so_vars), _rand_term(rng, var, span))
        if equalities and len(fo_vars) > 1 and roll < 0.45:
            a, b = rng.sample(fo_vars, 2)
            return Equal(_rand_term(rng, a, span), Term(b))
        return ColorAt(rng.choice(alphabet.colors), _rand_term(rng, var, span))

    def go(d):
        if d == 0 or rng.random() < 0.25:
            return atom()
        op = rng.choice("&&||!>=")
        if op == "!":
            return Not(go(d - 1))
        if op == ">":
            return Implies(go(d - 1), go(d - 1))
        if op == "=":
            return Iff(go(d - 1), go(d - 1))
        parts = tuple(go(d - 1) for _ in range(rng.randint(2, 3)))
        return And(parts) if op == "&" else Or(parts)

    # every variable gets at least one atom so quantifiers are not vacuous
    anchors = [ColorAt(rng.choice(alphabet.colors), _rand_term(rng, v, span)) for v in fo_vars]
    anchors = [a if rng.random() < 0.5 else Not(a) for a in anchors]
    body = go(depth)
    return Or((And(tuple(anchors) + (body,)), go(max(0, depth - 1)))) if rng.random() < 0.5 else And(tuple(anchors) + (body,))


def _alphabet(colors: int | Alphabet) -> Alphabet:
    if isinstance(colors, Alphabet):
        return colors
    names = ("white", "lime", "blue", "red", "gold", "cyan")
    if not 1 <= colors <= len(names):
        raise ValueError("between 1 and 6 colors")
    return Alphabet(names[:colors])


def gen_sentence(seed: int, fragment: str, colors: int | Alphabet = 2, span: int = 1, depth: int = 3,
                 p: int = 1, n: int = 1) -> Sentence:
    """Deterministic random sentence of the requested shape.

    p is the number of universal variables for ClassC, n the number of set
    variables where the shape has them.
    """
    rng = random.Random(f"{fragment}:{seed}:{colors}:{span}:{depth}:{p}:{n}")
    A = _alphabet(colors)
    sets = [f"X{i}" for i in range(1, n + 1)]
    for _ in range(100):
        if fragment == UNIV_SFT:
            s = Sentence(A, Quant("A", "z", gen_formula(rng, A, ["z"], (), depth, span)))
        elif fragment == CLASS_C:
            zs = [f"z{i}" for i in range(1, p + 1)]
            body = gen_formula(rng, A, zs, sets, depth, span, equalities=p > 1)
            s = Sentence(A, quantify([("E", X, True) for X in sets] + [("A", z, False) for z in zs], body))
        elif fragment == EMSO_NORMAL:
            body = And((Quant("A", "z", gen_formula(rng, A, ["z"], sets, depth, span)),
                        Quant("E", "y", gen_formula(rng, A, ["y"], sets, max(1, depth - 1), span))))
            s = Sentence(A, quantify([("E", X, True) for X in sets], body))
        elif fragment in (FO, EMSO, MSO, QF):
            vs = ["x", "y"][: rng.randint(1, 2)]
            prefix = [(rng.choice("AE"), v, False) for v in vs]
            use_sets = sets if fragment != FO else []
            body = quantify(prefix, gen_formula(rng, A, vs, use_sets, depth, span, equalities=len(vs) > 1))
            if fragment == EMSO:
                body = quantify([("E", X, True) for X in sets], body)
            elif fragment == MSO:
                body = quantify([("A" if i == 0 else rng.choice("AE"), X, True) for i, X in enumerate(sets)], body)
            s = Sentence(A, body)
        else:
            raise ValueError(f"cannot generate fragment {fragment!r}")
        if fragment == QF or fragment in classify(s):
            return s
    raise RuntimeError(f"no {fragment} sentence found for seed {seed}")


def gen_open_formula(seed: int, colors: int | Alphabet = 2, depth: int = 3, span: int = 1) -> tuple[Formula, list[str], list[str]]:
    """Formula with free variables x (first-order) and X (set) plus a nested quantifier."""
    rng = random.Random(f"open:{seed}:{colors}:{depth}:{span}")
    A = _alphabet(colors)
    k = rng.random()
    if k < 0.4:
        body = Quant(rng.choice("AE"), "y", gen_formula(rng, A, ["x", "y"], ["X"], depth, span, equalities=True))
    elif k < 0.7:
        inner = gen_formula(rng, A, ["x", "y"], ["X", "Y"], depth, span, equalities=True)
        body = Quant(rng.choice("AE"), "Y", Quant(rng.choice("AE"), "y", inner), True)
    else:
        inner = gen_formula(rng, A, ["x", "y"], ["X"], depth, span, equalities=True)
        body = Quant("E", "y", And((Or((inner, InSet("X", Term("y")))), AtMostOne("X"))))
    return body, ["x"], ["X"]


def gen_sft(seed: int, colors: int | Alphabet = 2, patterns: int = 2, span: int = 1) -> SFT:
    rng = random.Random(f"sft:{seed}:{colors}:{patterns}:{span}")
    A = _alphabet(colors)
    cells = [(dx, dy) for dy in range(span + 1) for dx in range(span + 1)]
    out = []
    for _ in range(patterns):
        dom = [(0, 0)] + rng.sample(cells[1:], rng.randint(0, min(2, len(cells) - 1)))
        out.append(Pattern.of(A, {d: rng.randrange(len(A)) for d in dom}))
    return SFT(A, tuple(out))


def gen_torus(seed: int, colors: int | Alphabet = 2, width: int = 3, height: int = 3) -> TorusConfig:
    rng = random.Random(f"torus:{seed}:{colors}:{width}:{height}")
    A = _alphabet(colors)
    return TorusConfig(A, width, height, tuple(rng.randrange(len(A)) for _ in range(width * height)))


def gen_assignment(seed: int, C: _Grid, fo_vars: Iterable[str], so_vars: Iterable[str]) -> dict:
    rng = random.Random(f"env:{seed}:{C.width}:{C.height}")
    cells = [(x, y) for y in range(C.height) for x in range(C.width)]
    env: dict = {v: rng.choice(cells) for v in fo_vars}
    for X in so_vars:
        env[X] = frozenset(c for c in cells if rng.random() < 0.4)
    return env


# ---------------------------------------------------------------------------
# naive evaluator: coordinates, unit steps and frozensets, no compilation


def _step(pos, d, C: _Grid, wrap: bool):
    if pos is None:
        return None
    x, y = pos[0] + d[0], pos[1] + d[1]
    if wrap:
        return (x % C.width, y % C.height)
    return (x, y)


def _walk_to(pos, t: Term, C: _Grid, wrap: bool):
    for _ in range(abs(t.dx)):
        pos = _step(pos, (1 if t.dx > 0 else -1, 0), C, wrap)
    for _ in range(abs(t.dy)):
        pos = _step(pos, (0, 1 if t.dy > 0 else -1), C, wrap)
    return pos


def _inside(pos, C: _Grid) -> bool:
    return 0 <= pos[0] < C.width and 0 <= pos[1] < C.height


def naive_eval(f: Formula | Sentence, C: _Grid, conv: BoundaryConvention = TORUS, env: dict | None = None) -> bool:
    """Direct recursive evaluation; env maps variables to (x, y) or to sets of (x, y)."""
    if isinstance(f, Sentence):
        f = f.body
    env = dict(env or {})
    wrap = conv.wraps
    cells = [(x, y) for y in range(C.height) for x in range(C.width)]
    all_sets = None

    def subsets():
        nonlocal all_sets
        if all_sets is None:
            all_sets = []
            for mask in range(1 << len(cells)):
                all_sets.append(frozenset(c for i, c in enumerate(cells) if mask >> i & 1))
        return all_sets

    def pos_of(t):
        return _walk_to(env[t.var], t, C, wrap)

    def outside_set(X, pos):
        if conv.mode != FLAGGED_MODE:
            return False
        d = conv.default_for(X)
        if d is None:
            return False
        x, y = pos
        hi = x >= C.width or y >= C.height
        lo = x < 0 or y < 0
        if hi and not lo:
            return d[0]
        if lo and not hi:
            return d[1]
        return False

    def ev(g):
        if isinstance(g, Const):
            return g.value
        if isinstance(g, ColorAt):
            p = pos_of(g.term)
            if not _inside(p, C):
                return False
            return C.alphabet.colors[C.cells[p[1] * C.width + p[0]]] == g.color
        if isinstance(g, InSet):
            p = pos_of(g.term)
            if not _inside(p, C):
                return outside_set(g.var, p)
            return p in env[g.var]
        if isinstance(g, Equal):
            a, b = pos_of(g.left), pos_of(g.right)
            return _inside(a, C) and a == b
        if isinstance(g, AtMostOne):
            return len(env[g.var]) <= 1
        if isinstance(g, Not):
            return not ev(g.arg)
        if isinstance(g, And):
            return all(ev(a) for a in g.args)
        if isinstance(g, Or):
            return any(ev(a) for a in g.args)
        if isinstance(g, Implies):
            return (not ev(g.left)) or ev(g.right)
        if isinstance(g, Iff):
            return ev(g.left) == ev(g.right)
        if isinstance(g, Quant):
            saved = env.get(g.var, _MISSING)
            dom = subsets() if g.second_order else cells
            test = any if g.kind == "E" else all
            try:
                def body(v):
                    env[g.var] = v
                    return ev(g.body)
                return test(body(v) for v in dom)
            finally:
                if saved is _MISSING:
                    env.pop(g.var, None)
                else:
                    env[g.var] = saved
        raise TypeError(f"not a formula: {g!r}")

    return bool(ev(f))


_MISSING = object()


# ---------------------------------------------------------------------------
# the one-element gadget on flagged windows


def quarter_plane_models(w: int, h: int, limit: int = 100_000) -> list[tuple[frozenset, frozenset]]:
    """All (A, S) solutions of the mirrored quarter-plane gadget on a w x h flagged window.

    Enumerated with a SAT solver and blocking clauses over the A and S
    cells; the mirror is forced equal to A inside the window.
    """
    conv = window_flagged(quarter_plane_defaults([("A", "B")]))
    body = clauses_to_formula(quarter_plane_clauses("S", "A", Term("x"), "B"))
    b = CnfBuilder()
    g = Grounding(b, w, h, conv)
    for j in range(w * h):
        b.add([g.ground(body, {"x": j})])
    keys = [(name, j) for name in ("A", "S") for j in range(w * h)]
    lits = [b.var(("s", name, j)) for name, j in keys]
    solver = b.solver()
    out = []
    try:
        while solver.solve():
            model = set(solver.get_model())
            sets = {"A": set(), "S": set()}
            for (name, j), v in zip(keys, lits):
                if v in model:
                    sets[name].add((j % w, j // w))
            out.append((frozenset(sets["A"]), frozenset(sets["S"])))
            if len(out) > limit:
                raise BudgetExceeded("gadget model enumeration", limit)
            solver.add_clause([-v if v in model else v for v in lits])
    finally:
        solver.delete()
    return out
