"""The ten acceptance criteria, each run at its stated scale and time limit.

Every test records one line for the terminal summary; a criterion fails if
either its check or its time limit fails.
"""

import itertools
import shlex
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from tesselogic.compile import (
    SatEvaluator,
    emso_to_sofic,
    formula_to_sft,
    sft_to_formula,
    sofic_to_formula,
    torus_members_sft,
    torus_members_sofic,
)
from tesselogic.grid import (
    Alphabet,
    Pattern,
    WindowConfig,
    all_tori,
    count_occurrences,
    hanf_equiv,
    square,
)
from tesselogic.harness import (
    equiv_on_tori,
    gen_assignment,
    gen_open_formula,
    gen_sentence,
    gen_torus,
    naive_eval,
    quarter_plane_models,
    sft_vs_formula,
    sft_vs_formula_sat,
)
from tesselogic.logic import CLASS_C, UNIV_SFT, classify, parse, universal_count
from tesselogic.marked import (
    check_completeness,
    check_determinism,
    check_soundness,
    check_zone_rectangle,
    counting_marked_sft,
    intersect_marked,
    projected_acceptance,
    union_marked,
)
from tesselogic.semantics import TORUS, WINDOW_ATOM_FALSE, evaluate, models, window_flagged
from tesselogic.transforms import (
    ABSTRACT,
    EQ,
    GEQ,
    clauses_to_formula,
    counting_formula,
    intersect_emso,
    quarter_plane_clauses,
    quarter_plane_defaults,
    reduce_universals,
    union_emso,
)
from tesselogic.logic import Term

ROOT = Path(__file__).resolve().parent.parent
CHALLENGE = (ROOT / "docs" / "golden" / "inputs" / "challenge.mso").read_text()
A2 = Alphabet(("white", "lime"))
LIME = Pattern.of(A2, {(0, 0): "lime"})
DOMINO = Pattern.of(A2, {(0, 0): "lime", (1, 0): "lime"})


def settle(record, label, limit, t0, failures):
    elapsed = time.perf_counter() - t0
    over = elapsed > limit
    detail = "; ".join(failures[:3])
    if over:
        detail = (detail + "; " if detail else "") + f"over the {limit}s limit"
    record(label, not failures and not over, elapsed, detail)
    assert not failures, failures[:5]
    assert not over, f"{elapsed:.1f}s > {limit}s"


def test_criterion_01_sft_bridge(record_criterion):
    t0 = time.perf_counter()
    sizes = [(3, 3), (4, 3), (3, 4), (4, 4)]
    failures = []
    for seed in range(50):
        colors = 2 + seed % 2
        s = gen_sentence(seed, UNIV_SFT, colors=colors, span=2)
        X = formula_to_sft(s)
        # one SAT call per size covers every torus of that size
        rep = sft_vs_formula_sat(X, s, sizes)
        if not rep.ok:
            failures.append(f"seed {seed} sat: {rep.witness}")
        # enumeration route wherever the torus count is small enough
        enum_sizes = sizes if colors == 2 else sizes[:1]
        rep = sft_vs_formula(X, s, enum_sizes)
        if not rep.ok:
            failures.append(f"seed {seed} enumeration: {rep.witness}")
    settle(record_criterion, "1 SFT bridge (50 sentences, 3x3..4x4)", 60, t0, failures)


def test_criterion_02_round_trips(record_criterion):
    t0 = time.perf_counter()
    failures = []
    for seed in range(50):
        colors = 2 + seed % 2
        s = gen_sentence(seed, UNIV_SFT, colors=colors, span=1)
        X = formula_to_sft(s)
        rep = equiv_on_tori(s, sft_to_formula(X), 3, 3)
        if not rep.ok:
            failures.append(f"formula seed {seed}: {rep.witness}")
        Y = formula_to_sft(sft_to_formula(X))
        for w, h in [(w, h) for w in range(1, 4) for h in range(1, 4)]:
            if torus_members_sft(X, w, h) != torus_members_sft(Y, w, h):
                failures.append(f"sft seed {seed} at {w}x{h}")
    settle(record_criterion, "2 SFT round trips (50 instances, <=3x3)", 60, t0, failures)


def test_criterion_03_sofic_bridge(record_criterion):
    t0 = time.perf_counter()
    failures = []
    for seed in range(30):
        s = gen_sentence(seed, CLASS_C, colors=2, p=1, n=1 + seed % 2)
        r = emso_to_sofic(s)
        for w, h in [(1, 1), (2, 1), (1, 2), (2, 2)]:
            got = {C.cells for C in torus_members_sofic(r, w, h)}
            want = {C.cells for C in models(s, w, h)}
            if got != want:
                failures.append(f"seed {seed} at {w}x{h}")
        rep = equiv_on_tori(s, sofic_to_formula(r), 2, 2)
        if not rep.ok:
            failures.append(f"seed {seed} loop: {rep.verdict}")
    settle(record_criterion, "3 sofic bridge (30 sentences, <=2x2)", 120, t0, failures)


def test_criterion_04_reduction(record_criterion):
    t0 = time.perf_counter()
    failures = []
    cases = [("challenge", parse(CHALLENGE))]
    cases += [(f"seed {seed}", gen_sentence(seed, CLASS_C, colors=2, p=2, n=1)) for seed in range(20)]
    for name, s in cases:
        out = reduce_universals(s, ABSTRACT)
        if universal_count(out) > 1 or CLASS_C not in classify(out):
            failures.append(f"{name}: not reduced")
            continue
        rep = equiv_on_tori(s, out, 3, 3)
        if not rep.ok:
            failures.append(f"{name}: {rep.verdict} {rep.witness}")
    settle(record_criterion, "4 universal reduction (challenge + 20, <=3x3)", 300, t0, failures)


def _brute_gadget(w, h):
    conv = window_flagged(quarter_plane_defaults([("A", "B")]))
    psi = clauses_to_formula(quarter_plane_clauses("S", "A", Term("x"), "B"))
    W = WindowConfig(A2, w, h, (0,) * (w * h))
    cells = list(W.coords())
    subsets = [frozenset(c for i, c in enumerate(cells) if m >> i & 1) for m in range(1 << len(cells))]
    out = set()
    for A in subsets:
        for S in subsets:
            for B in subsets:
                env = {"A": A, "S": S, "B": B}
                if all(evaluate(psi, W, conv, {**env, "x": c}) for c in cells):
                    out.add((A, S))
    return out


def test_criterion_05_gadget(record_criterion):
    t0 = time.perf_counter()
    failures = []
    for w, h in [(w, h) for w in range(1, 5) for h in range(1, 5)]:
        sols = quarter_plane_models(w, h)
        cells = {(x, y) for x in range(w) for y in range(h)}
        if any(len(S) > 1 for _, S in sols):
            failures.append(f"{w}x{h}: S with two cells")
        if {c for _, S in sols for c in S} != cells:
            failures.append(f"{w}x{h}: some cell is never the singleton")
        # literal enumeration of every (A, S, mirror) triple where that is small
        if w * h <= 4 and _brute_gadget(w, h) != set(sols):
            failures.append(f"{w}x{h}: SAT and brute-force solutions differ")
    settle(record_criterion, "5 one-element gadget (flagged windows <=4x4)", 60, t0, failures)


def test_criterion_06_counting_and_combinators(record_criterion):
    t0 = time.perf_counter()
    failures = []
    sizes = [(w, h) for w in range(1, 3) for h in range(1, 4)]
    formulas = {}
    for P, pname in ((LIME, "lime"), (DOMINO, "domino")):
        for k in range(3):
            for mode in (EQ, GEQ):
                s = counting_formula(P, k, mode, ABSTRACT)
                formulas[(pname, k, mode)] = s
                for w, h in sizes:
                    got = _members(s, w, h)
                    want = {C.cells for C in all_tori(A2, w, h)
                            if (count_occurrences(P, C, w * h + 1) == k if mode == EQ
                                else count_occurrences(P, C, w * h + 1) >= k)}
                    if got != want:
                        failures.append(f"{pname} {mode} k={k} at {w}x{h}")
    pairs = [(("lime", 1, EQ), ("domino", 0, GEQ)), (("lime", 2, GEQ), ("domino", 1, GEQ)),
             (("lime", 0, EQ), ("lime", 1, EQ))]
    for a, b in pairs:
        sa, sb = formulas[a], formulas[b]
        u, i = union_emso(sa, sb), intersect_emso(sa, sb)
        for w, h in sizes:
            ma, mb = _members(sa, w, h), _members(sb, w, h)
            if _members(u, w, h) != ma | mb or _members(i, w, h) != ma & mb:
                failures.append(f"combinators {a} {b} at {w}x{h}")
    settle(record_criterion, "6 counting twins and combinators (<=2x3)", 120, t0, failures)


def _members(s, w, h):
    ev = SatEvaluator(s, w, h)
    try:
        return {C.cells for C in all_tori(s.alphabet, w, h) if ev(C)}
    finally:
        ev.close()


def test_criterion_07_marked_suites(record_criterion):
    t0 = time.perf_counter()
    failures = []
    sizes = [(w, h) for w in range(1, 5) for h in range(1, 5)]
    for P in (LIME, DOMINO):
        for mode in (EQ, GEQ):
            for k in range(3):
                for w, h in sizes:
                    for fn in (check_soundness, check_completeness, check_determinism):
                        r = fn(P, k, mode, w, h)
                        if not r.ok:
                            failures.append(f"{r.name}: {r.failures[0]}")
    r = check_zone_rectangle(6, 6)
    if not r.ok:
        failures.append(f"{r.name}: {r.failures[0]}")
    pairs = [(counting_marked_sft(LIME, 1, EQ), counting_marked_sft(DOMINO, 0, GEQ)),
             (counting_marked_sft(LIME, 0, GEQ), counting_marked_sft(LIME, 2, GEQ)),
             (counting_marked_sft(DOMINO, 1, EQ), counting_marked_sft(LIME, 1, GEQ))]
    for a, b in pairs:
        pa = {W.cells for W in projected_acceptance(a, 3, 3)}
        pb = {W.cells for W in projected_acceptance(b, 3, 3)}
        if {W.cells for W in projected_acceptance(union_marked(a, b), 3, 3)} != pa | pb:
            failures.append("union acceptance differs on 3x3")
        if {W.cells for W in projected_acceptance(intersect_marked(a, b), 3, 3)} != pa & pb:
            failures.append("intersection acceptance differs on 3x3")
    settle(record_criterion, "7 doubly-marked suites (<=4x4, zone <=6x6, combinators 3x3)", 600, t0, failures)


def _literal_hanf(M, N, n, k, q):
    dom = square(n)
    for colors in itertools.product(range(q), repeat=len(dom)):
        P = Pattern(M.alphabet, tuple(zip(dom, colors)))
        cm = sum(all(M.at(x + o.dx, y + o.dy) == c for o, c in P.cells) for x, y in M.coords())
        cn = sum(all(N.at(x + o.dx, y + o.dy) == c for o, c in P.cells) for x, y in N.coords())
        for a, b in ((cm, cn), (cn, cm)):
            if a < k and a != b:
                return False
            if a > k and not b > k:
                return False
    return True


def test_criterion_08_hanf(record_criterion):
    t0 = time.perf_counter()
    failures = []
    tori = list(all_tori(A2, 2, 2))
    params = [(n, k) for n in (1, 2) for k in (1, 2)]
    rel = {}
    for n, k in params:
        R = np.array([[hanf_equiv(a, b, n, k) for b in tori] for a in tori])
        L = np.array([[_literal_hanf(a, b, n, k, 2) for b in tori] for a in tori])
        rel[(n, k)] = R
        if not (R == L).all():
            failures.append(f"(n,k)=({n},{k}) differs from the definition")
        if not R.diagonal().all() or not (R == R.T).all():
            failures.append(f"(n,k)=({n},{k}) not reflexive/symmetric")
        if ((R.astype(int) @ R.astype(int) > 0) & ~R).any():
            failures.append(f"(n,k)=({n},{k}) not transitive")
    for n, k in params:
        for n2, k2 in ((n + 1, k), (n, k + 1)):
            if (n2, k2) in rel and (rel[(n2, k2)] & ~rel[(n, k)]).any():
                failures.append(f"({n2},{k2}) does not refine ({n},{k})")
    settle(record_criterion, "8 Hanf equivalence (2x2 tori)", 30, t0, failures)


def test_criterion_09_oracle_independence(record_criterion):
    t0 = time.perf_counter()
    failures = []
    convs = [TORUS, WINDOW_ATOM_FALSE, window_flagged({"X": (True, False), "Y": (False, True)})]
    for seed in range(200):
        f, fo, so = gen_open_formula(seed)
        conv = convs[seed % 3]
        G = gen_torus(seed, A2, 2 + seed % 2, 2 + (seed // 3) % 2)
        C = G if conv is TORUS else WindowConfig(A2, G.width, G.height, G.cells)
        env = gen_assignment(seed, C, fo, so)
        if evaluate(f, C, conv, env) != naive_eval(f, C, conv, env):
            failures.append(f"seed {seed}")
    settle(record_criterion, "9 evaluator agreement (200 triples)", 30, t0, failures)


def _golden_cases():
    golden = ROOT / "docs" / "golden"
    for line in (golden / "cases.txt").read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            name, code, args = (p.strip() for p in line.split("|", 2))
            yield name, int(code), shlex.split(args)


def test_criterion_10_determinism(record_criterion):
    t0 = time.perf_counter()
    failures = []
    inputs = ROOT / "docs" / "golden" / "inputs"
    expected = ROOT / "docs" / "golden" / "expected"
    for name, code, args in _golden_cases():
        runs = [subprocess.run([sys.executable, "-m", "tesselogic.cli", *args], cwd=inputs,
                               capture_output=True, timeout=300) for _ in range(2)]
        if runs[0].returncode != code or (runs[0].stdout, runs[0].stderr) != (runs[1].stdout, runs[1].stderr):
            failures.append(f"{name} not reproducible")
        elif runs[0].stdout != (expected / f"{name}.out").read_bytes():
            failures.append(f"{name} differs from the stored transcript")
    settle(record_criterion, "10 CLI determinism (golden cases, two runs)", 600, t0, failures)
