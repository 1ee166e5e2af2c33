"""Command-line front end.

Exit codes: 0 success or PASS, 1 FAIL (counterexample on stdout), 2 usage
or input errors, 3 budget exceeded or inconclusive sweep.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import compile as comp
from . import marked as mk
from .errors import BudgetExceeded, TesseError
from .grid import WindowConfig, format_torus, read_document
from .harness import FAIL, INCONCLUSIVE, PASS, equiv_on_tori, sft_vs_formula
from .logic import ALL_TAGS, classify, parse, print_sentence, universal_count
from .render import render
from .semantics import (
    CONVENTIONS,
    DEFAULT_BUDGET,
    TORUS,
    WINDOW_ATOM_FALSE,
    evaluate,
    models,
    window_flagged,
)
from .transforms import ABSTRACT, CONCRETE, counting_formula, intersect_emso, reduce_universals, union_emso


class UsageError(Exception):
    pass


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return w, h


def _cell(text: str) -> tuple[int, int]:
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None
    return x, y


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None


def _emit(args, data: str | bytes) -> None:
    if isinstance(data, str):
        data = data.encode("utf-8")
    if args.output:
        Path(args.output).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def _conv(args, window: bool):
    name = args.conv
    if name is None:
        return WINDOW_ATOM_FALSE if window else TORUS
    if name == "window-flagged":
        defaults = {}
        for item in args.default or []:
            var, _, vals = item.partition("=")
            try:
                ne, sw = (bool(int(v)) for v in vals.split(","))
            except ValueError:
                raise UsageError(f"bad --default {item!r}; expected NAME=ne,sw with 0/1 values") from None
            defaults[var] = (ne, sw)
        return window_flagged(defaults)
    return CONVENTIONS[name]


def _mode(args) -> str:
    return CONCRETE if args.mode == "concrete" else ABSTRACT


def _is_marked(text: str) -> bool:
    return any(line.split("#", 1)[0].strip().startswith("base ") for line in text.splitlines())


def _is_sofic(text: str) -> bool:
    return any(line.split("#", 1)[0].strip().startswith("inner ") for line in text.splitlines())


def _configs(text: str):
    doc = read_document(text)
    items = list(doc.tori.items()) + list(doc.windows.items())
    if not items:
        raise UsageError("configuration file declares no torus or window")
    return doc, items


# ---------------------------------------------------------------------------
# commands


def cmd_parse(args) -> int:
    _emit(args, print_sentence(parse(_read(args.file))))
    return 0


def cmd_classify(args) -> int:
    s = parse(_read(args.file))
    tags = classify(s)
    out = "fragments " + " ".join(t for t in ALL_TAGS if t in tags) + "\n"
    if "ClassC" in tags:
        out += f"universals {universal_count(s)}\n"
    _emit(args, out)
    return 0


def cmd_eval(args) -> int:
    s = parse(_read(args.file))
    _, items = _configs(_read(args.config))
    lines = []
    for name, C in items:
        conv = _conv(args, isinstance(C, WindowConfig))
        v = evaluate(s, C, conv, budget=args.budget)
        lines.append(f"{name} {'true' if v else 'false'}")
    _emit(args, "\n".join(lines) + "\n")
    return 0


def cmd_models(args) -> int:
    s = parse(_read(args.file))
    w, h = args.size
    conv = _conv(args, args.conv not in (None, "torus"))
    found = models(s, w, h, conv, args.budget)
    lines = [f"alphabet {' '.join(s.alphabet.colors)}", f"# {len(found)} models of size {w}x{h}"]
    lines += [format_torus(C, f"M{i}") for i, C in enumerate(found, 1)]
    _emit(args, "\n".join(lines) + "\n")
    return 0


def cmd_compile_sft(args) -> int:
    _emit(args, comp.format_sft(comp.formula_to_sft(parse(_read(args.file)), args.budget)))
    return 0


def cmd_sft_to_formula(args) -> int:
    _emit(args, print_sentence(comp.sft_to_formula(comp.read_sft(_read(args.file)))))
    return 0


def cmd_compile_sofic(args) -> int:
    _emit(args, comp.format_sofic(comp.emso_to_sofic(parse(_read(args.file)), args.budget)))
    return 0


def cmd_sofic_to_formula(args) -> int:
    _emit(args, print_sentence(comp.sofic_to_formula(comp.read_sofic(_read(args.file)))))
    return 0


def cmd_reduce(args) -> int:
    notes: list[str] = []
    out = reduce_universals(parse(_read(args.file)), _mode(args), notes)
    for n in notes:
        print(f"note: {n}", file=sys.stderr)
    _emit(args, print_sentence(out))
    return 0


def _pattern(args):
    doc = read_document(_read(args.patterns))
    if not doc.patterns:
        raise UsageError("pattern file declares no pattern")
    name = args.pattern or next(iter(doc.patterns))
    if name not in doc.patterns:
        raise UsageError(f"no pattern named {name!r}")
    return doc, doc.patterns[name]


def cmd_counting_formula(args) -> int:
    _, P = _pattern(args)
    notes: list[str] = []
    s = counting_formula(P, args.k, args.count.upper(), _mode(args), notes=notes)
    for n in notes:
        print(f"note: {n}", file=sys.stderr)
    _emit(args, print_sentence(s))
    return 0


def cmd_counting_marked(args) -> int:
    doc, P = _pattern(args)
    if args.tree:
        m = mk.emso_to_marked(mk.parse_combination(args.tree, doc.patterns))
    else:
        m = mk.counting_marked_sft(P, args.k, args.count.upper())
    _emit(args, mk.format_marked(m))
    return 0


def _combine(args, marked_op, formula_op) -> int:
    ta, tb = _read(args.a), _read(args.b)
    if _is_marked(ta) != _is_marked(tb):
        raise UsageError("both inputs must be sentences or both marked objects")
    if _is_marked(ta):
        _emit(args, mk.format_marked(marked_op(mk.read_marked(ta), mk.read_marked(tb))))
    else:
        _emit(args, print_sentence(formula_op(parse(ta), parse(tb))))
    return 0


def cmd_union(args) -> int:
    return _combine(args, mk.union_marked, union_emso)


def cmd_intersect(args) -> int:
    return _combine(args, mk.intersect_marked, intersect_emso)


def cmd_equiv(args) -> int:
    s1 = parse(_read(args.a))
    w, h = args.max
    if args.via_sft:
        X = comp.read_sft(_read(args.via_sft))
        from .grid import sizes_upto

        rep = sft_vs_formula(X, s1, sizes_upto(w, h), args.budget)
    else:
        if not args.b:
            raise UsageError("equiv needs a second sentence or --via-sft")
        rep = equiv_on_tori(s1, parse(_read(args.b)), w, h, budget=args.budget)
    rep.seed = args.seed
    _emit(args, rep.to_text())
    return {PASS: 0, FAIL: 1, INCONCLUSIVE: 3}[rep.verdict]


def cmd_members(args) -> int:
    text = _read(args.file)
    w, h = args.size
    if _is_sofic(text):
        r = comp.read_sofic(text)
        found, alphabet = comp.torus_members_sofic(r, w, h, args.budget), r.target
    else:
        X = comp.read_sft(text)
        found, alphabet = comp.torus_members_sft(X, w, h, args.budget), X.alphabet
    lines = [f"alphabet {' '.join(alphabet.colors)}", f"# {len(found)} members of size {w}x{h}"]
    lines += [format_torus(C, f"M{i}") for i, C in enumerate(found, 1)]
    _emit(args, "\n".join(lines) + "\n")
    return 0


def cmd_admissible(args) -> int:
    X = comp.read_sft(_read(args.file))
    w, h = args.size
    pats = comp.locally_admissible(X, w, h, args.radius, args.budget)
    lines = [f"alphabet {' '.join(X.alphabet.colors)}", f"# {len(pats)} admissible {w}x{h} patterns (radius {args.radius})"]
    lines += [f"pattern A{i} {{ {P.describe()} }}" for i, P in enumerate(pats, 1)]
    _emit(args, "\n".join(lines) + "\n")
    return 0


def cmd_render(args) -> int:
    _, items = _configs(_read(args.file))
    if args.name:
        items = [(n, C) for n, C in items if n == args.name]
        if not items:
            raise UsageError(f"no configuration named {args.name!r}")
    name, C = items[0]
    target = C
    if args.markers:
        if len(args.markers) != 2:
            raise UsageError("--markers takes two cells")
        base = C if isinstance(C, WindowConfig) else WindowConfig(C.alphabet, C.width, C.height, C.cells)
        counters = {cell: i for i, cell in enumerate(args.counters or [], 1)}
        target = mk.canonical_paint(base, args.markers[0], args.markers[1], counters, len(counters))
    _emit(args, render(target, args.format, args.scale))
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-o", "--output", help="write output to FILE instead of stdout")
    common.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="enumeration budget (default %(default)s)")
    common.add_argument("--seed", type=int, default=0, help="seed recorded in reports (default %(default)s)")
    common.add_argument("--conv", choices=["torus", "window-false", "window-flagged"],
                        help="boundary convention (default: torus for tori, window-false for windows)")
    common.add_argument("--default", action="append", metavar="NAME=NE,SW",
                        help="flagged-window default for a set variable, e.g. S_1=0,0")
    common.add_argument("--mode", choices=["abstract", "concrete"], default="abstract",
                        help="one-element gadget for reductions and counting formulas")

    p = argparse.ArgumentParser(prog="tesselogic", description="Logic and tilings on finite grids.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.set_defaults(fn=fn)
        return sp

    add("parse", cmd_parse, "parse and pretty-print a sentence").add_argument("file")
    add("classify", cmd_classify, "list the fragments a sentence belongs to").add_argument("file")
    sp = add("eval", cmd_eval, "evaluate a sentence on each configuration of a file")
    sp.add_argument("file")
    sp.add_argument("config")
    sp = add("models", cmd_models, "enumerate models of one size")
    sp.add_argument("file")
    sp.add_argument("--size", type=_size, required=True)
    add("compile-sft", cmd_compile_sft, "universal sentence to forbidden patterns").add_argument("file")
    add("sft-to-formula", cmd_sft_to_formula, "forbidden patterns to a universal sentence").add_argument("file")
    add("compile-sofic", cmd_compile_sofic, "class C sentence with one universal to a sofic presentation").add_argument("file")
    add("sofic-to-formula", cmd_sofic_to_formula, "sofic presentation to an existential sentence").add_argument("file")
    add("reduce", cmd_reduce, "reduce a class C sentence to one universal quantifier").add_argument("file")
    for name, fn, help_ in (("counting-formula", cmd_counting_formula, "sentence for exactly/at least k occurrences"),
                            ("counting-marked", cmd_counting_marked, "doubly-marked gadget for exactly/at least k occurrences")):
        sp = add(name, fn, help_)
        sp.add_argument("patterns", help="file declaring patterns")
        sp.add_argument("--pattern", help="pattern name (default: first declared)")
        sp.add_argument("--k", type=int, default=1)
        sp.add_argument("--count", choices=["eq", "geq"], default="eq")
        if name == "counting-marked":
            sp.add_argument("--tree", help="combination such as 'union(eq(P,1),geq(Q,0))'")
    for name, fn in (("union", cmd_union), ("intersect", cmd_intersect)):
        sp = add(name, fn, f"{name} of two sentences or two marked objects")
        sp.add_argument("a")
        sp.add_argument("b")
    sp = add("equiv", cmd_equiv, "compare two sentences (or a sentence and an SFT) on all small tori")
    sp.add_argument("a")
    sp.add_argument("b", nargs="?")
    sp.add_argument("--via-sft", metavar="FILE")
    sp.add_argument("--max", type=_size, default=(3, 3))
    sp = add("members", cmd_members, "torus members of an SFT or sofic file")
    sp.add_argument("file")
    sp.add_argument("--size", type=_size, required=True)
    sp = add("admissible", cmd_admissible, "locally admissible patterns of an SFT")
    sp.add_argument("file")
    sp.add_argument("--size", type=_size, required=True)
    sp.add_argument("--radius", type=int, default=1)
    sp = add("render", cmd_render, "draw a configuration, optionally with a painted marker zone")
    sp.add_argument("file")
    sp.add_argument("--name")
    sp.add_argument("--format", choices=["text", "ppm"], default="text")
    sp.add_argument("--scale", type=int, default=8)
    sp.add_argument("--markers", type=_cell, nargs="+", metavar="X,Y")
    sp.add_argument("--counters", type=_cell, nargs="+", metavar="X,Y")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) and 2
    try:
        return args.fn(args)
    except BudgetExceeded as e:
        print(f"budget exceeded: {e}", file=sys.stderr)
        return 3
    except (TesseError, UsageError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
