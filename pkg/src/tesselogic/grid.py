"""Configurations, patterns, occurrences, projections and Hanf signatures.

Tori stand in for periodic configurations of the plane; windows are bounded
rectangles without wraparound. Cells are stored row-major with the bottom
row first, so cell (x, y) lives at index ``y * width + x``.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple

from .errors import AlphabetMismatch, ParseError


class Offset(NamedTuple):
    dx: int
    dy: int

    def __add__(self, other):  # type: ignore[override]
        return Offset(self.dx + other[0], self.dy + other[1])

    def __sub__(self, other):
        return Offset(self.dx - other[0], self.dy - other[1])

    def __neg__(self):
        return Offset(-self.dx, -self.dy)


ORIGIN = Offset(0, 0)
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class Alphabet:
    colors: tuple[str, ...]

    def __post_init__(self):
        colors = tuple(self.colors)
        object.__setattr__(self, "colors", colors)
        if not colors:
            raise ValueError("alphabet must be nonempty")
        if len(set(colors)) != len(colors):
            raise ValueError(f"duplicate color names in {colors}")
        for c in colors:
            if not _NAME.match(c):
                raise ValueError(f"bad color name {c!r}")

    def __len__(self) -> int:
        return len(self.colors)

    def __iter__(self) -> Iterator[str]:
        return iter(self.colors)

    def __contains__(self, name: object) -> bool:
        return name in self.colors

    def index(self, name: str) -> int:
        try:
            return self.colors.index(name)
        except ValueError:
            raise KeyError(f"color {name!r} not in alphabet {self.colors}") from None

    def lookup(self, token: str) -> int:
        """Resolve a color token: a full name, or a unique initial letter."""
        if token in self.colors:
            return self.colors.index(token)
        hits = [i for i, c in enumerate(self.colors) if c[0].upper() == token.upper()]
        if len(token) == 1 and len(hits) == 1:
            return hits[0]
        raise KeyError(f"unknown color {token!r} for alphabet {self.colors}")

    def letters(self) -> tuple[str, ...]:
        """One display character per color: unique uppercase initials, else A, B, C..."""
        initials = tuple(c[0].upper() for c in self.colors)
        if len(set(initials)) == len(initials):
            return initials
        return tuple(_index_letter(i) for i in range(len(self.colors)))


def _index_letter(i: int) -> str:
    pool = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789"
    return pool[i] if i < len(pool) else "?"


@dataclass(frozen=True)
class Pattern:
    """Finite partial coloring: offsets to color ids, sorted row-major."""

    alphabet: Alphabet
    cells: tuple[tuple[Offset, int], ...]

    def __post_init__(self):
        items = {}
        for off, c in self.cells:
            off = Offset(*off)
            if off in items:
                raise ValueError(f"offset {tuple(off)} colored twice")
            if not 0 <= c < len(self.alphabet):
                raise ValueError(f"color id {c} outside alphabet")
            items[off] = c
        if not items:
            raise ValueError("pattern domain must be nonempty")
        ordered = tuple(sorted(items.items(), key=lambda kv: (kv[0].dy, kv[0].dx)))
        object.__setattr__(self, "cells", ordered)

    @classmethod
    def of(cls, alphabet: Alphabet, mapping: Mapping[tuple[int, int], str | int]) -> "Pattern":
        cells = []
        for off, c in mapping.items():
            cid = c if isinstance(c, int) else alphabet.lookup(c)
            cells.append((Offset(*off), cid))
        return cls(alphabet, tuple(cells))

    @property
    def domain(self) -> tuple[Offset, ...]:
        return tuple(off for off, _ in self.cells)

    def as_dict(self) -> dict[Offset, int]:
        return dict(self.cells)

    def shifted(self, v: tuple[int, int]) -> "Pattern":
        return Pattern(self.alphabet, tuple((off + v, c) for off, c in self.cells))

    def bbox(self) -> tuple[int, int, int, int]:
        xs = [o.dx for o in self.domain]
        ys = [o.dy for o in self.domain]
        return min(xs), min(ys), max(xs), max(ys)

    def key(self) -> tuple:
        return (len(self.cells), tuple((o.dy, o.dx, c) for o, c in self.cells))

    def describe(self) -> str:
        names = self.alphabet.colors
        return " ".join(f"({o.dx},{o.dy})={names[c]}" for o, c in self.cells)


@dataclass(frozen=True)
class _Grid:
    alphabet: Alphabet
    width: int
    height: int
    cells: tuple[int, ...]

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        object.__setattr__(self, "cells", cells)
        if self.width < 1 or self.height < 1:
            raise ValueError("dimensions must be positive")
        if len(cells) != self.width * self.height:
            raise ValueError(f"expected {self.width * self.height} cells, got {len(cells)}")
        q = len(self.alphabet)
        if any(not 0 <= c < q for c in cells):
            raise ValueError("cell color outside alphabet")

    @classmethod
    def from_rows(cls, alphabet: Alphabet, rows: Iterable[str | Iterable[str]]):
        """Build from rows listed bottom row first; each row a string of letters or names."""
        rows = [list(r) if isinstance(r, str) else list(r) for r in rows]
        h, w = len(rows), len(rows[0])
        if any(len(r) != w for r in rows):
            raise ValueError("ragged rows")
        cells = [alphabet.lookup(tok) for r in rows for tok in r]
        return cls(alphabet, w, h, tuple(cells))

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)

    def coords(self) -> Iterator[tuple[int, int]]:
        for y in range(self.height):
            for x in range(self.width):
                yield (x, y)

    def names(self) -> list[str]:
        return [self.alphabet.colors[c] for c in self.cells]


@dataclass(frozen=True)
class TorusConfig(_Grid):
    """Periodic configuration with period (width, height)."""

    def at(self, x: int, y: int) -> int:
        return self.cells[(y % self.height) * self.width + (x % self.width)]


@dataclass(frozen=True)
class WindowConfig(_Grid):
    """Bounded rectangular coloring; cells outside are absent."""

    def at(self, x: int, y: int) -> int | None:
        if 0 <= x < self.width and 0 <= y < self.height:
            return self.cells[y * self.width + x]
        return None


@dataclass(frozen=True)
class Projection:
    source: Alphabet
    target: Alphabet
    mapping: tuple[int, ...]

    def __post_init__(self):
        mapping = tuple(self.mapping)
        object.__setattr__(self, "mapping", mapping)
        if len(mapping) != len(self.source):
            raise ValueError("projection must be total on the source alphabet")
        if any(not 0 <= t < len(self.target) for t in mapping):
            raise ValueError("projection image outside target alphabet")

    @classmethod
    def of(cls, source: Alphabet, target: Alphabet, mapping: Mapping[str, str]) -> "Projection":
        return cls(source, target, tuple(target.lookup(mapping[c]) for c in source.colors))

    @classmethod
    def identity(cls, alphabet: Alphabet) -> "Projection":
        return cls(alphabet, alphabet, tuple(range(len(alphabet))))

    def is_identity(self) -> bool:
        return self.source == self.target and self.mapping == tuple(range(len(self.source)))

    def preimage(self, t: int) -> tuple[int, ...]:
        return tuple(i for i, m in enumerate(self.mapping) if m == t)

    def compose(self, outer: "Projection") -> "Projection":
        """outer after self."""
        if outer.source != self.target:
            raise AlphabetMismatch("projection composition alphabets differ")
        return Projection(self.source, outer.target, tuple(outer.mapping[m] for m in self.mapping))


@dataclass(frozen=True)
class HanfSignature:
    n: int
    k: int
    counts: tuple[tuple[Pattern, int], ...] = field(default=())

    def as_dict(self) -> dict[Pattern, int]:
        return dict(self.counts)


def _check_alphabet(a: Alphabet, b: Alphabet, what: str) -> None:
    if a != b:
        raise AlphabetMismatch(f"{what}: alphabets {a.colors} and {b.colors} differ")


def occurs_at(P: Pattern, C: TorusConfig, z0: tuple[int, int]) -> bool:
    _check_alphabet(P.alphabet, C.alphabet, "occurs_at")
    x0, y0 = z0
    return all(C.at(x0 + o.dx, y0 + o.dy) == c for o, c in P.cells)


def count_occurrences(P: Pattern, C: TorusConfig, cap: int) -> int:
    if cap < 0:
        raise ValueError("cap must be nonnegative")
    _check_alphabet(P.alphabet, C.alphabet, "count_occurrences")
    n = 0
    for z0 in C.coords():
        if n >= cap:
            break
        if occurs_at(P, C, z0):
            n += 1
    return min(n, cap)


def pattern_at(C: TorusConfig, domain: Iterable[tuple[int, int]], z0: tuple[int, int]) -> Pattern:
    x0, y0 = z0
    return Pattern(C.alphabet, tuple((Offset(*d), C.at(x0 + d[0], y0 + d[1])) for d in domain))


def language(C: TorusConfig, domain: Iterable[tuple[int, int]]) -> set[Pattern]:
    domain = [Offset(*d) for d in domain]
    if not domain:
        raise ValueError("domain must be nonempty")
    return {pattern_at(C, domain, z0) for z0 in C.coords()}


def project(pi: Projection, C: _Grid):
    _check_alphabet(pi.source, C.alphabet, "project")
    return type(C)(pi.target, C.width, C.height, tuple(pi.mapping[c] for c in C.cells))


def translate(C: TorusConfig, v: tuple[int, int]) -> TorusConfig:
    """The torus C' with C'(z) = C(z - v)."""
    cells = tuple(C.at(x - v[0], y - v[1]) for y in range(C.height) for x in range(C.width))
    return TorusConfig(C.alphabet, C.width, C.height, cells)


def square(n: int) -> tuple[Offset, ...]:
    return tuple(Offset(x, y) for y in range(n) for x in range(n))


def hanf_signature(C: TorusConfig, n: int, k: int) -> HanfSignature:
    if n < 1 or k < 0:
        raise ValueError("need n >= 1 and k >= 0")
    dom = square(n)
    counts: dict[Pattern, int] = {}
    for z0 in C.coords():
        p = pattern_at(C, dom, z0)
        counts[p] = counts.get(p, 0) + 1
    items = sorted(((p, min(c, k + 1)) for p, c in counts.items()), key=lambda pc: pc[0].key())
    return HanfSignature(n, k, tuple(items))


def hanf_equiv(M: TorusConfig, N: TorusConfig, n: int, k: int) -> bool:
    _check_alphabet(M.alphabet, N.alphabet, "hanf_equiv")
    return hanf_signature(M, n, k) == hanf_signature(N, n, k)


def all_tori(alphabet: Alphabet, w: int, h: int) -> Iterator[TorusConfig]:
    """Every w x h torus, lexicographic in the row-major cell tuple."""
    for cells in itertools.product(range(len(alphabet)), repeat=w * h):
        yield TorusConfig(alphabet, w, h, cells)


def all_windows(alphabet: Alphabet, w: int, h: int) -> Iterator[WindowConfig]:
    for cells in itertools.product(range(len(alphabet)), repeat=w * h):
        yield WindowConfig(alphabet, w, h, cells)


def sizes_upto(max_w: int, max_h: int, min_w: int = 1, min_h: int = 1) -> list[tuple[int, int]]:
    """Sizes in sweep order: smallest area first, then by height, then width."""
    sizes = [(w, h) for w in range(min_w, max_w + 1) for h in range(min_h, max_h + 1)]
    return sorted(sizes, key=lambda s: (s[0] * s[1], s[1], s[0]))


# ---------------------------------------------------------------------------
# text format

_TOKEN = re.compile(r"\(\s*-?\d+\s*,\s*-?\d+\s*\)\s*=\s*[A-Za-z0-9_]+|->|[{}]|[^\s{}]+")
_CELL = re.compile(r"\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)\s*=\s*([A-Za-z0-9_]+)")


@dataclass
class Document:
    """Objects read from a text file in the shared grid format."""

    alphabet: Alphabet | None = None
    inner: Alphabet | None = None
    patterns: dict[str, Pattern] = field(default_factory=dict)
    tori: dict[str, TorusConfig] = field(default_factory=dict)
    windows: dict[str, WindowConfig] = field(default_factory=dict)
    forbid: list[dict[Offset, str]] = field(default_factory=list)
    project: dict[str, str] = field(default_factory=dict)
    extra: list[tuple[int, list[str]]] = field(default_factory=list)


def tokenize(text: str) -> list[tuple[str, int, int]]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0]
        for m in _TOKEN.finditer(line):
            out.append((m.group(0), lineno, m.start() + 1))
    return out


def read_document(text: str, extra_keywords: Iterable[str] = ()) -> Document:
    """Parse alphabet/inner/pattern/torus/window/forbid/project declarations.

    Lines starting with a keyword in ``extra_keywords`` are collected raw into
    ``Document.extra`` for callers with richer formats.
    """
    extra_keywords = set(extra_keywords)
    doc = Document()
    toks = tokenize(text)
    i = 0

    def need(cond, msg, t):
        if not cond:
            raise ParseError(msg, t[1], t[2])

    def read_block(start):
        j = start
        need(j < len(toks) and toks[j][0] == "{", "expected '{'", toks[min(j, len(toks) - 1)])
        j += 1
        body = []
        while j < len(toks) and toks[j][0] != "}":
            body.append(toks[j])
            j += 1
        need(j < len(toks), "unterminated block", toks[start])
        return body, j + 1

    def read_cells(body, alphabet, t):
        need(alphabet is not None, "alphabet must be declared first", t)
        cells = {}
        for tok in body:
            m = _CELL.fullmatch(tok[0])
            need(m is not None, f"bad pattern cell {tok[0]!r}", tok)
            off = Offset(int(m.group(1)), int(m.group(2)))
            need(off not in cells, f"offset {tuple(off)} repeated", tok)
            cells[off] = m.group(3)
        need(bool(cells), "empty pattern", t)
        return cells

    def color(alphabet, tok):
        try:
            return alphabet.lookup(tok[0])
        except KeyError as e:
            raise ParseError(str(e.args[0]), tok[1], tok[2]) from None

    while i < len(toks):
        t = toks[i]
        kw = t[0]
        line_toks = [x for x in toks[i:] if x[1] == t[1]]
        if kw in ("alphabet", "inner"):
            names = [x[0] for x in line_toks[1:]]
            need(bool(names), f"empty {kw}", t)
            try:
                alpha = Alphabet(tuple(names))
            except ValueError as e:
                raise ParseError(str(e), t[1], t[2]) from None
            if kw == "alphabet":
                doc.alphabet = alpha
            else:
                doc.inner = alpha
            i += len(line_toks)
        elif kw == "pattern":
            need(i + 1 < len(toks), "pattern needs a name", t)
            name = toks[i + 1][0]
            body, i = read_block(i + 2)
            cells = read_cells(body, doc.alphabet, t)
            doc.patterns[name] = Pattern(
                doc.alphabet, tuple((o, color(doc.alphabet, (c, t[1], t[2]))) for o, c in cells.items())
            )
        elif kw in ("torus", "window"):
            need(doc.alphabet is not None, "alphabet must be declared first", t)
            need(i + 3 < len(toks), f"{kw} needs NAME W H", t)
            name = toks[i + 1][0]
            try:
                w, h = int(toks[i + 2][0]), int(toks[i + 3][0])
            except ValueError:
                raise ParseError(f"{kw} dimensions must be integers", t[1], t[2]) from None
            body, i = read_block(i + 4)
            need(len(body) == w * h, f"{kw} {name} needs {w * h} cells, got {len(body)}", t)
            cells = tuple(color(doc.alphabet, tok) for tok in body)
            cls = TorusConfig if kw == "torus" else WindowConfig
            getattr(doc, "tori" if kw == "torus" else "windows")[name] = cls(doc.alphabet, w, h, cells)
        elif kw == "forbid":
            body, i = read_block(i + 1)
            alpha = doc.inner or doc.alphabet
            cells = read_cells(body, alpha, t)
            for c in cells.values():
                color(alpha, (c, t[1], t[2]))
            doc.forbid.append(cells)
        elif kw == "project":
            for x in line_toks[1:]:
                if x[0] == "->":
                    continue
                parts = x[0].split("->")
                need(len(parts) == 2 and all(parts), f"bad projection entry {x[0]!r}", x)
                doc.project[parts[0]] = parts[1]
            i += len(line_toks)
        elif kw in extra_keywords:
            doc.extra.append((t[1], [x[0] for x in line_toks]))
            i += len(line_toks)
        else:
            raise ParseError(f"unexpected token {kw!r}", t[1], t[2])
    return doc


def format_torus(C: _Grid, name: str = "T") -> str:
    kind = "torus" if isinstance(C, TorusConfig) else "window"
    body = " ".join(C.names())
    return f"{kind} {name} {C.width} {C.height} {{ {body} }}"


def format_pattern(P: Pattern, name: str = "P") -> str:
    return f"pattern {name} {{ {P.describe()} }}"
