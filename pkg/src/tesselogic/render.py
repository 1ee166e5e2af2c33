"""Text and binary PPM renderings of configurations and layered windows."""

from __future__ import annotations

from .grid import _Grid
from .marked import LayeredWindow, zone_from_flags

TEXT, PPM = "text", "ppm"

# color i of an alphabet uses PALETTE[i % len(PALETTE)]
PALETTE = (
    (255, 255, 255),
    (50, 205, 50),
    (30, 90, 220),
    (220, 40, 40),
    (240, 190, 20),
    (0, 200, 200),
    (160, 60, 200),
    (120, 120, 120),
)
ZONE_SHADE = (64, 64, 64)
MARKER_INK = ((0, 0, 0), (255, 128, 0))
COUNTER_INK = (255, 0, 255)


def render_text(C: _Grid | LayeredWindow) -> str:
    """Rows top first, one letter per cell.

    Layered windows get a second block after a blank line: 0 and 1 for the
    markers, c for counters, # for zone cells and . elsewhere.
    """
    base = C.base if isinstance(C, LayeredWindow) else C
    letters = base.alphabet.letters()
    rows = []
    for y in reversed(range(base.height)):
        rows.append("".join(letters[base.cells[y * base.width + x]] for x in range(base.width)))
    out = "\n".join(rows) + "\n"
    if isinstance(C, LayeredWindow):
        out += "\n" + "\n".join(_overlay_rows(C)) + "\n"
    return out


def _zone(L: LayeredWindow) -> set[tuple[int, int]]:
    return zone_from_flags(L) if "Q0_n" in L.layers and "Q1_n" in L.layers else set()


def _overlay(L: LayeredWindow) -> dict[tuple[int, int], str]:
    marks = {}
    for cell in _zone(L):
        marks[cell] = "#"
    for layer in L.layers:
        if layer.startswith("C") and layer[1:].isdigit():
            for cell in L.cells_with(layer):
                marks[cell] = "c"
    for i, layer in enumerate(("Q0", "Q1")):
        if layer in L.layers:
            for cell in L.cells_with(layer):
                marks[cell] = str(i)
    return marks


def _overlay_rows(L: LayeredWindow) -> list[str]:
    marks = _overlay(L)
    return ["".join(marks.get((x, y), ".") for x in range(L.width)) for y in reversed(range(L.height))]


def render_ppm(C: _Grid | LayeredWindow, scale: int = 8) -> bytes:
    """Binary P6 image, scale x scale pixels per cell, north at the top."""
    if scale < 1:
        raise ValueError("scale must be positive")
    base = C.base if isinstance(C, LayeredWindow) else C
    marks = _overlay(C) if isinstance(C, LayeredWindow) else {}
    zone = _zone(C) if isinstance(C, LayeredWindow) else set()
    w, h = base.width, base.height
    header = f"P6\n{w * scale} {h * scale}\n255\n".encode("ascii")
    body = bytearray()
    for y in reversed(range(h)):
        row = bytearray()
        for x in range(w):
            rgb = PALETTE[base.cells[y * w + x] % len(PALETTE)]
            if (x, y) in zone:
                rgb = tuple((a + b) // 2 for a, b in zip(rgb, ZONE_SHADE))
            row += bytes(rgb) * scale
        glyph_rows = []
        for x in range(w):
            m = marks.get((x, y))
            ink = MARKER_INK[int(m)] if m in ("0", "1") else (COUNTER_INK if m == "c" else None)
            glyph_rows.append(ink)
        for py in range(scale):
            line = bytearray(row)
            inner = scale // 4 <= py < scale - scale // 4
            if inner:
                for x, ink in enumerate(glyph_rows):
                    if ink is None:
                        continue
                    for px in range(scale // 4, scale - scale // 4):
                        i = (x * scale + px) * 3
                        line[i:i + 3] = bytes(ink)
            body += line
    return header + bytes(body)


def zone_pixels(image: bytes, width: int, height: int, scale: int) -> set[tuple[int, int]]:
    """Cells whose corner pixel carries the zone shading, read back from a rendered PPM.

    Needs scale >= 4 so that marker glyphs leave the corner pixel uncovered.
    """
    header_len = len(f"P6\n{width * scale} {height * scale}\n255\n")
    data = image[header_len:]
    shaded = {tuple((a + b) // 2 for a, b in zip(c, ZONE_SHADE)) for c in PALETTE}
    out = set()
    for y in range(height):
        py = (height - 1 - y) * scale
        for x in range(width):
            i = (py * width * scale + x * scale) * 3
            if tuple(data[i:i + 3]) in shaded:
                out.add((x, y))
    return out


def render(C: _Grid | LayeredWindow, fmt: str = TEXT, scale: int = 8) -> bytes:
    fmt = fmt.lower()
    if fmt == TEXT:
        return render_text(C).encode("utf-8")
    if fmt == PPM:
        return render_ppm(C, scale)
    raise ValueError(f"unknown render format {fmt!r}")
