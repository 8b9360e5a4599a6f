"""Embedded monochrome bitmap fonts for synthetic document rendering.

A glyph is a small boolean raster (ink = True).  The base face is a 5x7
matrix covering printable ASCII plus the accented characters used by the
built-in grammars; two derived faces (bold and double-width) give the
generator a small set of visually distinct fonts without any system font
discovery.  User fonts can be loaded from a plain-text format.
"""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np


class FontError(ValueError):
    pass


# Each glyph is 7 rows of 5 columns, encoded as ints with bit 4 = leftmost.
_GLYPHS: dict[str, tuple[int, ...]] = {
    " ": (0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00),
    "!": (0x04, 0x04, 0x04, 0x04, 0x04, 0x00, 0x04),
    '"': (0x0A, 0x0A, 0x0A, 0x00, 0x00, 0x00, 0x00),
    "#": (0x0A, 0x0A, 0x1F, 0x0A, 0x1F, 0x0A, 0x0A),
    "$": (0x04, 0x0F, 0x14, 0x0E, 0x05, 0x1E, 0x04),
    "%": (0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03),
    "&": (0x0C, 0x12, 0x14, 0x08, 0x15, 0x12, 0x0D),
    "'": (0x0C, 0x04, 0x08, 0x00, 0x00, 0x00, 0x00),
    "(": (0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02),
    ")": (0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08),
    "*": (0x00, 0x04, 0x15, 0x0E, 0x15, 0x04, 0x00),
    "+": (0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00),
    ",": (0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08),
    "-": (0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00),
    ".": (0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C),
    "/": (0x00, 0x01, 0x02, 0x04, 0x08, 0x10, 0x00),
    "0": (0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E),
    "1": (0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "2": (0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F),
    "3": (0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E),
    "4": (0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02),
    "5": (0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E),
    "6": (0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E),
    "7": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08),
    "8": (0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E),
    "9": (0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C),
    ":": (0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00),
    ";": (0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x04, 0x08),
    "<": (0x02, 0x04, 0x08, 0x10, 0x08, 0x04, 0x02),
    "=": (0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00),
    ">": (0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08),
    "?": (0x0E, 0x11, 0x01, 0x02, 0x04, 0x00, 0x04),
    "@": (0x0E, 0x11, 0x01, 0x0D, 0x15, 0x15, 0x0E),
    "A": (0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11),
    "B": (0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E),
    "C": (0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E),
    "D": (0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C),
    "E": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F),
    "F": (0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10),
    "G": (0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F),
    "H": (0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11),
    "I": (0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "J": (0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C),
    "K": (0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11),
    "L": (0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F),
    "M": (0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11),
    "N": (0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11),
    "O": (0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "P": (0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10),
    "Q": (0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D),
    "R": (0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11),
    "S": (0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E),
    "T": (0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04),
    "U": (0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "V": (0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04),
    "W": (0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A),
    "X": (0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11),
    "Y": (0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04),
    "Z": (0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F),
    "[": (0x0E, 0x08, 0x08, 0x08, 0x08, 0x08, 0x0E),
    "\\": (0x00, 0x10, 0x08, 0x04, 0x02, 0x01, 0x00),
    "]": (0x0E, 0x02, 0x02, 0x02, 0x02, 0x02, 0x0E),
    "^": (0x04, 0x0A, 0x11, 0x00, 0x00, 0x00, 0x00),
    "_": (0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F),
    "`": (0x08, 0x04, 0x02, 0x00, 0x00, 0x00, 0x00),
    "a": (0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F),
    "b": (0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1E),
    "c": (0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E),
    "d": (0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F),
    "e": (0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E),
    "f": (0x06, 0x09, 0x08, 0x1C, 0x08, 0x08, 0x08),
    "g": (0x00, 0x0F, 0x11, 0x11, 0x0F, 0x01, 0x0E),
    "h": (0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11),
    "i": (0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E),
    "j": (0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0C),
    "k": (0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12),
    "l": (0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E),
    "m": (0x00, 0x00, 0x1A, 0x15, 0x15, 0x11, 0x11),
    "n": (0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11),
    "o": (0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E),
    "p": (0x00, 0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10),
    "q": (0x00, 0x00, 0x0D, 0x13, 0x0F, 0x01, 0x01),
    "r": (0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10),
    "s": (0x00, 0x00, 0x0E, 0x10, 0x0E, 0x01, 0x1E),
    "t": (0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06),
    "u": (0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D),
    "v": (0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04),
    "w": (0x00, 0x00, 0x11, 0x11, 0x15, 0x15, 0x0A),
    "x": (0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11),
    "y": (0x00, 0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E),
    "z": (0x00, 0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F),
    "{": (0x02, 0x04, 0x04, 0x08, 0x04, 0x04, 0x02),
    "|": (0x04, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04),
    "}": (0x08, 0x04, 0x04, 0x02, 0x04, 0x04, 0x08),
    "~": (0x00, 0x08, 0x15, 0x02, 0x00, 0x00, 0x00),
    # French accents
    "à": (0x08, 0x04, 0x0E, 0x01, 0x0F, 0x11, 0x0F),
    "â": (0x04, 0x0A, 0x0E, 0x01, 0x0F, 0x11, 0x0F),
    "ç": (0x00, 0x0E, 0x10, 0x11, 0x0E, 0x04, 0x0C),
    "è": (0x08, 0x04, 0x0E, 0x11, 0x1F, 0x10, 0x0E),
    "é": (0x02, 0x04, 0x0E, 0x11, 0x1F, 0x10, 0x0E),
    "ê": (0x04, 0x0A, 0x0E, 0x11, 0x1F, 0x10, 0x0E),
    "ë": (0x0A, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E),
    "î": (0x04, 0x0A, 0x00, 0x0C, 0x04, 0x04, 0x0E),
    "ï": (0x0A, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E),
    "ô": (0x04, 0x0A, 0x0E, 0x11, 0x11, 0x11, 0x0E),
    "ù": (0x08, 0x04, 0x11, 0x11, 0x11, 0x13, 0x0D),
    "û": (0x04, 0x0A, 0x11, 0x11, 0x11, 0x13, 0x0D),
    # German accents (ü shared with French corpora conventions)
    "ü": (0x0A, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D),
    "ä": (0x0A, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F),
    "ö": (0x0A, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E),
    "ß": (0x0E, 0x11, 0x16, 0x11, 0x11, 0x16, 0x10),
    "Ä": (0x0A, 0x00, 0x0E, 0x11, 0x1F, 0x11, 0x11),
    "Ö": (0x0A, 0x0E, 0x11, 0x11, 0x11, 0x11, 0x0E),
    "Ü": (0x0A, 0x00, 0x11, 0x11, 0x11, 0x11, 0x0E),
}

GLYPH_HEIGHT = 7
GLYPH_WIDTH = 5


def _rows_to_bitmap(rows: tuple[int, ...], width: int = GLYPH_WIDTH) -> np.ndarray:
    out = np.zeros((len(rows), width), dtype=bool)
    for r, bits in enumerate(rows):
        for c in range(width):
            out[r, width - 1 - c] = bool(bits >> c & 1)
    return out


class GlyphSet:
    """One font face: a fixed-height boolean bitmap per supported codepoint."""

    def __init__(self, font_id: str, height: int, glyphs: Mapping[str, np.ndarray]):
        if not font_id:
            raise FontError("font id must be non-empty")
        if height < 1:
            raise FontError("glyph height must be positive")
        self.font_id = font_id
        self.height = height
        self._glyphs: dict[str, np.ndarray] = {}
        for ch, bitmap in glyphs.items():
            arr = np.asarray(bitmap, dtype=bool)
            if len(ch) != 1:
                raise FontError(f"glyph key {ch!r} is not a single codepoint")
            if arr.ndim != 2 or arr.shape[0] != height:
                raise FontError(
                    f"glyph {ch!r} has shape {arr.shape}, expected height {height}")
            self._glyphs[ch] = arr
        if not self._glyphs:
            raise FontError("font defines no glyphs")

    @property
    def supported(self) -> frozenset[str]:
        return frozenset(self._glyphs)

    def supports(self, text: Iterable[str]) -> bool:
        return all(ch in self._glyphs for ch in text)

    def missing(self, text: Iterable[str]) -> list[str]:
        return sorted({ch for ch in text if ch not in self._glyphs})

    def glyph(self, ch: str) -> np.ndarray:
        try:
            return self._glyphs[ch]
        except KeyError:
            raise FontError(f"font {self.font_id!r} has no glyph for {ch!r}")

    def advance(self, ch: str) -> int:
        """Horizontal advance in base pixels: glyph width plus one tracking
        column."""
        return self.glyph(ch).shape[1] + 1

    def measure(self, text: str) -> int:
        return sum(self.advance(ch) for ch in text)

    def __repr__(self) -> str:
        return f"GlyphSet({self.font_id!r}, {len(self._glyphs)} glyphs)"


def _base_glyphs() -> dict[str, np.ndarray]:
    return {ch: _rows_to_bitmap(rows) for ch, rows in _GLYPHS.items()}


def _embolden(bitmap: np.ndarray) -> np.ndarray:
    out = bitmap.copy()
    out[:, 1:] |= bitmap[:, :-1]
    return out


def builtin_fonts() -> tuple[GlyphSet, ...]:
    """The embedded faces: plain, bold (1px horizontal dilation) and wide
    (column-doubled)."""
    base = _base_glyphs()
    plain = GlyphSet("plain-5x7", GLYPH_HEIGHT, base)
    bold = GlyphSet("bold-5x7", GLYPH_HEIGHT,
                    {ch: _embolden(bm) for ch, bm in base.items()})
    wide = GlyphSet("wide-5x7", GLYPH_HEIGHT,
                    {ch: np.repeat(bm, 2, axis=1) for ch, bm in base.items()})
    return plain, bold, wide


def default_font() -> GlyphSet:
    return builtin_fonts()[0]


# -- font files --------------------------------------------------------------


def parse_font(text: str, font_id: str = "user") -> GlyphSet:
    """Plain-text font format::

        height 7
        glyph U+0041
        .###.
        #...#
        ...(height rows of '.' and '#')

    A glyph header may also name the codepoint literally (``glyph A``).
    """
    lines = [ln.rstrip("\n") for ln in text.splitlines()]
    height = None
    glyphs: dict[str, np.ndarray] = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        i += 1
        if not line or line.startswith("#!"):
            continue
        if line.startswith("font "):
            font_id = line.split(None, 1)[1]
        elif line.startswith("height "):
            height = int(line.split()[1])
        elif line.startswith("glyph "):
            if height is None:
                raise FontError("height must be declared before glyphs")
            spec = line.split(None, 1)[1]
            if spec.upper().startswith("U+"):
                ch = chr(int(spec[2:], 16))
            elif len(spec) == 1:
                ch = spec
            else:
                raise FontError(f"bad glyph name {spec!r}")
            rows = lines[i:i + height]
            i += height
            if len(rows) < height:
                raise FontError(f"glyph {ch!r} truncated")
            widths = {len(r) for r in rows}
            if len(widths) != 1:
                raise FontError(f"glyph {ch!r} rows differ in width")
            bad = set("".join(rows)) - {".", "#"}
            if bad:
                raise FontError(f"glyph {ch!r} uses characters {sorted(bad)}")
            glyphs[ch] = np.array([[c == "#" for c in row] for row in rows])
        else:
            raise FontError(f"unrecognized font line: {line!r}")
    if height is None:
        raise FontError("font file declares no height")
    return GlyphSet(font_id, height, glyphs)


def load_font(path) -> GlyphSet:
    from pathlib import Path
    p = Path(path)
    return parse_font(p.read_text(encoding="utf-8"), font_id=p.stem)
