"""Synthetic printed-document generation.

Documents are assembled entity by entity: a stylesheet policy picks the next
layout class, a few text lines are drawn from a line dataset, rendered with a
randomly chosen bitmap font and random indents, stacked into an entity image,
and placed into a margin or main column of the page.  The ground truth is the
concatenation of the placed entities' tagged transcriptions, with required
ancestor classes opened and closed automatically so the result is always
grammar-valid.  Finally the page is cropped just below the lowest entity,
rounded up to the recognition encoder's vertical stride.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .fonts import GlyphSet
from .grammar import LayoutGrammar
from .markup import validate
from .tokens import Token, TokenSequence, begin, char, end

BACKGROUND = 255
INK = 0


class EmptyText(ValueError):
    pass


class UnsupportedCodepoint(ValueError):
    pass


class PlacementInfeasible(RuntimeError):
    pass


class ExhaustedLines(RuntimeError):
    pass


class StyleError(ValueError):
    pass


# -- line rendering ----------------------------------------------------------


def render_line(text: str, font: GlyphSet, size: int) -> np.ndarray:
    """One text line as a uint8 raster (background 255, ink 0).

    ``size`` is the requested pixel height; glyphs are integer-scaled, so the
    result height is the largest multiple of the font height not exceeding
    ``size`` (at least one).  Widths are additive: every glyph advances by
    its own width plus one tracking column, scaled.
    """
    if text == "":
        raise EmptyText("cannot render an empty line")
    missing = font.missing(text)
    if missing:
        raise UnsupportedCodepoint(
            f"font {font.font_id!r} lacks glyphs for {missing}")
    scale = max(1, size // font.height)
    width = font.measure(text) * scale
    img = np.full((font.height * scale, width), BACKGROUND, dtype=np.uint8)
    x = 0
    for ch in text:
        bitmap = font.glyph(ch)
        w = bitmap.shape[1]
        scaled = np.repeat(np.repeat(bitmap, scale, axis=0), scale, axis=1)
        img[:, x:x + w * scale][scaled] = INK
        x += (w + 1) * scale
    return img


# -- stylesheets ----------------------------------------------------------------


@dataclass(frozen=True)
class EntitySpec:
    """Placement and sampling constraints for one layout class."""

    class_id: str
    column: str = "main"          # anchor region: "main" or "margin"
    min_count: int = 0            # mandatory instances per document
    max_count: int = 10 ** 9
    weight: float = 1.0
    min_lines: int = 1
    max_lines: int = 3
    max_chars: int = 40           # per-line character cap
    scale: int = 2                # glyph pixel scale
    indent_max: int = 8           # random per-line indent, pixels
    line_gap_max: int = 4         # random inter-line spacing, pixels

    def __post_init__(self):
        if self.column not in ("main", "margin"):
            raise StyleError(f"unknown column {self.column!r}")
        if not 0 <= self.min_count <= self.max_count:
            raise StyleError("need 0 <= min_count <= max_count")
        if not 1 <= self.min_lines <= self.max_lines:
            raise StyleError("need 1 <= min_lines <= max_lines")
        if self.max_chars < 1 or self.scale < 1:
            raise StyleError("max_chars and scale must be positive")
        if self.weight <= 0:
            raise StyleError("weight must be positive")
        if self.indent_max < 0 or self.line_gap_max < 0:
            raise StyleError("spacing ranges must be non-negative")


@dataclass(frozen=True)
class StyleSheet:
    """Document layout description: entity specs plus page geometry."""

    name: str
    entities: tuple[EntitySpec, ...]
    margin_frac: float = 0.0      # width fraction reserved for the margin column
    page_margin: int = 8
    entity_gap: tuple[int, int] = (4, 12)

    def __post_init__(self):
        object.__setattr__(self, "entities", tuple(self.entities))
        if not self.entities:
            raise StyleError("stylesheet defines no entities")
        if len({e.class_id for e in self.entities}) != len(self.entities):
            raise StyleError("duplicate entity class in stylesheet")
        if not 0.0 <= self.margin_frac < 0.9:
            raise StyleError("margin fraction must be in [0, 0.9)")
        if self.page_margin < 0:
            raise StyleError("page margin must be non-negative")
        lo, hi = self.entity_gap
        if not 0 <= lo <= hi:
            raise StyleError("entity gap range must satisfy 0 <= lo <= hi")
        uses_margin = any(e.column == "margin" for e in self.entities)
        if uses_margin and self.margin_frac == 0.0:
            raise StyleError("margin entities need margin_frac > 0")

    def validate_against(self, grammar: LayoutGrammar) -> None:
        for e in self.entities:
            if e.class_id not in grammar:
                raise StyleError(
                    f"stylesheet class {e.class_id!r} not in grammar {grammar.name!r}")

    def next_class(self, counts: dict[str, int],
                   rng: np.random.Generator) -> EntitySpec | None:
        """Mandatory classes first in declared order, then a weighted draw
        among the classes still under their per-document cap."""
        for spec in self.entities:
            if counts.get(spec.class_id, 0) < spec.min_count:
                return spec
        eligible = [s for s in self.entities
                    if counts.get(s.class_id, 0) < s.max_count]
        if not eligible:
            return None
        weights = np.array([s.weight for s in eligible])
        idx = int(rng.choice(len(eligible), p=weights / weights.sum()))
        return eligible[idx]


def parse_stylesheet(text: str, name: str = "user") -> StyleSheet:
    """Line-oriented stylesheet format::

        stylesheet demo
        page-margin 8
        margin-frac 0.25
        entity-gap 4 12
        entity N column=margin max=1 lines=1:1 chars=8 weight=0.5
        entity B min=1 lines=1:4 chars=32
    """
    entities: list[EntitySpec] = []
    kwargs: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, _, rest = line.partition(" ")
        rest = rest.strip()
        try:
            if head == "stylesheet":
                name = rest
            elif head == "page-margin":
                kwargs["page_margin"] = int(rest)
            elif head == "margin-frac":
                kwargs["margin_frac"] = float(rest)
            elif head == "entity-gap":
                lo, hi = rest.split()
                kwargs["entity_gap"] = (int(lo), int(hi))
            elif head == "entity":
                parts = rest.split()
                spec_kwargs: dict = {"class_id": parts[0]}
                for item in parts[1:]:
                    key, _, value = item.partition("=")
                    if key == "column":
                        spec_kwargs["column"] = value
                    elif key == "min":
                        spec_kwargs["min_count"] = int(value)
                    elif key == "max":
                        spec_kwargs["max_count"] = int(value)
                    elif key == "weight":
                        spec_kwargs["weight"] = float(value)
                    elif key == "lines":
                        lo, _, hi = value.partition(":")
                        spec_kwargs["min_lines"] = int(lo)
                        spec_kwargs["max_lines"] = int(hi or lo)
                    elif key == "chars":
                        spec_kwargs["max_chars"] = int(value)
                    elif key == "scale":
                        spec_kwargs["scale"] = int(value)
                    elif key == "indent":
                        spec_kwargs["indent_max"] = int(value)
                    elif key == "gap":
                        spec_kwargs["line_gap_max"] = int(value)
                    else:
                        raise StyleError(f"unknown entity option {key!r}")
                entities.append(EntitySpec(**spec_kwargs))
            else:
                raise StyleError(f"unknown directive {head!r}")
        except (ValueError, IndexError) as exc:
            if isinstance(exc, StyleError):
                raise StyleError(f"line {lineno}: {exc}")
            raise StyleError(f"line {lineno}: cannot parse {line!r} ({exc})")
    return StyleSheet(name=name, entities=tuple(entities), **kwargs)


def load_stylesheet(path) -> StyleSheet:
    from pathlib import Path
    p = Path(path)
    return parse_stylesheet(p.read_text(encoding="utf-8"), name=p.stem)


def read_style() -> StyleSheet:
    """Two-column page in the style of historical chancery registers: page
    number on top, annotations in the margin, body text in the main column."""
    return StyleSheet(
        name="read-style",
        entities=(
            EntitySpec("N", column="main", min_count=0, max_count=1, weight=0.5,
                       min_lines=1, max_lines=1, max_chars=6, scale=2),
            EntitySpec("A", column="margin", min_count=0, max_count=6, weight=1.5,
                       min_lines=1, max_lines=2, max_chars=10, scale=2),
            EntitySpec("B", column="main", min_count=1, max_count=8, weight=2.0,
                       min_lines=1, max_lines=6, max_chars=28, scale=2),
        ),
        margin_frac=0.28,
        page_margin=8,
        entity_gap=(4, 12),
    )


def rimes_style() -> StyleSheet:
    """Single-column business letter: sender, recipient, date, subject,
    opening, body, postscript."""
    return StyleSheet(
        name="rimes-style",
        entities=(
            EntitySpec("S", min_count=0, max_count=1, weight=1.0, max_lines=3,
                       max_chars=24),
            EntitySpec("R", min_count=0, max_count=1, weight=1.0, max_lines=3,
                       max_chars=24),
            EntitySpec("W", min_count=0, max_count=1, weight=0.8, max_lines=1,
                       max_chars=24),
            EntitySpec("Y", min_count=0, max_count=1, weight=0.8, max_lines=2,
                       max_chars=28),
            EntitySpec("O", min_count=0, max_count=1, weight=0.8, max_lines=1,
                       max_chars=24),
            EntitySpec("B", min_count=1, max_count=3, weight=3.0, max_lines=8,
                       max_chars=32),
            EntitySpec("P", min_count=0, max_count=1, weight=0.5, max_lines=2,
                       max_chars=28),
        ),
        margin_frac=0.0,
        page_margin=8,
        entity_gap=(4, 12),
    )


BUILTIN_STYLES = {"read-style": read_style, "rimes-style": rimes_style}


# -- line datasets ------------------------------------------------------------------


@dataclass(frozen=True)
class LineDataset:
    """Isolated transcription lines, each tagged with its layout class."""

    records: tuple[tuple[str, str], ...]  # (text, class_id)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(tuple(r) for r in self.records))
        for text, cid in self.records:
            if not text:
                raise ValueError("line dataset texts must be non-empty")
            if not cid:
                raise ValueError("line dataset classes must be non-empty")

    def validate_against(self, grammar: LayoutGrammar) -> None:
        for text, cid in self.records:
            if cid not in grammar:
                raise ValueError(f"line class {cid!r} not in grammar")
            bad = set(text) - grammar.alphabet
            if bad:
                raise ValueError(f"line {text!r} uses characters {sorted(bad)} "
                                 f"outside the grammar alphabet")

    def for_class(self, class_id: str) -> tuple[str, ...]:
        return tuple(t for t, c in self.records if c == class_id)

    def classes(self) -> frozenset[str]:
        return frozenset(c for _, c in self.records)

    def __len__(self) -> int:
        return len(self.records)

    @classmethod
    def from_tsv(cls, text: str) -> "LineDataset":
        """One record per line: ``class-id TAB text``."""
        records = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            if not raw.strip():
                continue
            cid, sep, line_text = raw.partition("\t")
            if not sep:
                raise ValueError(f"line {lineno}: expected 'class<TAB>text'")
            records.append((line_text, cid.strip()))
        return cls(tuple(records))

    @classmethod
    def load(cls, path) -> "LineDataset":
        from pathlib import Path
        return cls.from_tsv(Path(path).read_text(encoding="utf-8"))


# -- documents -------------------------------------------------------------------------


@dataclass(frozen=True)
class EntityBox:
    class_id: str
    top: int
    left: int
    bottom: int
    right: int


@dataclass(frozen=True)
class SynthDocument:
    image: np.ndarray                 # uint8 (H, W)
    ground_truth: TokenSequence
    boxes: tuple[EntityBox, ...]      # bookkeeping only, never a label

    @property
    def shape(self) -> tuple[int, int]:
        return self.image.shape


def _fit_text(text: str, font: GlyphSet, scale: int, avail: int) -> str:
    """Longest prefix whose rendered width fits in ``avail`` pixels."""
    width = 0
    for i, ch in enumerate(text):
        width += font.advance(ch) * scale
        if width > avail:
            return text[:i]
    return text


def _open_ancestors(stack: list[str], chain: Sequence[str],
                    out: list[Token]) -> None:
    """Close and open layout tags so ``stack`` equals ``chain``."""
    while stack and list(stack) != list(chain[:len(stack)]):
        out.append(end(stack.pop()))
    for cid in chain[len(stack):]:
        out.append(begin(cid))
        stack.append(cid)


def generate_document(template_shape: tuple[int, int], l_doc: int,
                      style: StyleSheet, lines: LineDataset,
                      fonts: Iterable[GlyphSet], rng: np.random.Generator,
                      grammar: LayoutGrammar, *,
                      crop: bool = True, v_stride: int = 32,
                      max_retries: int = 20) -> SynthDocument:
    """Compose a page with exactly ``l_doc`` text lines spread over entities.

    Entities are placed top to bottom in their column; the serialized ground
    truth follows placement order, with required ancestor classes opened and
    closed automatically.  With ``crop`` the page is cut just below the
    lowest entity, rounded up to a multiple of ``v_stride``.
    """
    if l_doc < 1:
        raise ValueError("documents need at least one line")
    style.validate_against(grammar)
    lines.validate_against(grammar)
    h, w = template_shape
    margin = style.page_margin
    usable_w = w - 2 * margin
    if h <= 2 * margin or usable_w < 16:
        raise PlacementInfeasible(f"template {template_shape} too small")

    if style.margin_frac > 0:
        margin_w = max(16, int(usable_w * style.margin_frac))
        columns = {"margin": (margin, margin + margin_w - 4),
                   "main": (margin + margin_w, w - margin)}
    else:
        columns = {"main": (margin, w - margin)}

    font_list = sorted(fonts, key=lambda f: f.font_id)
    if not font_list:
        raise ValueError("need at least one font")

    canvas = np.full((h, w), BACKGROUND, dtype=np.uint8)
    cursors = {name: margin for name in columns}
    counts: dict[str, int] = {}
    boxes: list[EntityBox] = []
    out: list[Token] = []
    stack: list[str] = []
    remaining = l_doc
    failures = 0

    while remaining > 0:
        spec = style.next_class(counts, rng)
        if spec is None:
            raise PlacementInfeasible(
                "every class reached its per-document cap before "
                f"{l_doc} lines were placed")
        if spec.column not in columns:
            raise StyleError(
                f"class {spec.class_id!r} wants column {spec.column!r} "
                "but the stylesheet reserves no margin")

        pool = lines.for_class(spec.class_id)
        if not pool:
            raise ExhaustedLines(
                f"line dataset has no lines for class {spec.class_id!r}")

        cap = min(spec.max_lines, remaining)
        lo = min(spec.min_lines, cap)
        l_entity = int(rng.integers(lo, cap + 1))

        col_lo, col_hi = columns[spec.column]
        col_width = col_hi - col_lo

        rendered: list[tuple[np.ndarray, int]] = []
        texts: list[str] = []
        feasible = True
        for _ in range(l_entity):
            text = pool[int(rng.integers(len(pool)))][: spec.max_chars]
            candidates = [f for f in font_list if f.supports(text)]
            if not candidates:
                raise UnsupportedCodepoint(
                    f"no configured font supports {text!r}")
            font = candidates[int(rng.integers(len(candidates)))]
            indent = int(rng.integers(0, spec.indent_max + 1))
            # strip so width truncation at a word boundary cannot leave a
            # trailing space that would double up when lines are space-joined
            fitted = _fit_text(text, font, spec.scale, col_width - indent).strip()
            if not fitted:
                feasible = False
                break
            rendered.append((render_line(fitted, font, font.height * spec.scale),
                             indent))
            texts.append(fitted)
        if feasible:
            gaps = [int(rng.integers(0, spec.line_gap_max + 1))
                    for _ in range(len(rendered) - 1)]
            entity_h = sum(img.shape[0] for img, _ in rendered) + sum(gaps)
            entity_w = max(ind + img.shape[1] for img, ind in rendered)
            gap_before = int(rng.integers(style.entity_gap[0],
                                          style.entity_gap[1] + 1))
            first_in_column = cursors[spec.column] == margin
            top = cursors[spec.column] + (0 if first_in_column else gap_before)
            if top + entity_h > h - margin:
                feasible = False
        if not feasible:
            failures += 1
            if failures > max_retries:
                raise PlacementInfeasible(
                    f"could not place a {spec.class_id!r} entity after "
                    f"{max_retries} attempts")
            continue

        failures = 0
        y = top
        for (img, indent), gap in zip(rendered, gaps + [0]):
            hh, ww = img.shape
            region = canvas[y:y + hh, col_lo + indent:col_lo + indent + ww]
            np.minimum(region, img, out=region)
            y += hh + gap
        cursors[spec.column] = top + entity_h
        counts[spec.class_id] = counts.get(spec.class_id, 0) + 1
        boxes.append(EntityBox(spec.class_id, top, col_lo,
                               top + entity_h, col_lo + entity_w))

        _open_ancestors(stack, grammar.ancestor_chain(spec.class_id), out)
        out.append(begin(spec.class_id))
        out.extend(char(c) for c in " ".join(texts))
        out.append(end(spec.class_id))
        remaining -= l_entity

    while stack:
        out.append(end(stack.pop()))

    image = canvas
    if crop and boxes:
        bottom = max(b.bottom for b in boxes)
        crop_h = min(h, math.ceil(bottom / v_stride) * v_stride)
        image = canvas[:crop_h]

    gt = TokenSequence(out)
    diagnostics = validate(gt, grammar)
    if diagnostics:
        raise RuntimeError(
            f"generator produced invalid markup: {diagnostics[:3]}")
    return SynthDocument(image=image, ground_truth=gt, boxes=tuple(boxes))


# -- curricula -----------------------------------------------------------------------------


def curriculum_lines(progress: float, l_max: int) -> int:
    """Linear ramp of the per-page line cap from 1 to ``l_max``."""
    if not 0.0 <= progress <= 1.0:
        raise ValueError("progress must be in [0, 1]")
    if l_max < 1:
        raise ValueError("l_max must be at least 1")
    return min(l_max, math.ceil(1 + progress * (l_max - 1)))


def synth_fraction(epoch: int, *, ramp_epochs: int = 30,
                   decay_epochs: int = 30) -> float:
    """Probability of drawing a synthetic sample: 0.90 through the curriculum
    ramp, then a linear decay to 0.20."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if ramp_epochs < 0 or decay_epochs < 1:
        raise ValueError("schedule lengths must be positive")
    if epoch < ramp_epochs:
        return 0.90
    t = min(1.0, (epoch - ramp_epochs) / decay_epochs)
    return round(0.90 - 0.70 * t, 12)


@dataclass(frozen=True)
class CurriculumState:
    """Snapshot of the generation curriculum at some point in training."""

    l: int
    l_max: int
    synth_fraction: float

    def __post_init__(self):
        if not 1 <= self.l <= self.l_max:
            raise ValueError("need 1 <= l <= l_max")
        if not 0.20 <= self.synth_fraction <= 0.90:
            raise ValueError("synthetic fraction must be in [0.20, 0.90]")

    @classmethod
    def at(cls, epoch: int, l_max: int, *, ramp_epochs: int = 30,
           decay_epochs: int = 30) -> "CurriculumState":
        progress = min(1.0, epoch / ramp_epochs) if ramp_epochs else 1.0
        return cls(l=curriculum_lines(progress, l_max), l_max=l_max,
                   synth_fraction=synth_fraction(
                       epoch, ramp_epochs=ramp_epochs, decay_epochs=decay_epochs))
