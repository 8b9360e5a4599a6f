"""Layout grammars: class hierarchies, character alphabets, reading-order rules.

A grammar names the set of layout classes a dataset uses, how they nest
(a forest rooted at the implicit document root), and which characters may
appear as text.  Two grammars ship embedded: ``rimes2009`` (seven flat
classes over French mail) and ``read2016`` (hierarchical page / section
structure over Early Modern German pages).
"""

from __future__ import annotations

from dataclasses import dataclass, field


ORDER_RULES = ("top-bottom-left-right", "read-hierarchical")


class GrammarError(ValueError):
    """Malformed grammar definition or grammar file."""


@dataclass(frozen=True)
class LayoutClass:
    """One layout entity class.

    ``parent`` is the id of the enclosing class, or ``None`` for classes that
    attach directly under the document root.  ``max_count`` of ``None`` means
    unbounded repetition under one parent.
    """

    id: str
    display: str = ""
    parent: str | None = None
    min_count: int = 0
    max_count: int | None = None

    def __post_init__(self):
        if not self.id or not self.id.isascii() or any(c in "<>/" for c in self.id):
            raise GrammarError(f"class id must be a short ASCII tag without <>/: {self.id!r}")
        if not self.display:
            object.__setattr__(self, "display", self.id)
        if self.min_count < 0:
            raise GrammarError("min_count must be >= 0")
        if self.max_count is not None and self.max_count < self.min_count:
            raise GrammarError("max_count must be >= min_count")

    @property
    def may_repeat(self) -> bool:
        return self.max_count is None or self.max_count > 1


@dataclass(frozen=True)
class LayoutGrammar:
    name: str
    alphabet: frozenset[str]
    classes: tuple[LayoutClass, ...]
    order_rule: str = "top-bottom-left-right"
    _by_id: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.order_rule not in ORDER_RULES:
            raise GrammarError(f"unknown reading-order rule {self.order_rule!r}")
        for c in self.alphabet:
            if c in "<>":
                raise GrammarError("angle brackets are reserved for layout tags")
        by_id: dict[str, LayoutClass] = {}
        for cls in self.classes:
            if cls.id in by_id:
                raise GrammarError(f"duplicate class id {cls.id!r}")
            by_id[cls.id] = cls
        for cls in self.classes:
            if cls.parent is not None and cls.parent not in by_id:
                raise GrammarError(f"class {cls.id!r} has unknown parent {cls.parent!r}")
        # parent links must form a forest (no cycles)
        for cls in self.classes:
            seen = {cls.id}
            p = cls.parent
            while p is not None:
                if p in seen:
                    raise GrammarError(f"cycle in class hierarchy at {p!r}")
                seen.add(p)
                p = by_id[p].parent
        object.__setattr__(self, "_by_id", by_id)

    # -- lookups ----------------------------------------------------------

    def __contains__(self, class_id: str) -> bool:
        return class_id in self._by_id

    def get(self, class_id: str) -> LayoutClass:
        try:
            return self._by_id[class_id]
        except KeyError:
            raise GrammarError(f"unknown layout class {class_id!r} in grammar {self.name!r}")

    @property
    def class_ids(self) -> tuple[str, ...]:
        return tuple(c.id for c in self.classes)

    @property
    def layout_token_count(self) -> int:
        """Each class contributes a begin and an end token."""
        return 2 * len(self.classes)

    def children_of(self, parent: str | None) -> tuple[LayoutClass, ...]:
        return tuple(c for c in self.classes if c.parent == parent)

    def allows_child(self, child_id: str, parent: str | None) -> bool:
        """True if ``child_id`` may be directly enclosed by ``parent`` (None = root)."""
        return self.get(child_id).parent == parent

    def ancestor_chain(self, class_id: str) -> tuple[str, ...]:
        """Required enclosing classes, outermost first, excluding the class itself."""
        chain: list[str] = []
        p = self.get(class_id).parent
        while p is not None:
            chain.append(p)
            p = self.get(p).parent
        return tuple(reversed(chain))

    @property
    def page_class(self) -> str | None:
        """The class whose instances are pages, if the hierarchy has one.

        A grammar has an explicit page level when exactly one top-level class
        exists and other classes nest inside it; flat grammars have none and
        the whole document acts as a single implicit page.
        """
        top = self.children_of(None)
        if len(top) == 1 and any(c.parent == top[0].id for c in self.classes):
            return top[0].id
        return None


# -- grammar files ---------------------------------------------------------
#
# UTF-8 declarative text with three sections:
#
#   [classes]
#   # id  parent  min  max        ('-' = root parent, '*' = unbounded max)
#   P  -  1  *
#   N  P  1  1
#   [alphabet]
#   U+0020-U+007E                  (single codepoints or inclusive ranges)
#   U+00E9
#   [order]
#   read-hierarchical


def _parse_codepoint(tok: str) -> int:
    t = tok.strip()
    if t.upper().startswith("U+"):
        return int(t[2:], 16)
    if t.lower().startswith("0x"):
        return int(t[2:], 16)
    raise GrammarError(f"bad codepoint {tok!r} (use U+XXXX or 0xXX)")


def parse_grammar(text: str, name: str = "custom") -> LayoutGrammar:
    section = None
    classes: list[LayoutClass] = []
    alphabet: set[str] = set()
    order_rule = "top-bottom-left-right"
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("classes", "alphabet", "order"):
                raise GrammarError(f"line {lineno}: unknown section [{section}]")
            continue
        if section == "classes":
            parts = line.split()
            if len(parts) < 4:
                raise GrammarError(f"line {lineno}: expected 'id parent min max'")
            cid, parent, mn, mx = parts[:4]
            display = " ".join(parts[4:]) if len(parts) > 4 else cid
            classes.append(LayoutClass(
                id=cid,
                display=display,
                parent=None if parent == "-" else parent,
                min_count=int(mn),
                max_count=None if mx == "*" else int(mx),
            ))
        elif section == "alphabet":
            if "-" in line and not line.startswith("-"):
                lo, hi = line.split("-", 1)
                a, b = _parse_codepoint(lo), _parse_codepoint(hi)
                if b < a:
                    raise GrammarError(f"line {lineno}: empty codepoint range")
                alphabet.update(chr(cp) for cp in range(a, b + 1))
            else:
                alphabet.add(chr(_parse_codepoint(line)))
        elif section == "order":
            order_rule = line
        else:
            raise GrammarError(f"line {lineno}: content before any section header")
    if not classes:
        raise GrammarError("grammar defines no classes")
    alphabet -= {"<", ">"}
    return LayoutGrammar(name=name, alphabet=frozenset(alphabet),
                         classes=tuple(classes), order_rule=order_rule)


def load_grammar(path) -> LayoutGrammar:
    from pathlib import Path
    p = Path(path)
    return parse_grammar(p.read_text(encoding="utf-8"), name=p.stem)


# -- built-ins ---------------------------------------------------------------

_ASCII = frozenset(chr(c) for c in range(0x20, 0x7F)) - {"<", ">"}
_FRENCH_EXTRA = frozenset("àâçéèêëîïôûùü")
_GERMAN_EXTRA = frozenset("äöüßÄÖÜ")

_RIMES = LayoutGrammar(
    name="rimes2009",
    alphabet=_ASCII | _FRENCH_EXTRA,
    classes=(
        LayoutClass("S", "sender"),
        LayoutClass("R", "recipient"),
        LayoutClass("W", "date & location"),
        LayoutClass("Y", "subject"),
        LayoutClass("O", "opening"),
        LayoutClass("B", "body", min_count=1),
        LayoutClass("P", "PS & attachment"),
    ),
    order_rule="top-bottom-left-right",
)

_READ = LayoutGrammar(
    name="read2016",
    alphabet=_ASCII | _GERMAN_EXTRA,
    classes=(
        LayoutClass("P", "page", min_count=1),
        LayoutClass("N", "page number", parent="P", min_count=0, max_count=1),
        LayoutClass("S", "section", parent="P"),
        LayoutClass("A", "annotation", parent="S"),
        LayoutClass("B", "body", parent="S", min_count=1, max_count=1),
    ),
    order_rule="read-hierarchical",
)

BUILTIN_GRAMMARS = {g.name: g for g in (_RIMES, _READ)}


def builtin_grammar(name: str) -> LayoutGrammar:
    try:
        return BUILTIN_GRAMMARS[name]
    except KeyError:
        raise GrammarError(
            f"no built-in grammar {name!r}; available: {', '.join(sorted(BUILTIN_GRAMMARS))}")
