"""Parsing, serialization, repair and graph mapping of layout-tagged transcripts.

The serialized form follows an XML-like convention: ``<id>`` opens a layout
entity, ``</id>`` closes it, and everything else is literal text drawn from
the grammar's alphabet.  Tags carry no attributes and no escaping; angle
brackets never occur as text.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .grammar import GrammarError, LayoutGrammar
from .tokens import Token, TokenSequence, begin, char, end


class MarkupError(ValueError):
    """Malformed markup text."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message if position is None else f"{message} (at offset {position})")
        self.position = position


class UnknownTag(MarkupError):
    pass


class IllegalCharacter(MarkupError):
    pass


class UnbalancedSequence(ValueError):
    pass


class HierarchyViolation(ValueError):
    pass


# -- parse / serialize -------------------------------------------------------


def parse_markup(text: str, grammar: LayoutGrammar) -> TokenSequence:
    """Tokenize markup text: one Char token per codepoint, one layout token per tag."""
    tokens: list[Token] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == "<":
            close = text.find(">", i + 1)
            if close < 0:
                raise MarkupError("unterminated tag", i)
            body = text[i + 1:close]
            closing = body.startswith("/")
            tag = body[1:] if closing else body
            if not tag or any(ch in "</> \t\n" for ch in tag):
                raise MarkupError(f"malformed tag {text[i:close + 1]!r}", i)
            if tag not in grammar:
                raise UnknownTag(f"unknown tag {tag!r} for grammar {grammar.name!r}", i)
            tokens.append(end(tag) if closing else begin(tag))
            i = close + 1
        elif c == ">":
            raise IllegalCharacter("'>' outside a tag", i)
        else:
            if c not in grammar.alphabet:
                raise IllegalCharacter(f"character {c!r} not in grammar alphabet", i)
            tokens.append(char(c))
            i += 1
    return TokenSequence(tokens)


def serialize(seq: TokenSequence) -> str:
    """Canonical markup string; inverse of :func:`parse_markup`."""
    parts = []
    for t in seq:
        if t.is_char:
            parts.append(t.value)
        elif t.is_begin:
            parts.append(f"<{t.value}>")
        else:
            parts.append(f"</{t.value}>")
    return "".join(parts)


def strip_layout(seq: TokenSequence) -> TokenSequence:
    """Character tokens only, order preserved."""
    return TokenSequence(t for t in seq if t.is_char)


def extract_layout(seq: TokenSequence) -> TokenSequence:
    """Layout tokens only, order preserved."""
    return TokenSequence(t for t in seq if t.is_layout)


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    code: str  # UnknownClass | IsolatedEnd | UnclosedBegin | HierarchyViolation
    position: int
    message: str

    def __str__(self) -> str:
        return f"{self.code}@{self.position}: {self.message}"


def validate(seq: TokenSequence, grammar: LayoutGrammar) -> list[Diagnostic]:
    """Structural diagnostics; empty iff the sequence is balanced and hierarchy-valid."""
    diags: list[Diagnostic] = []
    stack: list[tuple[str, int]] = []  # (class id, position of its begin)
    for pos, t in enumerate(seq):
        if t.is_begin:
            if t.value not in grammar:
                diags.append(Diagnostic("UnknownClass", pos, f"class {t.value!r} not in grammar"))
                stack.append((t.value, pos))
                continue
            parent = stack[-1][0] if stack else None
            if grammar.get(t.value).parent != parent:
                diags.append(Diagnostic(
                    "HierarchyViolation", pos,
                    f"{t.value!r} cannot open under {parent!r}"))
            stack.append((t.value, pos))
        elif t.is_end:
            if stack and stack[-1][0] == t.value:
                stack.pop()
            elif any(cid == t.value for cid, _ in stack):
                while stack and stack[-1][0] != t.value:
                    cid, bpos = stack.pop()
                    diags.append(Diagnostic("UnclosedBegin", bpos, f"<{cid}> closed implicitly"))
                stack.pop()
            else:
                diags.append(Diagnostic("IsolatedEnd", pos, f"</{t.value}> matches no open tag"))
    for cid, bpos in stack:
        diags.append(Diagnostic("UnclosedBegin", bpos, f"<{cid}> never closed"))
    return diags


# -- post-processing ----------------------------------------------------------


@dataclass(frozen=True)
class Edit:
    position: int  # index in the corrected sequence
    op: str  # "added" | "removed"
    token: Token


@dataclass(frozen=True)
class PostProcessReport:
    corrected: TokenSequence
    edits: tuple[Edit, ...]
    space_removals: int = 0  # text cleanup, not counted as layout editions

    @property
    def edit_count(self) -> int:
        return len(self.edits)


def post_process(seq: TokenSequence, grammar: LayoutGrammar) -> PostProcessReport:
    """Repair a raw predicted sequence into a balanced, hierarchy-valid one.

    Two deterministic passes.  The first walks left to right balancing layout
    tokens: an entity still open when an incompatible begin arrives is closed
    just before it, ends with no matching begin are dropped, and anything
    still open at the end is closed.  The second pass wraps entities whose
    required enclosing classes are missing, grouping consecutive siblings
    under one inserted ancestor.  Duplicated spaces are collapsed along the
    way but logged separately from layout editions.
    """
    out: list[Token] = []
    edits1: list[Edit] = []  # positions refer to `out`
    space_removals = 0
    stack: list[str] = []

    def close_top():
        cid = stack.pop()
        tok = end(cid)
        edits1.append(Edit(len(out), "added", tok))
        out.append(tok)

    for t in seq:
        if t.is_char:
            if t.value == " " and out and out[-1].is_char and out[-1].value == " ":
                space_removals += 1
                continue
            out.append(t)
        elif t.is_begin:
            if t.value not in grammar:
                edits1.append(Edit(len(out), "removed", t))
                continue
            chain = grammar.ancestor_chain(t.value)
            parent = grammar.get(t.value).parent
            while stack and stack[-1] != parent and stack[-1] not in chain:
                close_top()
            stack.append(t.value)
            out.append(t)
        else:  # end token
            if t.value not in grammar or t.value not in stack:
                edits1.append(Edit(len(out), "removed", t))
                continue
            while stack[-1] != t.value:
                close_top()
            stack.pop()
            out.append(t)
    while stack:
        close_top()

    # second pass: insert missing ancestors, wrapping runs of siblings that
    # need the same enclosing class
    final: list[Token] = []
    edits2: list[Edit] = []
    posmap: list[int] = []  # index in `out` -> index in `final`

    def first_missing(cid: str, context: str | None) -> str | None:
        cls = grammar.get(cid)
        if cls.parent == context:
            return None
        chain = grammar.ancestor_chain(cid)  # outermost first
        if context is None:
            return chain[0]
        idx = chain.index(context)  # pass 1 guarantees context is an ancestor
        return chain[idx + 1]

    def emit_wrapped(items: list, context: str | None):
        # items: list of ("char", out_idx) | ("entity", cid, out_idx_begin,
        # children, out_idx_end); group consecutive entities by the class
        # missing directly under `context`
        i = 0
        while i < len(items):
            item = items[i]
            if item[0] == "char":
                posmap_set(item[1], len(final))
                final.append(out[item[1]])
                i += 1
                continue
            missing = first_missing(item[1], context)
            if missing is None:
                emit_entity(item, context)
                i += 1
                continue
            j = i
            while j < len(items) and items[j][0] == "entity" \
                    and first_missing(items[j][1], context) == missing:
                j += 1
            btok = begin(missing)
            edits2.append(Edit(len(final), "added", btok))
            final.append(btok)
            emit_wrapped(items[i:j], missing)
            etok = end(missing)
            edits2.append(Edit(len(final), "added", etok))
            final.append(etok)
            i = j

    def emit_entity(item, context):
        _, cid, bpos, children, epos = item
        posmap_set(bpos, len(final))
        final.append(out[bpos])
        emit_wrapped(children, cid)
        posmap_set(epos, len(final))
        final.append(out[epos])

    def posmap_set(out_idx: int, final_idx: int):
        while len(posmap) <= out_idx:
            posmap.append(-1)
        posmap[out_idx] = final_idx

    # parse the balanced pass-1 output into a forest
    def parse_forest(lo: int, hi: int) -> list:
        items = []
        i = lo
        while i < hi:
            t = out[i]
            if t.is_char:
                items.append(("char", i))
                i += 1
            else:  # begin token (pass 1 guarantees balance)
                depth, j = 1, i + 1
                while depth:
                    if out[j].is_begin:
                        depth += 1
                    elif out[j].is_end:
                        depth -= 1
                    j += 1
                items.append(("entity", t.value, i, parse_forest(i + 1, j - 1), j - 1))
                i = j
        return items

    emit_wrapped(parse_forest(0, len(out)), None)

    # re-express pass-1 edit positions in final-sequence coordinates
    def remap(p: int) -> int:
        if p < len(posmap) and posmap[p] >= 0:
            return posmap[p]
        return len(final) if p >= len(out) else p

    all_edits = sorted(
        [Edit(remap(e.position), e.op, e.token) for e in edits1] + edits2,
        key=lambda e: e.position)
    return PostProcessReport(TokenSequence(final), tuple(all_edits), space_removals)


# -- layout graphs ------------------------------------------------------------

MEMBERSHIP = "membership"
ORDER = "order"

DOC_ROOT_ID = "D"


@dataclass(frozen=True)
class LayoutGraph:
    """Oriented layout graph: membership tree plus reading-order edges.

    The document root is an ordinary node (id ``D``, class ``None``); the
    null graph has no nodes at all.  Node and edge counts therefore include
    the root and its membership edges.
    """

    nodes: tuple[tuple[str, str | None], ...] = ()
    edges: tuple[tuple[str, str, str], ...] = ()  # (src, dst, kind)

    @classmethod
    def null(cls) -> "LayoutGraph":
        return cls()

    @classmethod
    def document(cls) -> "LayoutGraph":
        return cls(nodes=((DOC_ROOT_ID, None),))

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def size(self) -> int:
        return self.n_nodes + self.n_edges

    def entity_nodes(self) -> tuple[tuple[str, str | None], ...]:
        return tuple((nid, c) for nid, c in self.nodes if nid != DOC_ROOT_ID)

    def node_class(self, node_id: str) -> str | None:
        for nid, c in self.nodes:
            if nid == node_id:
                return c
        raise KeyError(node_id)

    def children(self, node_id: str) -> list[str]:
        return [dst for src, dst, kind in self.edges if kind == MEMBERSHIP and src == node_id]

    def page_subgraphs(self, grammar: LayoutGrammar) -> list["LayoutGraph"]:
        """Split into per-page graphs, each keeping the document root.

        Grammars with an explicit page class split at top-level page nodes
        (stray top-level entities join the page opened before them); flat
        grammars are single-page by construction.  Order edges between pages
        are dropped, since pages are aligned positionally downstream.
        """
        page_cls = grammar.page_class
        if page_cls is None or not self.nodes:
            return [self]
        top = self.children(DOC_ROOT_ID)
        groups: list[list[str]] = []
        for nid in top:
            if self.node_class(nid) == page_cls or not groups:
                groups.append([nid])
            else:
                groups[-1].append(nid)
        if not groups:
            return [LayoutGraph.document()]
        subs = []
        for roots in groups:
            keep = set()
            frontier = list(roots)
            while frontier:
                nid = frontier.pop()
                keep.add(nid)
                frontier.extend(self.children(nid))
            nodes = tuple((nid, c) for nid, c in self.nodes if nid in keep or nid == DOC_ROOT_ID)
            edges = tuple(
                (s, d, k) for s, d, k in self.edges
                if (s in keep or (s == DOC_ROOT_ID and d in keep)) and d in keep)
            subs.append(LayoutGraph(nodes, edges))
        return subs


def build_graph(seq: TokenSequence, grammar: LayoutGrammar) -> LayoutGraph:
    """Map a balanced, grammar-valid sequence to its layout graph.

    One node per begin/end pair, a membership edge from its enclosing entity
    (the document root for top-level entities), and an order edge between
    consecutive siblings.  Character tokens are ignored, so full transcripts
    can be passed directly.
    """
    nodes: list[tuple[str, str | None]] = [(DOC_ROOT_ID, None)]
    edges: list[tuple[str, str, str]] = []
    stack: list[tuple[str, str | None]] = [(DOC_ROOT_ID, None)]  # (node id, class)
    last_child: dict[str, str] = {}
    counter = 0
    for pos, t in enumerate(seq):
        if t.is_char:
            continue
        if t.is_begin:
            if t.value not in grammar:
                raise GrammarError(f"unknown layout class {t.value!r}")
            parent_id, parent_cls = stack[-1]
            if grammar.get(t.value).parent != parent_cls:
                raise HierarchyViolation(
                    f"<{t.value}> cannot open under {parent_cls or 'document root'} "
                    f"(position {pos})")
            counter += 1
            nid = f"n{counter}"
            nodes.append((nid, t.value))
            edges.append((parent_id, nid, MEMBERSHIP))
            if parent_id in last_child:
                edges.append((last_child[parent_id], nid, ORDER))
            last_child[parent_id] = nid
            stack.append((nid, t.value))
        else:
            if len(stack) == 1 or stack[-1][1] != t.value:
                raise UnbalancedSequence(f"</{t.value}> at position {pos} matches no open tag")
            stack.pop()
    if len(stack) > 1:
        raise UnbalancedSequence(f"<{stack[-1][1]}> never closed")
    return LayoutGraph(tuple(nodes), tuple(edges))
