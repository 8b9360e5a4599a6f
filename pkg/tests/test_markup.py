import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docrec.grammar import LayoutClass, LayoutGrammar, builtin_grammar
from docrec.markup import (
    DOC_ROOT_ID,
    MEMBERSHIP,
    ORDER,
    HierarchyViolation,
    IllegalCharacter,
    LayoutGraph,
    MarkupError,
    UnbalancedSequence,
    UnknownTag,
    build_graph,
    extract_layout,
    parse_markup,
    post_process,
    serialize,
    strip_layout,
    validate,
)
from docrec.tokens import TokenSequence, begin, char, end

READ = builtin_grammar("read2016")
RIMES = builtin_grammar("rimes2009")

# a small grammar mirroring the worked example used throughout: X is a
# top-level block, A nests inside B, Y and Z exist only to be mispredicted
DEMO = LayoutGrammar(
    "demo",
    frozenset("text123 "),
    (
        LayoutClass("X"),
        LayoutClass("B"),
        LayoutClass("A", parent="B"),
        LayoutClass("Y"),
        LayoutClass("Z"),
    ),
)


# -- parsing ------------------------------------------------------------------


def test_parse_simple():
    seq = parse_markup("<B>hi", RIMES) + TokenSequence([])
    assert [t.kind.name for t in seq] == ["LAYOUT_BEGIN", "CHAR", "CHAR"]


def test_parse_worked_example():
    seq = parse_markup("<X>text1</X><B><A>text2</A><A>text3</A></B>", DEMO)
    assert len(seq) == 23
    assert seq.char_count() == 15
    assert seq.layout_count() == 8
    assert strip_layout(seq).text() == "text1text2text3"
    assert serialize(extract_layout(seq)) == "<X></X><B><A></A><A></A></B>"


def test_serialize_roundtrip():
    text = "<P><N>1</N><S><A>ab</A><B>c d</B></S></P>"
    assert serialize(parse_markup(text, READ)) == text


def test_parse_unknown_tag():
    with pytest.raises(UnknownTag):
        parse_markup("<Q>", READ)


def test_parse_illegal_character():
    with pytest.raises(IllegalCharacter):
        parse_markup("é", READ)  # not in the read alphabet
    with pytest.raises(IllegalCharacter):
        parse_markup("a>b", READ)


def test_parse_malformed_tag():
    with pytest.raises(MarkupError):
        parse_markup("<P", READ)
    with pytest.raises(MarkupError):
        parse_markup("<>", READ)
    with pytest.raises(MarkupError):
        parse_markup("</ P>", READ)


# -- validation ---------------------------------------------------------------


def test_validate_clean():
    assert validate(parse_markup("<S>a</S><B>b</B>", RIMES), RIMES) == []


def test_validate_unclosed_and_misplaced():
    diags = validate(parse_markup("<A>", READ), READ)
    codes = {d.code for d in diags}
    assert codes == {"HierarchyViolation", "UnclosedBegin"}


def test_validate_isolated_end():
    diags = validate(parse_markup("</S>", READ), READ)
    assert [d.code for d in diags] == ["IsolatedEnd"]


def test_validate_unknown_class():
    seq = TokenSequence([begin("Q"), end("Q")])
    codes = [d.code for d in validate(seq, READ)]
    assert "UnknownClass" in codes


def test_validate_implicit_close():
    # </P> arrives while N is still open
    diags = validate(parse_markup("<P><N>1</P>", READ), READ)
    assert [d.code for d in diags] == ["UnclosedBegin"]


# -- post-processing ----------------------------------------------------------


def test_post_process_inserts_end_and_drops_isolated_end():
    report = post_process(parse_markup("<X><Y></Y></Z>", DEMO), DEMO)
    assert serialize(report.corrected) == "<X></X><Y></Y>"
    assert report.edit_count == 2
    ops = [(e.op, str(e.token)) for e in report.edits]
    assert ("added", "End(X)") in ops
    assert ("removed", "End(Z)") in ops


def test_post_process_wraps_missing_ancestor():
    report = post_process(parse_markup("<A></Y>", DEMO), DEMO)
    assert serialize(report.corrected) == "<B><A></A></B>"
    assert report.edit_count == 4


def test_post_process_is_noop_on_valid_input():
    seq = parse_markup("<X>text1</X><B><A>text2</A></B>", DEMO)
    report = post_process(seq, DEMO)
    assert report.corrected == seq
    assert report.edit_count == 0
    assert report.space_removals == 0


def test_post_process_groups_siblings_under_one_ancestor():
    seq = TokenSequence(
        [begin("A"), char("a"), end("A"), begin("B"), char("b"), end("B")])
    report = post_process(seq, READ)
    assert serialize(report.corrected) == "<P><S><A>a</A><B>b</B></S></P>"
    assert report.edit_count == 4  # <P> <S> ... </S> </P>


def test_post_process_keeps_legal_ancestor_open():
    # A arrives while only P is open: S is inserted, P stays open
    seq = TokenSequence([begin("P"), begin("A"), char("a"), end("A"), end("P")])
    report = post_process(seq, READ)
    assert serialize(report.corrected) == "<P><S><A>a</A></S></P>"


def test_post_process_collapses_spaces_without_counting_them():
    report = post_process(parse_markup("<X>t  t   1</X>", DEMO), DEMO)
    assert serialize(report.corrected) == "<X>t t 1</X>"
    assert report.edit_count == 0
    assert report.space_removals == 3


def test_post_process_closes_everything_at_end():
    report = post_process(parse_markup("<X>text1", DEMO), DEMO)
    assert serialize(report.corrected) == "<X>text1</X>"
    assert report.edit_count == 1


# -- layout graphs ------------------------------------------------------------


def test_build_graph_read_example():
    g = build_graph(parse_markup("<P><N>1</N><S><A>a</A><B>b</B></S></P>", READ), READ)
    assert g.n_nodes == 6  # root + P, N, S, A, B
    assert g.n_edges == 7  # 5 membership + order N->S and A->B
    kinds = [k for _, _, k in g.edges]
    assert kinds.count(MEMBERSHIP) == 5
    assert kinds.count(ORDER) == 2
    assert g.node_class(DOC_ROOT_ID) is None


def test_build_graph_flat_example():
    g = build_graph(parse_markup("<S>a</S><B>b</B>", RIMES), RIMES)
    assert g.n_nodes == 3
    assert g.n_edges == 3  # two membership edges from the root, one order edge
    assert g.size == 6


def test_build_graph_empty_sequence():
    g = build_graph(TokenSequence([]), RIMES)
    assert g.n_nodes == 1 and g.n_edges == 0
    assert g.entity_nodes() == ()


def test_null_graph():
    g = LayoutGraph.null()
    assert g.n_nodes == 0 and g.n_edges == 0 and g.size == 0


def test_build_graph_rejects_unbalanced():
    with pytest.raises(UnbalancedSequence):
        build_graph(parse_markup("<S>a", RIMES), RIMES)
    with pytest.raises(UnbalancedSequence):
        build_graph(parse_markup("</S>", RIMES), RIMES)


def test_build_graph_rejects_misplaced_class():
    with pytest.raises(HierarchyViolation):
        build_graph(parse_markup("<A>a</A>", READ), READ)


def test_page_subgraphs_two_pages():
    text = "<P><N>1</N><S><B>x</B></S></P><P><S><B>y</B></S></P>"
    g = build_graph(parse_markup(text, READ), READ)
    assert g.n_nodes == 8 and g.n_edges == 9
    pages = g.page_subgraphs(READ)
    assert len(pages) == 2
    assert (pages[0].n_nodes, pages[0].n_edges) == (5, 5)
    assert (pages[1].n_nodes, pages[1].n_edges) == (4, 3)
    # the cross-page order edge is not kept in any page
    assert sum(p.n_edges for p in pages) == g.n_edges - 1
    for p in pages:
        assert p.node_class(DOC_ROOT_ID) is None


def test_page_subgraphs_flat_grammar_is_single_page():
    g = build_graph(parse_markup("<S>a</S><B>b</B>", RIMES), RIMES)
    assert g.page_subgraphs(RIMES) == [g]


# -- property tests -----------------------------------------------------------


def _valid_sequence(draw, grammar, parent, depth):
    toks = []
    alphabet = st.sampled_from(sorted(grammar.alphabet - {" "}))
    for cls in grammar.children_of(parent):
        lo = cls.min_count
        hi = cls.max_count if cls.max_count is not None else (2 if depth < 2 else lo)
        count = draw(st.integers(lo, max(lo, min(hi, 2))))
        for _ in range(count):
            toks.append(begin(cls.id))
            for c in draw(st.lists(alphabet, max_size=3)):
                toks.append(char(c))
            if depth < 3:
                toks.extend(_valid_sequence(draw, grammar, cls.id, depth + 1))
            toks.append(end(cls.id))
    return toks


@st.composite
def valid_sequences(draw, grammar):
    return TokenSequence(_valid_sequence(draw, grammar, None, 0))


@st.composite
def grammar_and_valid_sequence(draw):
    grammar = draw(st.sampled_from([READ, RIMES]))
    return grammar, draw(valid_sequences(grammar))


@st.composite
def token_soup(draw, grammar):
    alphabet = sorted(grammar.alphabet)
    opts = [char(c) for c in alphabet]
    for cid in grammar.class_ids:
        opts.extend([begin(cid), end(cid)])
    return TokenSequence(draw(st.lists(st.sampled_from(opts), max_size=24)))


@given(grammar_and_valid_sequence())
def test_roundtrip_valid(case):
    grammar, seq = case
    assert parse_markup(serialize(seq), grammar) == seq


@given(token_soup(READ))
def test_roundtrip_soup(seq):
    assert parse_markup(serialize(seq), READ) == seq


@given(grammar_and_valid_sequence())
def test_post_process_noop_on_valid(case):
    grammar, seq = case
    report = post_process(seq, grammar)
    assert report.corrected == seq
    assert report.edit_count == 0


@settings(max_examples=200)
@given(token_soup(READ))
def test_post_process_always_yields_valid_markup(seq):
    report = post_process(seq, READ)
    assert validate(report.corrected, READ) == []
    again = post_process(report.corrected, READ)
    assert again.corrected == report.corrected
    assert again.edit_count == 0


@settings(max_examples=200)
@given(token_soup(RIMES))
def test_post_process_always_yields_valid_markup_flat(seq):
    report = post_process(seq, RIMES)
    assert validate(report.corrected, RIMES) == []
    assert post_process(report.corrected, RIMES).edit_count == 0


@given(token_soup(READ))
def test_strip_extract_partition(seq):
    stripped, layout = strip_layout(seq), extract_layout(seq)
    assert len(stripped) + len(layout) == len(seq)
    assert all(t.is_char for t in stripped)
    assert all(t.is_layout for t in layout)
    assert list(stripped) == [t for t in seq if t.is_char]
    assert list(layout) == [t for t in seq if t.is_layout]


@given(valid_sequences(READ))
def test_graph_structure_invariants(seq):
    g = build_graph(seq, READ)
    begins = sum(1 for t in seq if t.is_begin)
    assert g.n_nodes == begins + 1
    membership = [(s, d) for s, d, k in g.edges if k == MEMBERSHIP]
    assert len(membership) == begins  # every entity has exactly one parent
    targets = [d for _, d in membership]
    assert len(set(targets)) == len(targets)
    order = [(s, d) for s, d, k in g.edges if k == ORDER]
    assert len(order) <= max(0, g.n_nodes - 1)


@given(valid_sequences(READ))
def test_page_decomposition_covers_graph(seq):
    g = build_graph(seq, READ)
    pages = g.page_subgraphs(READ)
    n_pages = sum(1 for t in seq if t.is_begin and t.value == "P")
    assert len(pages) == max(1, n_pages)
    entity_total = sum(len(p.entity_nodes()) for p in pages)
    assert entity_total == len(g.entity_nodes())
