import pytest

from docrec.grammar import (
    GrammarError,
    LayoutClass,
    LayoutGrammar,
    builtin_grammar,
    parse_grammar,
)


def test_builtin_rimes():
    g = builtin_grammar("rimes2009")
    assert set(g.class_ids) == {"S", "R", "W", "Y", "O", "B", "P"}
    assert g.layout_token_count == 14
    assert g.order_rule == "top-bottom-left-right"
    # flat hierarchy: everything attaches under the document root
    assert all(c.parent is None for c in g.classes)
    assert g.page_class is None


def test_builtin_read():
    g = builtin_grammar("read2016")
    assert set(g.class_ids) == {"P", "N", "S", "A", "B"}
    assert g.layout_token_count == 10
    assert g.order_rule == "read-hierarchical"
    assert g.get("N").parent == "P"
    assert g.get("A").parent == "S"
    assert g.get("B").parent == "S"
    assert g.page_class == "P"
    assert g.ancestor_chain("A") == ("P", "S")
    assert g.ancestor_chain("P") == ()


def test_alphabets_exclude_angle_brackets():
    for name in ("rimes2009", "read2016"):
        g = builtin_grammar(name)
        assert "<" not in g.alphabet and ">" not in g.alphabet
        assert " " in g.alphabet


def test_accented_characters_present():
    assert "é" in builtin_grammar("rimes2009").alphabet
    assert "ß" in builtin_grammar("read2016").alphabet


def test_allows_child():
    g = builtin_grammar("read2016")
    assert g.allows_child("P", None)
    assert g.allows_child("S", "P")
    assert not g.allows_child("A", "P")
    assert not g.allows_child("P", "S")


def test_children_of():
    g = builtin_grammar("read2016")
    assert {c.id for c in g.children_of("P")} == {"N", "S"}
    assert {c.id for c in g.children_of(None)} == {"P"}


def test_unknown_builtin():
    with pytest.raises(GrammarError):
        builtin_grammar("nope")


def test_unknown_class_lookup():
    g = builtin_grammar("rimes2009")
    with pytest.raises(GrammarError):
        g.get("Q")
    assert "Q" not in g


def test_duplicate_class_rejected():
    with pytest.raises(GrammarError):
        LayoutGrammar("g", frozenset("ab"), (LayoutClass("X"), LayoutClass("X")))


def test_unknown_parent_rejected():
    with pytest.raises(GrammarError):
        LayoutGrammar("g", frozenset("ab"), (LayoutClass("X", parent="Z"),))


def test_cyclic_hierarchy_rejected():
    with pytest.raises(GrammarError):
        LayoutGrammar(
            "g", frozenset("ab"),
            (LayoutClass("X", parent="Y"), LayoutClass("Y", parent="X")))


def test_class_id_validation():
    with pytest.raises(GrammarError):
        LayoutClass("<X>")
    with pytest.raises(GrammarError):
        LayoutClass("")


def test_angle_bracket_alphabet_rejected():
    with pytest.raises(GrammarError):
        LayoutGrammar("g", frozenset("<a"), (LayoutClass("X"),))


GRAMMAR_FILE = """\
# toy grammar
[classes]
P - 1 *   page
N P 0 1   page number
B P 1 1   body

[alphabet]
U+0020-U+007D
U+00E9

[order]
read-hierarchical
"""


def test_parse_grammar_file():
    g = parse_grammar(GRAMMAR_FILE, name="toy")
    assert g.class_ids == ("P", "N", "B")
    assert g.get("N").parent == "P"
    assert g.get("N").max_count == 1
    assert g.get("P").max_count is None
    assert g.get("P").display == "page"
    assert "é" in g.alphabet and "a" in g.alphabet
    assert "~" not in g.alphabet  # U+007E outside the declared range
    assert g.order_rule == "read-hierarchical"
    assert g.page_class == "P"


def test_parse_grammar_bad_section():
    with pytest.raises(GrammarError):
        parse_grammar("[nonsense]\nx\n", name="bad")
