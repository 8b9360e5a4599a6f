import pytest

from docrec.tokens import EOT, SOT, Token, TokenKind, TokenSequence, begin, char, end


def test_char_token():
    t = char("a")
    assert t.kind is TokenKind.CHAR
    assert t.value == "a"
    assert t.is_char and not t.is_layout


def test_layout_tokens():
    b, e = begin("B"), end("B")
    assert b.is_begin and not b.is_end
    assert e.is_end and not e.is_begin
    assert b.is_layout and e.is_layout
    assert b != e


def test_sentinels():
    assert SOT.kind is TokenKind.SOT
    assert EOT.kind is TokenKind.EOT
    assert not SOT.is_char and not SOT.is_layout


def test_char_requires_single_codepoint():
    with pytest.raises(ValueError):
        char("ab")
    with pytest.raises(ValueError):
        char("")


def test_tokens_are_hashable_and_comparable():
    assert char("a") == char("a")
    assert len({char("a"), char("a"), begin("B")}) == 2


def test_sequence_basics():
    seq = TokenSequence([begin("B"), char("h"), char("i"), end("B")])
    assert len(seq) == 4
    assert seq[1] == char("h")
    assert list(seq[1:3]) == [char("h"), char("i")]
    assert seq.text() == "hi"
    assert seq.char_count() == 2
    assert seq.layout_count() == 2


def test_sequence_from_text():
    seq = TokenSequence.from_text("ab c")
    assert len(seq) == 4
    assert all(t.is_char for t in seq)
    assert seq.text() == "ab c"


def test_sequence_rejects_sentinels():
    with pytest.raises(ValueError):
        TokenSequence([char("a"), EOT])
    with pytest.raises(ValueError):
        TokenSequence([SOT, char("a")])


def test_sequence_concat_and_equality():
    a = TokenSequence.from_text("ab")
    b = TokenSequence([begin("X"), end("X")])
    joined = a + b
    assert len(joined) == 4
    assert joined == TokenSequence([char("a"), char("b"), begin("X"), end("X")])
    assert hash(a + b) == hash(joined)


def test_token_is_immutable():
    with pytest.raises(AttributeError):
        char("a").value = "b"
