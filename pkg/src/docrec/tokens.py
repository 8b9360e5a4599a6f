"""Token alphabet for serialized document transcripts.

A transcript is a flat sequence of character tokens interleaved with paired
layout begin/end markers.  Start/end-of-transcription sentinels exist only at
the model boundary and are never stored inside a :class:`TokenSequence`.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator


class TokenKind(Enum):
    CHAR = "char"
    LAYOUT_BEGIN = "begin"
    LAYOUT_END = "end"
    SOT = "sot"
    EOT = "eot"


@dataclass(frozen=True, slots=True)
class Token:
    """A single output symbol: a character, a layout marker, or a sentinel.

    ``value`` is the codepoint for CHAR tokens and the layout class id for
    LAYOUT_BEGIN/LAYOUT_END; sentinels carry an empty value.
    """

    kind: TokenKind
    value: str = ""

    def __post_init__(self) -> None:
        if self.kind is TokenKind.CHAR and len(self.value) != 1:
            raise ValueError(f"char token needs exactly one codepoint, got {self.value!r}")
        if self.kind in (TokenKind.SOT, TokenKind.EOT) and self.value:
            raise ValueError("sentinel tokens carry no value")
        if self.kind in (TokenKind.LAYOUT_BEGIN, TokenKind.LAYOUT_END) and not self.value:
            raise ValueError("layout tokens need a class id")

    @property
    def is_char(self) -> bool:
        return self.kind is TokenKind.CHAR

    @property
    def is_layout(self) -> bool:
        return self.kind in (TokenKind.LAYOUT_BEGIN, TokenKind.LAYOUT_END)

    @property
    def is_begin(self) -> bool:
        return self.kind is TokenKind.LAYOUT_BEGIN

    @property
    def is_end(self) -> bool:
        return self.kind is TokenKind.LAYOUT_END

    def __repr__(self) -> str:
        if self.is_char:
            return f"Char({self.value!r})"
        if self.is_begin:
            return f"Begin({self.value})"
        if self.is_end:
            return f"End({self.value})"
        return self.kind.name.capitalize()


def char(c: str) -> Token:
    return Token(TokenKind.CHAR, c)


def begin(class_id: str) -> Token:
    return Token(TokenKind.LAYOUT_BEGIN, class_id)


def end(class_id: str) -> Token:
    return Token(TokenKind.LAYOUT_END, class_id)


SOT = Token(TokenKind.SOT)
EOT = Token(TokenKind.EOT)


class TokenSequence:
    """Immutable ordered list of char/layout tokens (no sentinels inside)."""

    __slots__ = ("_tokens",)

    def __init__(self, tokens: Iterable[Token] = ()):
        toks = tuple(tokens)
        for t in toks:
            if t.kind in (TokenKind.SOT, TokenKind.EOT):
                raise ValueError("sentinels are decoding markers, not sequence members")
        object.__setattr__(self, "_tokens", toks)

    @classmethod
    def from_text(cls, text: str) -> "TokenSequence":
        """Sequence of plain character tokens (no layout)."""
        return cls(char(c) for c in text)

    @property
    def tokens(self) -> tuple[Token, ...]:
        return self._tokens

    def __len__(self) -> int:
        return len(self._tokens)

    def __iter__(self) -> Iterator[Token]:
        return iter(self._tokens)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return TokenSequence(self._tokens[i])
        return self._tokens[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, TokenSequence) and self._tokens == other._tokens

    def __hash__(self) -> int:
        return hash(self._tokens)

    def __add__(self, other: "TokenSequence") -> "TokenSequence":
        return TokenSequence(self._tokens + other.tokens)

    def __repr__(self) -> str:
        return f"TokenSequence({list(self._tokens)!r})"

    def text(self) -> str:
        """Concatenated characters, layout markers skipped."""
        return "".join(t.value for t in self._tokens if t.is_char)

    def char_count(self) -> int:
        return sum(1 for t in self._tokens if t.is_char)

    def layout_count(self) -> int:
        return sum(1 for t in self._tokens if t.is_layout)
