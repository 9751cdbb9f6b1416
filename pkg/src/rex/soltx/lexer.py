"""Lossless token-level scanner for Solidity source.

The scanner never interprets the program; it only partitions the input
into spans so transforms can rewrite exact byte ranges without touching
anything else. Concatenating the token texts of any lex result
reproduces the input byte-for-byte, which is what makes the rewrites
diff-stable across repair attempts.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from ..errors import UnterminatedComment, UnterminatedString


class TokenKind(Enum):
    LINE_COMMENT = "LineComment"
    BLOCK_COMMENT = "BlockComment"
    STRING_LITERAL = "StringLiteral"
    HEX_ADDRESS_LITERAL = "HexAddressLiteral"
    NUMBER_LITERAL = "NumberLiteral"
    IDENTIFIER = "Identifier"
    KEYWORD = "Keyword"
    PUNCT = "Punct"
    WHITESPACE = "Whitespace"


@dataclass(frozen=True, slots=True)
class Token:
    kind: TokenKind
    text: str
    span: tuple[int, int]  # byte offsets into the original source

    def is_code(self) -> bool:
        return self.kind not in (
            TokenKind.WHITESPACE, TokenKind.LINE_COMMENT, TokenKind.BLOCK_COMMENT
        )


@dataclass(frozen=True, slots=True)
class TokenStream:
    tokens: tuple[Token, ...]
    source_len: int  # bytes

    def text(self) -> str:
        return "".join(t.text for t in self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


def _sized_types() -> set[str]:
    names: set[str] = set()
    for i in range(1, 33):
        names.add(f"uint{8 * i}")
        names.add(f"int{8 * i}")
        names.add(f"bytes{i}")
    return names


# Reserved words plus elementary type names; none of these may be renamed
# and none is ever treated as a plain identifier.
KEYWORDS: frozenset[str] = frozenset(
    """
    abstract address after alias anonymous apply assembly auto bool break
    byte bytes calldata case catch constant constructor continue contract
    copyof days default define delete do else emit enum ether event
    external fallback false final finney fixed for function gwei hex hours
    if immutable implements import indexed inline int interface internal
    is let library macro mapping match memory minutes modifier mutable new
    null of override partial payable pragma private promise public pure
    receive reference relocatable return returns revert sealed seconds
    sizeof static storage string struct super supports switch szabo this
    throw true try type typedef typeof ufixed uint unchecked unicode using
    var view virtual weeks wei while years
    """.split()
) | frozenset(_sized_types())

_WS = " \t\r\n\v\f"
_HEX = set("0123456789abcdefABCDEF")
_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_$")
_IDENT_CONT = _IDENT_START | set("0123456789")


def lex(source: str) -> TokenStream:
    """Tokenize `source`; raises on unterminated comments/strings."""
    tokens: list[Token] = []
    i = 0
    n = len(source)
    byte_pos = 0

    def emit(kind: TokenKind, start: int, end: int) -> None:
        nonlocal byte_pos
        text = source[start:end]
        blen = len(text.encode("utf-8"))
        tokens.append(Token(kind, text, (byte_pos, byte_pos + blen)))
        byte_pos += blen

    def byte_at(char_index: int) -> int:
        return byte_pos + len(source[i:char_index].encode("utf-8"))

    while i < n:
        ch = source[i]

        if ch in _WS:
            j = i + 1
            while j < n and source[j] in _WS:
                j += 1
            emit(TokenKind.WHITESPACE, i, j)
            i = j
            continue

        if ch == "/" and i + 1 < n and source[i + 1] == "/":
            j = i + 2
            while j < n and source[j] != "\n":
                j += 1
            emit(TokenKind.LINE_COMMENT, i, j)
            i = j
            continue

        if ch == "/" and i + 1 < n and source[i + 1] == "*":
            end = source.find("*/", i + 2)
            if end == -1:
                raise UnterminatedComment((byte_pos, byte_at(n)))
            emit(TokenKind.BLOCK_COMMENT, i, end + 2)
            i = end + 2
            continue

        if ch in "\"'":
            j = i + 1
            while True:
                if j >= n:
                    raise UnterminatedString((byte_pos, byte_at(n)))
                cj = source[j]
                if cj == "\\" and j + 1 < n:
                    j += 2
                    continue
                if cj == "\n":
                    raise UnterminatedString((byte_pos, byte_at(j)))
                if cj == ch:
                    break
                j += 1
            emit(TokenKind.STRING_LITERAL, i, j + 1)
            i = j + 1
            continue

        if ch.isdigit():
            i = _lex_number(source, i, n, emit)
            continue

        if ch in _IDENT_START:
            j = i + 1
            while j < n and source[j] in _IDENT_CONT:
                j += 1
            word = source[i:j]
            kind = TokenKind.KEYWORD if word in KEYWORDS else TokenKind.IDENTIFIER
            emit(kind, i, j)
            i = j
            continue

        emit(TokenKind.PUNCT, i, i + 1)
        i += 1

    return TokenStream(tuple(tokens), byte_pos)


def _lex_number(source: str, i: int, n: int, emit) -> int:
    if source[i] == "0" and i + 1 < n and source[i + 1] in "xX":
        j = i + 2
        digits = 0
        has_sep = False
        while j < n and (source[j] in _HEX or source[j] == "_"):
            if source[j] == "_":
                has_sep = True
            else:
                digits += 1
            j += 1
        # 0x + exactly 40 hex digits is an address; a 41st digit or a
        # separator demotes it to a plain number.
        if digits == 40 and not has_sep and j - (i + 2) == 40:
            emit(TokenKind.HEX_ADDRESS_LITERAL, i, j)
        else:
            emit(TokenKind.NUMBER_LITERAL, i, j)
        return j

    j = i
    while j < n and (source[j].isdigit() or source[j] == "_"):
        j += 1
    if j < n and source[j] == "." and j + 1 < n and source[j + 1].isdigit():
        j += 1
        while j < n and (source[j].isdigit() or source[j] == "_"):
            j += 1
    if j < n and source[j] in "eE":
        k = j + 1
        if k < n and source[k] in "+-":
            k += 1
        if k < n and source[k].isdigit():
            j = k
            while j < n and (source[j].isdigit() or source[j] == "_"):
                j += 1
    emit(TokenKind.NUMBER_LITERAL, i, j)
    return j
