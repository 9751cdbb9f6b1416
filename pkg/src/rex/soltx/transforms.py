"""Deterministic token-level rewrites of Solidity source.

Every transform lexes its input, rewrites at token granularity, and
leaves all unrelated bytes untouched. None of them parses Solidity
properly: the rewrites the pipeline needs (comment stripping, pragma
migration, checksum normalization, payable casts, hardening edits) are
lexical, and token rewriting keeps diffs minimal between repair
attempts. The price is a handful of documented over-approximations,
most notably payable casts on ERC-20 style `.transfer` calls; a bad
cast surfaces as a compile error and is repaired by the feedback loop.
"""

from __future__ import annotations

import re

from ..errors import (
    AmbiguousFunction,
    CollisionDetected,
    ContractNotFound,
    FunctionNotFound,
    IdentifierNotFound,
    KeywordRename,
    NoTransferSite,
    UnknownTemplate,
)
from .eip55 import to_eip55
from .lexer import KEYWORDS, Token, TokenKind, lex

_IDENT_RE = re.compile(r"[A-Za-z_$][A-Za-z0-9_$]*\Z")
_SEMVER_RE = re.compile(r"\d+\.\d+\.\d+\Z")


# -- comment stripping -------------------------------------------------------

def strip_comments(source: str) -> str:
    """Remove comments and squeeze redundant blank lines.

    Line comments vanish; block comments become a single space so
    adjacent tokens cannot glue together. Runs of more than one blank
    line collapse to one. All code tokens keep their exact bytes.
    """
    stream = lex(source)
    parts: list[str] = []
    for tok in stream:
        if tok.kind == TokenKind.LINE_COMMENT:
            continue
        if tok.kind == TokenKind.BLOCK_COMMENT:
            parts.append(" ")
            continue
        parts.append(tok.text)
    return _collapse_blank_lines("".join(parts))


def _collapse_blank_lines(text: str) -> str:
    pieces = text.split("\n")
    body, tail = pieces[:-1], pieces[-1]
    out: list[str] = []
    run: list[str] = []
    for line in body:
        if line.strip() == "":
            run.append(line)
            continue
        if len(run) == 1:
            out.append(run[0])
        elif len(run) > 1:
            out.append("")
        run = []
        out.append(line)
    if len(run) == 1:
        out.append(run[0])
    elif len(run) > 1:
        out.append("")
    out.append(tail)
    return "\n".join(out)


# -- pragma migration --------------------------------------------------------

def migrate_pragma(source: str, target_version: str) -> str:
    """Pin every `pragma solidity ...;` to `target_version`.

    Inserts one at the top (after an SPDX license line, if present) when
    the source has none. Other pragma kinds (abicoder, experimental) are
    left alone.
    """
    if not _SEMVER_RE.match(target_version):
        raise ValueError(f"target version must be major.minor.patch, got {target_version!r}")
    stream = lex(source)
    tokens = list(stream.tokens)
    code = _code_indices(tokens)
    replacement = f"pragma solidity {target_version};"

    spans: list[tuple[int, int]] = []  # inclusive token-index ranges
    for pos, idx in enumerate(code):
        tok = tokens[idx]
        if tok.kind != TokenKind.KEYWORD or tok.text != "pragma":
            continue
        if pos + 1 >= len(code):
            continue
        subject = tokens[code[pos + 1]]
        if subject.text != "solidity":
            continue
        end_idx = None
        for later in code[pos + 1:]:
            if tokens[later].kind == TokenKind.PUNCT and tokens[later].text == ";":
                end_idx = later
                break
        if end_idx is None:
            continue
        spans.append((idx, end_idx))

    if not spans:
        lines = source.split("\n")
        at = 1 if lines and "SPDX-License-Identifier" in lines[0] else 0
        lines.insert(at, replacement)
        return "\n".join(lines)

    out: list[str] = []
    skip_until = -1
    span_starts = {start: end for start, end in spans}
    for i, tok in enumerate(tokens):
        if i <= skip_until:
            continue
        if i in span_starts:
            out.append(replacement)
            skip_until = span_starts[i]
            continue
        out.append(tok.text)
    return "".join(out)


# -- unchecked wrapping ------------------------------------------------------

def wrap_unchecked(source: str, function_names: list[str]) -> str:
    """Wrap the named function bodies in an `unchecked { ... }` block.

    Restores pre-0.8 wraparound arithmetic for migrated contracts.
    Bodies that already start with `unchecked` are left untouched, so
    double application is a no-op.
    """
    out = source
    for name in function_names:
        out = _wrap_one(out, name)
    return out


def _wrap_one(source: str, name: str) -> str:
    tokens = list(lex(source).tokens)
    code = _code_indices(tokens)
    matches = _function_positions(tokens, code, name)
    if not matches:
        raise FunctionNotFound(name)
    if len(matches) > 1:
        raise AmbiguousFunction(name)

    open_pos, close_pos = _function_body(tokens, code, matches[0])
    if open_pos is None:
        raise FunctionNotFound(name)

    inner_first = _next_code(tokens, open_pos + 1)
    if inner_first is not None and tokens[inner_first].text == "unchecked":
        return source

    inner = "".join(t.text for t in tokens[open_pos + 1:close_pos])
    pieces = [t.text for t in tokens[:open_pos]]
    pieces.append("{ unchecked {" + inner + "} }")
    pieces.extend(t.text for t in tokens[close_pos + 1:])
    return "".join(pieces)


# -- address checksumming ----------------------------------------------------

def normalize_addresses(source: str) -> tuple[str, int]:
    """Rewrite every address literal to its checksummed form.

    Literals inside strings and comments are not address tokens and stay
    untouched. Returns the new source and how many literals changed.
    """
    stream = lex(source)
    parts: list[str] = []
    changed = 0
    for tok in stream:
        if tok.kind == TokenKind.HEX_ADDRESS_LITERAL:
            fixed = to_eip55(tok.text)
            if fixed != tok.text:
                changed += 1
            parts.append(fixed)
        else:
            parts.append(tok.text)
    return "".join(parts), changed


# -- payable casts -----------------------------------------------------------

_VALUE_MEMBERS = ("transfer", "send", "call")


def insert_payable_casts(source: str) -> tuple[str, int]:
    """Wrap receivers of value-transferring calls in `payable(...)`.

    Covers `E.transfer(`, `E.send(` and `E.call{value:` sites. The
    receiver is the maximal identifier/member/index/call chain ending at
    the dot; already-payable receivers are skipped. This cannot
    type-check, so it deliberately over-casts (e.g. token.transfer on an
    ERC-20); the compile-and-repair loop absorbs the rare misfire.
    """
    total = 0
    current = source
    # nested sites resolve across passes; a pass that changes nothing
    # is the fixpoint, which also makes the whole transform idempotent
    for _ in range(8):
        current, changed = _payable_pass(current)
        total += changed
        if not changed:
            break
    return current, total


def _payable_pass(source: str) -> tuple[str, int]:
    tokens = list(lex(source).tokens)
    code = _code_indices(tokens)
    sites: list[tuple[int, int]] = []  # token ranges [start, end] of receivers

    for pos, idx in enumerate(code):
        tok = tokens[idx]
        if tok.kind != TokenKind.IDENTIFIER or tok.text not in _VALUE_MEMBERS:
            continue
        if pos == 0 or pos == len(code) - 1:
            continue
        dot = tokens[code[pos - 1]]
        if dot.kind != TokenKind.PUNCT or dot.text != ".":
            continue
        if not _call_shape_matches(tokens, code, pos):
            continue
        chain = _receiver_chain(tokens, code, pos - 2)
        if chain is None:
            continue
        start_pos, payable_rooted = chain
        if payable_rooted:
            continue
        sites.append((code[start_pos], code[pos - 2]))

    if not sites:
        return source, 0

    # rewrite right-to-left; drop any site nested inside an earlier one
    sites.sort(key=lambda s: s[0], reverse=True)
    applied: list[tuple[int, int]] = []
    pieces = [t.text for t in tokens]
    for start, end in sites:
        if any(a_start <= start <= a_end for a_start, a_end in applied):
            continue
        receiver = "".join(pieces[start:end + 1])
        pieces[start:end + 1] = ["payable(" + receiver + ")"] + [""] * (end - start)
        applied.append((start, end))
    return "".join(pieces), len(applied)


def _call_shape_matches(tokens: list[Token], code: list[int], pos: int) -> bool:
    member = tokens[code[pos]].text
    after = _token_at(tokens, code, pos + 1)
    if member in ("transfer", "send"):
        return after is not None and after.text == "("
    # call must carry an explicit {value: ...} option block
    if after is None or after.text != "{":
        return False
    key = _token_at(tokens, code, pos + 2)
    colon = _token_at(tokens, code, pos + 3)
    return (
        key is not None and key.text == "value"
        and colon is not None and colon.text == ":"
    )


def _receiver_chain(
    tokens: list[Token], code: list[int], pos: int
) -> tuple[int, bool] | None:
    """Walk left from the atom at code position `pos`.

    Returns (chain start position, receiver already payable) or None
    when nothing cast-able precedes the dot (operator, keyword like
    `super`, statement boundary).
    """
    if pos < 0:
        return None
    while True:
        tok = tokens[code[pos]]
        if tok.kind == TokenKind.PUNCT and tok.text in ")]":
            opener = {")": "(", "]": "["}[tok.text]
            closer = tok.text
            depth = 0
            scan = pos
            while scan >= 0:
                t = tokens[code[scan]]
                if t.kind == TokenKind.PUNCT and t.text == closer:
                    depth += 1
                elif t.kind == TokenKind.PUNCT and t.text == opener:
                    depth -= 1
                    if depth == 0:
                        break
                scan -= 1
            if scan < 0 or depth != 0:
                return None
            pos = scan
            prev = _token_at(tokens, code, pos - 1)
            if prev is not None and prev.kind == TokenKind.IDENTIFIER:
                pos -= 1
            elif prev is not None and prev.kind == TokenKind.KEYWORD:
                if prev.text == "payable":
                    return pos - 1, True
                if prev.text in ("address", "this"):
                    pos -= 1
                # other keywords never start an address expression
        elif tok.kind == TokenKind.IDENTIFIER:
            pass
        elif tok.kind == TokenKind.KEYWORD and tok.text == "this":
            pass
        else:
            return None

        prev = _token_at(tokens, code, pos - 1)
        if prev is not None and prev.kind == TokenKind.PUNCT and prev.text == ".":
            if pos - 2 < 0:
                return None
            pos -= 2
            continue
        return pos, False


# -- decoy injection ---------------------------------------------------------

def inject_decoy(
    source: str,
    decoy_id: str,
    anchor: str,
    template_source: str | None = None,
) -> str:
    """Splice a decoy function block into the `anchor` contract.

    The decoy body comes from the asset pack (or is passed in
    directly). Function names that collide with identifiers already in
    the source get a `_v<N>` suffix, so repeated injection keeps adding
    distinct copies. Original tokens are untouched: this is insertion
    only, right before the contract's closing brace.
    """
    if template_source is None:
        from ..assets import default_catalog

        catalog = default_catalog()
        if decoy_id not in catalog.decoys:
            raise UnknownTemplate(decoy_id)
        template_source = catalog.decoys[decoy_id].read_text(encoding="utf-8")

    tokens = list(lex(source).tokens)
    code = _code_indices(tokens)
    close_idx = _contract_close_brace(tokens, code, anchor)
    if close_idx is None:
        raise ContractNotFound(anchor)

    existing = {t.text for t in tokens if t.kind == TokenKind.IDENTIFIER}
    body = _freshen_template(template_source.strip("\n"), existing)
    indented = "\n".join(
        ("    " + line if line.strip() else line) for line in body.split("\n")
    )
    insertion = "\n" + indented + "\n"

    pieces = [t.text for t in tokens]
    pieces.insert(close_idx, insertion)
    return "".join(pieces)


def _freshen_template(template: str, taken: set[str]) -> str:
    tokens = list(lex(template).tokens)
    code = _code_indices(tokens)
    renames: dict[str, str] = {}
    for pos, idx in enumerate(code):
        tok = tokens[idx]
        if tok.kind != TokenKind.KEYWORD or tok.text not in ("function", "modifier", "event"):
            continue
        name_tok = _token_at(tokens, code, pos + 1)
        if name_tok is None or name_tok.kind != TokenKind.IDENTIFIER:
            continue
        name = name_tok.text
        if name in taken and name not in renames:
            n = 2
            while f"{name}_v{n}" in taken or f"{name}_v{n}" in renames.values():
                n += 1
            renames[name] = f"{name}_v{n}"
    if not renames:
        return template
    return "".join(
        renames.get(t.text, t.text) if t.kind == TokenKind.IDENTIFIER else t.text
        for t in tokens
    )


# -- rare-construct hardening ------------------------------------------------

_DEFAULT_ASM_TEMPLATE = """{
    address _asmTarget = {{receiver}};
    uint256 _asmAmount = {{amount}};
    assembly {
        // forwards all remaining gas instead of the 2300 stipend
        let _asmOk := call(gas(), _asmTarget, _asmAmount, 0, 0, 0, 0)
        if iszero(_asmOk) { revert(0, 0) }
    }
}"""


def apply_rare_construct(
    source: str,
    function_name: str,
    template_source: str | None = None,
) -> str:
    """Replace transfer/send statements in one function with raw assembly.

    Each `E.transfer(V);` or `E.send(V);` statement becomes an inline
    assembly `call` with the value forwarded and the success flag
    checked. The template hoists receiver and amount into scoped locals
    first so arbitrary expressions survive the move into Yul.
    """
    if template_source is None:
        template_source = _load_asm_template()

    tokens = list(lex(source).tokens)
    code = _code_indices(tokens)
    matches = _function_positions(tokens, code, function_name)
    if not matches:
        raise FunctionNotFound(function_name)
    if len(matches) > 1:
        raise AmbiguousFunction(function_name)
    open_pos, close_pos = _function_body(tokens, code, matches[0])
    if open_pos is None:
        raise FunctionNotFound(function_name)

    open_cpos = code.index(open_pos)
    close_cpos = code.index(close_pos)

    sites: list[tuple[int, int, str, str]] = []  # token range + receiver + amount
    for pos in range(open_cpos + 1, close_cpos):
        tok = tokens[code[pos]]
        if tok.kind != TokenKind.IDENTIFIER or tok.text not in ("transfer", "send"):
            continue
        dot = _token_at(tokens, code, pos - 1)
        if dot is None or dot.text != ".":
            continue
        paren = _token_at(tokens, code, pos + 1)
        if paren is None or paren.text != "(":
            continue
        chain = _receiver_chain(tokens, code, pos - 2)
        if chain is None:
            continue
        start_pos, _ = chain
        close_paren = _match_forward(tokens, code, pos + 1)
        if close_paren is None:
            continue
        semi = _token_at(tokens, code, close_paren + 1)
        if semi is None or semi.text != ";":
            continue
        # statement position: preceded by ; { } or nothing
        before = _token_at(tokens, code, start_pos - 1)
        if before is not None and before.text not in (";", "{", "}"):
            continue
        receiver = "".join(
            tokens[i].text for i in range(code[start_pos], code[pos - 1])
        )
        amount = "".join(
            tokens[i].text
            for i in range(code[pos + 1] + 1, code[close_paren])
        )
        sites.append((code[start_pos], code[close_paren + 1], receiver.strip(), amount.strip()))

    if not sites:
        raise NoTransferSite(function_name)

    pieces = [t.text for t in tokens]
    for start, end, receiver, amount in sorted(sites, reverse=True):
        block = template_source.replace("{{receiver}}", receiver).replace(
            "{{amount}}", amount
        )
        pieces[start:end + 1] = [block] + [""] * (end - start)
    return "".join(pieces)


def _load_asm_template() -> str:
    try:
        from ..assets import default_catalog

        catalog = default_catalog()
        path = catalog.templates.get("asm_transfer")
        if path is not None:
            return path.read_text(encoding="utf-8").strip("\n")
    except Exception:
        pass
    return _DEFAULT_ASM_TEMPLATE


# -- identifier obfuscation --------------------------------------------------

def obfuscate_pattern(source: str, rename_map: dict[str, str]) -> str:
    """Consistently rename identifiers; strings and comments stay intact."""
    tokens = list(lex(source).tokens)
    existing = {t.text for t in tokens if t.kind == TokenKind.IDENTIFIER}

    seen_values: set[str] = set()
    for old, new in rename_map.items():
        if old in KEYWORDS:
            raise KeywordRename(old)
        if new in KEYWORDS:
            raise KeywordRename(new)
        if not _IDENT_RE.match(new):
            raise CollisionDetected(new)
        if new in existing or new in seen_values:
            raise CollisionDetected(new)
        if old not in existing:
            raise IdentifierNotFound(old)
        seen_values.add(new)

    return "".join(
        rename_map.get(t.text, t.text) if t.kind == TokenKind.IDENTIFIER else t.text
        for t in tokens
    )


# -- shared token navigation -------------------------------------------------

def _code_indices(tokens: list[Token]) -> list[int]:
    return [i for i, t in enumerate(tokens) if t.is_code()]


def _token_at(tokens: list[Token], code: list[int], pos: int) -> Token | None:
    if 0 <= pos < len(code):
        return tokens[code[pos]]
    return None


def _next_code(tokens: list[Token], start: int) -> int | None:
    for i in range(start, len(tokens)):
        if tokens[i].is_code():
            return i
    return None


def _function_positions(tokens: list[Token], code: list[int], name: str) -> list[int]:
    """Code positions of `function <name>` keyword tokens."""
    found = []
    for pos, idx in enumerate(code):
        tok = tokens[idx]
        if tok.kind == TokenKind.KEYWORD and tok.text == "function":
            nxt = _token_at(tokens, code, pos + 1)
            if nxt is not None and nxt.kind == TokenKind.IDENTIFIER and nxt.text == name:
                found.append(pos)
    return found


def _function_body(
    tokens: list[Token], code: list[int], fn_pos: int
) -> tuple[int | None, int | None]:
    """Token indices of the body's opening and closing braces.

    Walks past the parameter list and any modifier/returns clauses; a
    `;` at paren depth zero means a bodyless declaration.
    """
    depth = 0
    open_cpos = None
    for pos in range(fn_pos + 1, len(code)):
        tok = tokens[code[pos]]
        if tok.kind != TokenKind.PUNCT:
            continue
        if tok.text == "(":
            depth += 1
        elif tok.text == ")":
            depth -= 1
        elif tok.text == ";" and depth == 0:
            return None, None
        elif tok.text == "{" and depth == 0:
            open_cpos = pos
            break
    if open_cpos is None:
        return None, None
    close_cpos = _match_forward(tokens, code, open_cpos, opener="{", closer="}")
    if close_cpos is None:
        return None, None
    return code[open_cpos], code[close_cpos]


def _match_forward(
    tokens: list[Token], code: list[int], open_pos: int,
    opener: str = "(", closer: str = ")",
) -> int | None:
    depth = 0
    for pos in range(open_pos, len(code)):
        tok = tokens[code[pos]]
        if tok.kind != TokenKind.PUNCT:
            continue
        if tok.text == opener:
            depth += 1
        elif tok.text == closer:
            depth -= 1
            if depth == 0:
                return pos
    return None


def _contract_close_brace(
    tokens: list[Token], code: list[int], name: str
) -> int | None:
    """Token index of the closing brace of contract `name`."""
    for pos, idx in enumerate(code):
        tok = tokens[idx]
        if tok.kind != TokenKind.KEYWORD or tok.text not in ("contract", "interface", "library"):
            continue
        nxt = _token_at(tokens, code, pos + 1)
        if nxt is None or nxt.kind != TokenKind.IDENTIFIER or nxt.text != name:
            continue
        for later in range(pos + 2, len(code)):
            if tokens[code[later]].kind == TokenKind.PUNCT and tokens[code[later]].text == "{":
                close = _match_forward(tokens, code, later, opener="{", closer="}")
                return code[close] if close is not None else None
    return None
