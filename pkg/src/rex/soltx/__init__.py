"""Token-level Solidity source engine: lexing, hashing, and rewrites."""

from .eip55 import is_hex_address, to_eip55
from .keccak import keccak256, keccak256_hex
from .lexer import KEYWORDS, Token, TokenKind, TokenStream, lex
from .transforms import (
    apply_rare_construct,
    inject_decoy,
    insert_payable_casts,
    migrate_pragma,
    normalize_addresses,
    obfuscate_pattern,
    strip_comments,
    wrap_unchecked,
)

__all__ = [
    "KEYWORDS",
    "Token",
    "TokenKind",
    "TokenStream",
    "apply_rare_construct",
    "inject_decoy",
    "insert_payable_casts",
    "is_hex_address",
    "keccak256",
    "keccak256_hex",
    "lex",
    "migrate_pragma",
    "normalize_addresses",
    "obfuscate_pattern",
    "strip_comments",
    "to_eip55",
    "wrap_unchecked",
]
