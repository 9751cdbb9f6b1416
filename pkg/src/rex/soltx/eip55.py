"""Mixed-case address checksum encoding (EIP-55)."""

from __future__ import annotations

import string

from ..errors import NotAnAddress
from .keccak import keccak256

_HEX_DIGITS = set(string.hexdigits)


def is_hex_address(value: str) -> bool:
    """True if `value` is 40 hex digits, with or without a 0x prefix."""
    body = value[2:] if value[:2].lower() == "0x" else value
    return len(body) == 40 and all(ch in _HEX_DIGITS for ch in body)


def to_eip55(address: str) -> str:
    """Checksummed form of a 40-hex-digit address; always 0x-prefixed.

    The i-th alphabetic character is uppercased iff the i-th nibble of
    keccak256(lowercase-hex-body) is >= 8. Raises NotAnAddress for
    anything that is not exactly 40 hex digits after the optional prefix.
    """
    if not is_hex_address(address):
        raise NotAnAddress(address)
    body = (address[2:] if address[:2].lower() == "0x" else address).lower()
    digest_hex = keccak256(body.encode("ascii")).hex()
    out = []
    for ch, nibble in zip(body, digest_hex):
        out.append(ch.upper() if ch.isalpha() and int(nibble, 16) >= 8 else ch)
    return "0x" + "".join(out)
