from __future__ import annotations

import hashlib
import random

from rex.soltx.keccak import DIGEST_SIZE, keccak256, keccak256_hex

from keccak_oracle import keccak256_reference

EMPTY_DIGEST = "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"
ABC_DIGEST = "4e03657aea45a94fc7d47ba826c8d667c0d1e6e33a64a036ec44f58fa12d6c45"


def test_empty_string_vector() -> None:
    assert keccak256_hex(b"") == EMPTY_DIGEST
    assert keccak256_reference(b"").hex() == EMPTY_DIGEST


def test_abc_vector() -> None:
    assert keccak256_hex(b"abc") == ABC_DIGEST
    assert keccak256_reference(b"abc").hex() == ABC_DIGEST


def test_padding_domain_differs_from_sha3() -> None:
    assert keccak256_hex(b"") != hashlib.sha3_256(b"").hexdigest()
    assert keccak256_hex(b"abc") != hashlib.sha3_256(b"abc").hexdigest()


def test_digest_is_32_bytes() -> None:
    for data in (b"", b"x", b"y" * 1000):
        assert len(keccak256(data)) == DIGEST_SIZE


def test_matches_independent_oracle_on_random_inputs() -> None:
    rng = random.Random(0x5EED)
    for _ in range(100):
        data = rng.randbytes(rng.randint(0, 1024))
        assert keccak256(data) == keccak256_reference(data)


def test_block_boundary_lengths() -> None:
    # rate is 136 bytes; exercise the padding edge on both sides of it
    for length in (134, 135, 136, 137, 271, 272, 273):
        data = bytes(range(256))[:1] * length
        assert keccak256(data) == keccak256_reference(data)
