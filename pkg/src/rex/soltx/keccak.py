"""Keccak-256 (the pre-NIST variant used by Ethereum).

This is the original Keccak with multi-rate padding domain 0x01, not
SHA3-256 (domain 0x06), so hashlib cannot substitute for it. Generation
models reliably get address checksums wrong precisely because they cannot
run this function; the pipeline supplies it instead.

Pure Python, no dependencies. Throughput is irrelevant here: inputs are
40-character address strings.
"""

from __future__ import annotations

DIGEST_SIZE = 32

_RATE_BYTES = 136  # 1600 - 2*256 bits

_ROUND_CONSTANTS = (
    0x0000000000000001, 0x0000000000008082, 0x800000000000808A,
    0x8000000080008000, 0x000000000000808B, 0x0000000080000001,
    0x8000000080008081, 0x8000000000008009, 0x000000000000008A,
    0x0000000000000088, 0x0000000080008009, 0x000000008000000A,
    0x000000008000808B, 0x800000000000008B, 0x8000000000008089,
    0x8000000000008003, 0x8000000000008002, 0x8000000000000080,
    0x000000000000800A, 0x800000008000000A, 0x8000000080008081,
    0x8000000000008080, 0x0000000080000001, 0x8000000080008008,
)

# Rotation offset for lane (x, y) at flat index x + 5*y.
_ROTATIONS = (
    0, 1, 62, 28, 27,
    36, 44, 6, 55, 20,
    3, 10, 43, 25, 39,
    41, 45, 15, 21, 8,
    18, 2, 61, 56, 14,
)

_MASK = (1 << 64) - 1

# index plumbing precomputed once so the round loop carries no modular math
_PI_TARGET = tuple(
    (y + 5 * ((2 * x + 3 * y) % 5)) for y in range(5) for x in range(5)
)
_PI_FLAT = [0] * 25
for _i, _t in enumerate(_PI_TARGET):
    _PI_FLAT[_t] = _i  # b[t] comes from state[_PI_FLAT[t]]
_PI_SOURCE = tuple(_PI_FLAT[i] for i in range(25))
_PI_ROT = tuple(_ROTATIONS[_PI_SOURCE[i]] for i in range(25))
_CHI_A = tuple((i % 5 + 1) % 5 + (i // 5) * 5 for i in range(25))
_CHI_B = tuple((i % 5 + 2) % 5 + (i // 5) * 5 for i in range(25))
_THETA_D = tuple(i % 5 for i in range(25))


def _rotl(lane: int, n: int) -> int:
    return ((lane << n) | (lane >> (64 - n))) & _MASK


def _permute(state: list[int]) -> None:
    mask = _MASK
    pi_source = _PI_SOURCE
    pi_rot = _PI_ROT
    chi_a = _CHI_A
    chi_b = _CHI_B
    theta_d = _THETA_D
    for rc in _ROUND_CONSTANTS:
        # theta
        c = [state[x] ^ state[x + 5] ^ state[x + 10] ^ state[x + 15] ^ state[x + 20]
             for x in range(5)]
        d = [
            c[(x - 1) % 5] ^ (((c[(x + 1) % 5] << 1)
                               | (c[(x + 1) % 5] >> 63)) & mask)
            for x in range(5)
        ]
        state[:] = [lane ^ d[theta_d[i]] for i, lane in enumerate(state)]
        # rho + pi
        b = [
            ((state[src] << rot) | (state[src] >> (64 - rot))) & mask if rot
            else state[src]
            for src, rot in zip(pi_source, pi_rot)
        ]
        # chi + iota
        state[:] = [
            b[i] ^ (~b[chi_a[i]] & b[chi_b[i]])
            for i in range(25)
        ]
        state[0] ^= rc


def keccak256(data: bytes) -> bytes:
    """Keccak-256 digest of `data`; always exactly 32 bytes."""
    state = [0] * 25

    padded = bytearray(data)
    pad_len = _RATE_BYTES - (len(padded) % _RATE_BYTES)
    padded.append(0x01)
    padded.extend(b"\x00" * (pad_len - 1))
    padded[-1] |= 0x80

    for block_start in range(0, len(padded), _RATE_BYTES):
        block = padded[block_start:block_start + _RATE_BYTES]
        for i in range(_RATE_BYTES // 8):
            state[i] ^= int.from_bytes(block[8 * i:8 * i + 8], "little")
        _permute(state)

    out = bytearray()
    for i in range(DIGEST_SIZE // 8):
        out += state[i].to_bytes(8, "little")
    return bytes(out)


def keccak256_hex(data: bytes) -> str:
    """Hex form of keccak256, without 0x prefix."""
    return keccak256(data).hex()
