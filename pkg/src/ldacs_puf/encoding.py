"""Bit-vector helpers shared by every module.

Bit order is big-endian throughout: bit 0 of a vector is the most significant
bit of its integer value (and of the first hex digit / first byte).
"""
from __future__ import annotations

import hashlib

import numpy as np


class EncodingError(ValueError):
    """A value does not fit the fixed-width layout it is being encoded into."""


def int_to_bits(value: int, nbits: int) -> np.ndarray:
    if value < 0 or value >> nbits:
        raise EncodingError(f"value {value:#x} does not fit in {nbits} bits")
    nbytes = (nbits + 7) // 8
    raw = np.frombuffer(value.to_bytes(nbytes, "big"), dtype=np.uint8)
    return np.unpackbits(raw)[nbytes * 8 - nbits:]


def bits_to_int(bits) -> int:
    arr = np.asarray(bits, dtype=np.uint8).ravel()
    if arr.size and arr.max() > 1:
        raise EncodingError("bit vector must contain only 0/1")
    out = 0
    for b in arr.tolist():
        out = (out << 1) | b
    return out


def bits_matrix_to_ints(bits: np.ndarray) -> list[int]:
    """Row-wise bits_to_int for an (N, L) 0/1 matrix with L a multiple of 8."""
    packed = np.packbits(np.asarray(bits, dtype=np.uint8), axis=1)
    return [int.from_bytes(row.tobytes(), "big") for row in packed]


def ints_to_bits_matrix(values, nbits: int) -> np.ndarray:
    nbytes = (nbits + 7) // 8
    buf = b"".join(int(v).to_bytes(nbytes, "big") for v in values)
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(-1, nbytes)
    return np.unpackbits(raw, axis=1)[:, nbytes * 8 - nbits:]


def to_hex(value: int, nbits: int) -> str:
    if value < 0 or value >> nbits:
        raise EncodingError(f"value {value:#x} does not fit in {nbits} bits")
    return format(value, f"0{(nbits + 3) // 4}x")


def from_hex(text: str, nbits: int) -> int:
    width = (nbits + 3) // 4
    if len(text) != width:
        raise EncodingError(f"expected {width} hex digits, got {len(text)}")
    try:
        value = int(text, 16)
    except ValueError as exc:
        raise EncodingError(f"not a hex string: {text!r}") from exc
    if value >> nbits:
        raise EncodingError(f"value {text} does not fit in {nbits} bits")
    return value


def seeded_bytes(seed: int, label: str, n: int) -> bytes:
    """Deterministic pseudo-random bytes from (seed, label), SHA-256 in counter mode.

    Used for nonces and KEM/signature randomness so that protocol runs are
    reproducible across platforms without touching numpy's generator.
    """
    out = bytearray()
    counter = 0
    tag = label.encode() + b"\x00" + int(seed).to_bytes(16, "big", signed=True)
    while len(out) < n:
        out += hashlib.sha256(tag + counter.to_bytes(4, "big")).digest()
        counter += 1
    return bytes(out[:n])
