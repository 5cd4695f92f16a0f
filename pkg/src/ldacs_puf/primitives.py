"""Hash, KDF, MAC, KEM and signature primitives used by both protocols.

SIMULATION GRADE.  h is SHA-256 and the MAC is HMAC-SHA-256, both real; the
KEM and the signature scheme are toy constructions that satisfy their
correctness contracts and nothing more:

* `HashKem` is not secure: anyone holding the public key can decapsulate.
* `LamportSigner` is a one-time scheme reused across messages here, which a
  real deployment must never do.

They exist so protocol logic, transcript binding and message sizes can be
exercised deterministically.
"""
from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from .encoding import seeded_bytes

DIGEST_BYTES = 32


def h(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def trunc_bits(digest: bytes, nbits: int) -> int:
    """First nbits of a digest as an integer (big-endian)."""
    value = int.from_bytes(digest[: (nbits + 7) // 8], "big")
    return value >> (-nbits % 8)


def mac(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


def mac_ok(key: bytes, data: bytes, tag: bytes) -> bool:
    return hmac.compare_digest(mac(key, data), tag)


def kdf(secret: bytes, label: str, *parts: bytes) -> bytes:
    """HMAC-based derivation; parts are length-prefixed so they cannot run together."""
    body = label.encode()
    for part in parts:
        body += len(part).to_bytes(2, "big") + part
    return mac(secret, body)


@dataclass(frozen=True)
class KemKeyPair:
    public_key: bytes
    secret_key: bytes


class HashKem:
    """Correctness-only KEM built from SHA-256 (see module docstring)."""

    name = "hash-kem-sim"

    @staticmethod
    def keygen(seed: int) -> KemKeyPair:
        sk = seeded_bytes(seed, "kem-sk", DIGEST_BYTES)
        return KemKeyPair(public_key=h(b"kem-pk" + sk), secret_key=sk)

    @staticmethod
    def encapsulate(public_key: bytes, seed: int) -> tuple[bytes, bytes]:
        r = seeded_bytes(seed, "kem-r", DIGEST_BYTES)
        ct = bytes(a ^ b for a, b in zip(r, h(b"kem-mask" + public_key)))
        return ct, h(b"kem-ss" + r + public_key)

    @staticmethod
    def decapsulate(secret_key: bytes, ciphertext: bytes) -> bytes:
        pk = h(b"kem-pk" + secret_key)
        r = bytes(a ^ b for a, b in zip(ciphertext, h(b"kem-mask" + pk)))
        return h(b"kem-ss" + r + pk)


@dataclass(frozen=True)
class SigningKey:
    secret: tuple[tuple[bytes, bytes], ...]
    verify_key: bytes


class LamportSigner:
    """Lamport signatures over SHA-256 of the message.

    Verify key: 512 hashes (16 KiB); signature: 256 preimages (8 KiB).
    """

    name = "lamport-sha256-sim"
    BITS = 256

    @classmethod
    def keygen(cls, seed: int) -> SigningKey:
        material = seeded_bytes(seed, "lamport-sk", 2 * cls.BITS * DIGEST_BYTES)
        pairs = tuple(
            (material[64 * i: 64 * i + 32], material[64 * i + 32: 64 * i + 64]) for i in range(cls.BITS)
        )
        vk = b"".join(h(a) + h(b) for a, b in pairs)
        return SigningKey(secret=pairs, verify_key=vk)

    @classmethod
    def sign(cls, key: SigningKey, message: bytes) -> bytes:
        bits = int.from_bytes(h(message), "big")
        return b"".join(key.secret[i][(bits >> (cls.BITS - 1 - i)) & 1] for i in range(cls.BITS))

    @classmethod
    def verify(cls, verify_key: bytes, message: bytes, signature: bytes) -> bool:
        if len(signature) != cls.BITS * DIGEST_BYTES or len(verify_key) != 2 * cls.BITS * DIGEST_BYTES:
            return False
        bits = int.from_bytes(h(message), "big")
        for i in range(cls.BITS):
            bit = (bits >> (cls.BITS - 1 - i)) & 1
            expected = verify_key[(2 * i + bit) * DIGEST_BYTES: (2 * i + bit + 1) * DIGEST_BYTES]
            if h(signature[i * DIGEST_BYTES: (i + 1) * DIGEST_BYTES]) != expected:
                return False
        return True
