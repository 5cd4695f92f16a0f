"""Challenge-response pair datasets and their text file format.

File layout::

    #crp v1 clen=32 rlen=128
    <HEX(C)> <HEX(R)>
    ...

Hex fields are fixed-width, zero padded, big-endian (bit 0 is the most
significant bit of the first hex digit).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoding import EncodingError, bits_matrix_to_ints, from_hex, ints_to_bits_matrix, to_hex
from .puf import CHALLENGE_BITS, PufDevice, evaluate_many, features, random_challenges

_HEADER = re.compile(r"^#crp v1 clen=(\d+) rlen=(\d+)$")


@dataclass
class CrpTable:
    challenges: np.ndarray  # (N, clen) uint8
    responses: np.ndarray   # (N, rlen) uint8

    def __post_init__(self):
        self.challenges = np.asarray(self.challenges, dtype=np.uint8)
        self.responses = np.asarray(self.responses, dtype=np.uint8)
        if self.challenges.ndim != 2 or self.responses.ndim != 2:
            raise EncodingError("challenges and responses must be 2-D bit matrices")
        if len(self.challenges) != len(self.responses):
            raise EncodingError("challenge and response counts differ")

    def __len__(self) -> int:
        return len(self.challenges)

    @property
    def clen(self) -> int:
        return self.challenges.shape[1]

    @property
    def rlen(self) -> int:
        return self.responses.shape[1]

    def features(self) -> np.ndarray:
        return features(self.challenges)

    def subset(self, index) -> CrpTable:
        return CrpTable(self.challenges[index], self.responses[index])

    def split(self, n_first: int) -> tuple[CrpTable, CrpTable]:
        return self.subset(slice(0, n_first)), self.subset(slice(n_first, None))

    def dumps(self) -> str:
        lines = [f"#crp v1 clen={self.clen} rlen={self.rlen}"]
        cs = bits_matrix_to_ints(_pad(self.challenges))
        rs = bits_matrix_to_ints(_pad(self.responses))
        cshift, rshift = -self.clen % 8, -self.rlen % 8
        for c, r in zip(cs, rs):
            lines.append(f"{to_hex(c >> cshift, self.clen)} {to_hex(r >> rshift, self.rlen)}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> CrpTable:
        lines = text.splitlines()
        if not lines:
            raise EncodingError("empty CRP file")
        m = _HEADER.match(lines[0].strip())
        if not m:
            raise EncodingError(f"bad CRP header: {lines[0]!r}")
        clen, rlen = int(m.group(1)), int(m.group(2))
        cvals, rvals = [], []
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise EncodingError(f"line {lineno}: expected 2 fields")
            cvals.append(from_hex(parts[0], clen))
            rvals.append(from_hex(parts[1], rlen))
        return cls(ints_to_bits_matrix(cvals, clen).reshape(-1, clen),
                   ints_to_bits_matrix(rvals, rlen).reshape(-1, rlen))

    def write(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def read(cls, path) -> CrpTable:
        return cls.loads(Path(path).read_text())


def _pad(bits: np.ndarray) -> np.ndarray:
    extra = -bits.shape[1] % 8
    if extra:
        bits = np.hstack([bits, np.zeros((len(bits), extra), dtype=np.uint8)])
    return bits


def collect_crps(device: PufDevice, n: int, rng: np.random.Generator, noisy: bool = False,
                 space_bits: int = CHALLENGE_BITS) -> CrpTable:
    """Query the device on n uniformly random challenges."""
    challenges = random_challenges(rng, n, space_bits)
    return CrpTable(challenges, evaluate_many(device, challenges, noisy=noisy, rng=rng))
