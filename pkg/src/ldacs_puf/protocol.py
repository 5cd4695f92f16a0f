"""PUF-based aircraft/ground-station mutual authentication.

Registration (offline, once): the tower stores (ICAO, C, R, tau) and the
aircraft radio stores (tau, theta) with

    R     = PUF(C)
    tau   = first 24 bits of h(ICAO || R)
    theta = h(R)

In-flight handshake.  The message flow below is a reconstruction: only the
fact that M1 carries tau in clear, that the tower sends omega = C xor h(R),
that a KEM yields the shared key, and that MACs and nonces N1/N2 protect the
exchange are fixed; field order and MAC keying are this implementation's.

    M1  aircraft -> tower   0x01 | tau(3) | N1(16)
    M2  tower -> aircraft   0x02 | omega(4) | N2(16) | len(2) pk | mac(32)
    M3  aircraft -> tower   0x03 | len(2) ct | mac(32)
    M4  tower -> aircraft   0x04 | mac(32)

omega = C xor trunc32(h(R)).  Before key agreement the only secret both
sides share is R, so the M2/M3 MACs are keyed with K_m = KDF(R, "mac", N1, N2)
and cover every byte sent so far.  The aircraft recovers C from omega and
theta, re-reads its PUF and checks h(R') = theta before trusting the tower.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import binom

from .encoding import EncodingError, seeded_bytes
from .primitives import HashKem, h, kdf, mac, mac_ok, trunc_bits
from .puf import Challenge, PufDevice, Response, evaluate, majority_read

ICAO_BITS = 24
TAU_BITS = 24
OMEGA_BITS = 32
NONCE_BYTES = 16
MAC_BYTES = 32

TAG_M1, TAG_M2, TAG_M3, TAG_M4 = 0x01, 0x02, 0x03, 0x04

ABORT_REASONS = frozenset({
    "malformed-message",
    "unknown-aircraft",
    "ambiguous-tau",
    "tower-auth-failed",
    "mac-failed",
    "aircraft-auth-failed",
    "key-confirmation-failed",
})


class ProtocolAbort(Exception):
    def __init__(self, reason: str, detail: str = ""):
        if reason not in ABORT_REASONS:
            raise ValueError(f"undocumented abort reason {reason!r}")
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class RegistrationError(ValueError):
    pass


class MessageFormatError(EncodingError):
    pass


@dataclass(frozen=True)
class IcaoAddress:
    value: int

    def __post_init__(self):
        if not 0 <= self.value < 1 << ICAO_BITS:
            raise EncodingError(f"ICAO address must be {ICAO_BITS} bits")

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(3, "big")

    def __str__(self) -> str:
        return f"{self.value:06X}"


@dataclass(frozen=True)
class Tau:
    value: int

    def __post_init__(self):
        if not 0 <= self.value < 1 << TAU_BITS:
            raise EncodingError(f"tau must be {TAU_BITS} bits")

    def to_bytes(self) -> bytes:
        return self.value.to_bytes(3, "big")

    def __str__(self) -> str:
        return f"{self.value:06x}"


def compute_tau(icao: IcaoAddress, response_bytes: bytes, tau_bits: int = TAU_BITS) -> Tau:
    """First tau_bits of h(ICAO || R), left-aligned in the 24-bit field.

    tau_bits < 24 is a debug mode that makes collisions cheap to find.
    """
    return Tau(trunc_bits(h(icao.to_bytes() + response_bytes), tau_bits) << (TAU_BITS - tau_bits))


def omega_for(challenge: Challenge, response: Response) -> int:
    return challenge.value ^ trunc_bits(h(response.to_bytes()), OMEGA_BITS)


@dataclass(frozen=True)
class AircraftRecord:
    tau: Tau
    theta: bytes


@dataclass(frozen=True)
class TowerRecord:
    icao: IcaoAddress
    challenge: Challenge
    response: Response
    tau: Tau


@dataclass(frozen=True)
class RegistrationRecord:
    aircraft_side: AircraftRecord
    tower_side: TowerRecord


def registration_from_response(icao: IcaoAddress, challenge: Challenge, response: Response,
                               tau_bits: int = TAU_BITS) -> RegistrationRecord:
    tau = compute_tau(icao, response.to_bytes(), tau_bits)
    return RegistrationRecord(AircraftRecord(tau, h(response.to_bytes())),
                              TowerRecord(icao, challenge, response, tau))


def register(icao: IcaoAddress, device: PufDevice, challenge: Challenge,
             tau_bits: int = TAU_BITS) -> RegistrationRecord:
    return registration_from_response(icao, challenge, evaluate(device, challenge), tau_bits)


class TowerDatabase:
    """Tower-side lookup table keyed by tau."""

    def __init__(self, records=(), strict: bool = True):
        self.records: list[TowerRecord] = []
        for rec in records:
            self.add(rec, strict=strict)

    def add(self, record: TowerRecord, strict: bool = True) -> None:
        if strict and any(r.tau == record.tau for r in self.records):
            raise RegistrationError(f"ambiguous-tau: {record.tau} already registered")
        self.records.append(record)

    def lookup(self, tau: Tau) -> TowerRecord:
        hits = [r for r in self.records if r.tau == tau]
        if not hits:
            raise ProtocolAbort("unknown-aircraft", f"tau {tau}")
        if len(hits) > 1:
            raise ProtocolAbort("ambiguous-tau", f"tau {tau} matches {len(hits)} records")
        return hits[0]

    def __len__(self) -> int:
        return len(self.records)


# -- wire format ---------------------------------------------------------------

@dataclass(frozen=True)
class M1:
    tau: Tau
    n1: bytes

    def encode(self) -> bytes:
        return bytes([TAG_M1]) + self.tau.to_bytes() + self.n1


@dataclass(frozen=True)
class M2:
    omega: int
    n2: bytes
    kem_public_key: bytes
    mac: bytes

    def body(self) -> bytes:
        return (bytes([TAG_M2]) + self.omega.to_bytes(4, "big") + self.n2
                + len(self.kem_public_key).to_bytes(2, "big") + self.kem_public_key)

    def encode(self) -> bytes:
        return self.body() + self.mac


@dataclass(frozen=True)
class M3:
    kem_ciphertext: bytes
    mac: bytes

    def body(self) -> bytes:
        return bytes([TAG_M3]) + len(self.kem_ciphertext).to_bytes(2, "big") + self.kem_ciphertext

    def encode(self) -> bytes:
        return self.body() + self.mac


@dataclass(frozen=True)
class M4:
    mac: bytes

    def encode(self) -> bytes:
        return bytes([TAG_M4]) + self.mac


def _take_prefixed(frame: bytes, offset: int) -> tuple[bytes, int]:
    if len(frame) < offset + 2:
        raise MessageFormatError("truncated length prefix")
    n = int.from_bytes(frame[offset: offset + 2], "big")
    end = offset + 2 + n
    if len(frame) < end:
        raise MessageFormatError("length prefix exceeds frame")
    return frame[offset + 2: end], end


def decode(frame: bytes):
    """Parse one wire frame into M1..M4; MessageFormatError on any layout violation."""
    if not frame:
        raise MessageFormatError("empty frame")
    tag = frame[0]
    if tag == TAG_M1:
        if len(frame) != 1 + 3 + NONCE_BYTES:
            raise MessageFormatError("M1 has wrong length")
        return M1(Tau(int.from_bytes(frame[1:4], "big")), frame[4:])
    if tag == TAG_M2:
        if len(frame) < 1 + 4 + NONCE_BYTES + 2 + MAC_BYTES:
            raise MessageFormatError("M2 truncated")
        pk, end = _take_prefixed(frame, 1 + 4 + NONCE_BYTES)
        if len(frame) != end + MAC_BYTES:
            raise MessageFormatError("M2 has wrong length")
        return M2(int.from_bytes(frame[1:5], "big"), frame[5:5 + NONCE_BYTES], pk, frame[end:])
    if tag == TAG_M3:
        ct, end = _take_prefixed(frame, 1)
        if len(frame) != end + MAC_BYTES:
            raise MessageFormatError("M3 has wrong length")
        return M3(ct, frame[end:])
    if tag == TAG_M4:
        if len(frame) != 1 + MAC_BYTES:
            raise MessageFormatError("M4 has wrong length")
        return M4(frame[1:])
    raise MessageFormatError(f"unknown tag {tag:#04x}")


def _expect(frame: bytes, kind: type):
    try:
        msg = decode(frame)
    except EncodingError as exc:
        raise ProtocolAbort("malformed-message", str(exc)) from exc
    if not isinstance(msg, kind):
        raise ProtocolAbort("malformed-message", f"expected {kind.__name__}, got {type(msg).__name__}")
    return msg


# -- parties -------------------------------------------------------------------

@dataclass(frozen=True)
class SessionKey:
    key: bytes
    transcript_hash: bytes


def mac_key(response: Response, n1: bytes, n2: bytes) -> bytes:
    return kdf(response.to_bytes(), "mac", n1, n2)


def _session_key(shared_secret: bytes, transcript: bytes) -> SessionKey:
    th = h(transcript)
    return SessionKey(kdf(shared_secret, "session", th), th)


def _confirm_tag(key: SessionKey) -> bytes:
    return mac(kdf(key.key, "confirm"), key.transcript_hash + bytes([TAG_M4]))


class PufResponder:
    """Aircraft-side PUF re-read: per-bit majority over `votes` noisy reads."""

    def __init__(self, device: PufDevice, votes: int = 5, seed: int = 0):
        self.device = device
        self.votes = votes
        self.seed = seed

    def __call__(self, challenge: Challenge) -> Response:
        return majority_read(self.device, challenge, self.votes, self.seed)


def majority_failure_probability(device: PufDevice, challenge: Challenge, votes: int = 5) -> float:
    """Closed-form chance that a majority re-read differs from the noiseless R.

    Bit i flips per read with p_i = Phi(-|x_i| / sigma); the vote is wrong
    when more than votes/2 reads flip, and the handshake fails if any of the
    128 votes is wrong.
    """
    p = device.flip_probabilities(challenge)
    wrong = binom.sf(votes // 2, votes, p)
    return float(-np.expm1(np.sum(np.log1p(-wrong))))


class Aircraft:
    def __init__(self, record: AircraftRecord, responder: Callable[[Challenge], Response],
                 nonce_seed: int, kem_seed: int, kem=HashKem):
        self.record = record
        self.responder = responder
        self.nonce_seed = nonce_seed
        self.kem_seed = kem_seed
        self.kem = kem
        self._m1 = self._m2 = self._m3 = None
        self._km = None
        self.session_key: SessionKey | None = None

    def start(self) -> bytes:
        self._m1 = M1(self.record.tau, seeded_bytes(self.nonce_seed, "N1", NONCE_BYTES)).encode()
        return self._m1

    def verify_tower(self, frame: bytes) -> bytes:
        if self._m1 is None:
            raise RuntimeError("start() must run first")
        m2 = _expect(frame, M2)
        challenge = Challenge(m2.omega ^ trunc_bits(self.record.theta, OMEGA_BITS))
        response = self.responder(challenge)
        if h(response.to_bytes()) != self.record.theta:
            raise ProtocolAbort("tower-auth-failed", "PUF response does not match theta")
        n1 = self._m1[4:]
        km = mac_key(response, n1, m2.n2)
        if not mac_ok(km, self._m1 + m2.body(), m2.mac):
            raise ProtocolAbort("mac-failed", "M2 MAC")
        ct, ss = self.kem.encapsulate(m2.kem_public_key, self.kem_seed)
        body = M3(ct, b"").body()
        self._m2, self._km = frame, km
        self._m3 = M3(ct, mac(km, self._m1 + frame + body)).encode()
        self.session_key = _session_key(ss, self._m1 + frame + self._m3)
        return self._m3

    def complete(self, frame: bytes) -> SessionKey:
        if self._m3 is None:
            raise RuntimeError("verify_tower() must run first")
        m4 = _expect(frame, M4)
        if not mac_ok(kdf(self.session_key.key, "confirm"),
                      self.session_key.transcript_hash + bytes([TAG_M4]), m4.mac):
            raise ProtocolAbort("key-confirmation-failed")
        return self.session_key


class Tower:
    def __init__(self, db: TowerDatabase, nonce_seed: int, kem_seed: int, kem=HashKem):
        self.db = db
        self.nonce_seed = nonce_seed
        self.kem_seed = kem_seed
        self.kem = kem
        self._m1 = self._m2 = None
        self._record = None
        self._keys = None
        self._km = None

    def respond(self, frame: bytes) -> bytes:
        m1 = _expect(frame, M1)
        rec = self.db.lookup(m1.tau)
        n2 = seeded_bytes(self.nonce_seed, "N2", NONCE_BYTES)
        self._keys = self.kem.keygen(self.kem_seed)
        self._km = mac_key(rec.response, m1.n1, n2)
        unsigned = M2(omega_for(rec.challenge, rec.response), n2, self._keys.public_key, b"")
        self._m1, self._record = frame, rec
        self._m2 = M2(unsigned.omega, n2, self._keys.public_key, mac(self._km, frame + unsigned.body())).encode()
        return self._m2

    def finalize(self, frame: bytes) -> tuple[bytes, SessionKey]:
        if self._m2 is None:
            raise RuntimeError("respond() must run first")
        m3 = _expect(frame, M3)
        if not mac_ok(self._km, self._m1 + self._m2 + m3.body(), m3.mac):
            raise ProtocolAbort("aircraft-auth-failed", "M3 MAC")
        ss = self.kem.decapsulate(self._keys.secret_key, m3.kem_ciphertext)
        key = _session_key(ss, self._m1 + self._m2 + frame)
        return M4(_confirm_tag(key)).encode(), key

    @property
    def peer(self) -> TowerRecord | None:
        return self._record


# -- channel and driver ----------------------------------------------------------

@dataclass
class Channel:
    """In-process air interface with a passive tap and an optional tamper hook.

    `tamper(index, frame) -> frame` sees every frame in order (0 = M1).
    """
    tamper: Callable[[int, bytes], bytes] | None = None
    tick: int = 0
    frames: list[bytes] = field(default_factory=list)
    tap: list[str] = field(default_factory=list)

    def send(self, frame: bytes) -> bytes:
        if self.tamper is not None:
            frame = self.tamper(len(self.frames), frame)
        self.frames.append(frame)
        self.tap.append(f"{self.tick} {frame.hex()}")
        return frame


@dataclass
class HandshakeResult:
    success: bool
    reason: str | None = None
    aborted_by: str | None = None
    aircraft_key: SessionKey | None = None
    tower_key: SessionKey | None = None
    frames: list[bytes] = field(default_factory=list)

    @property
    def bytes_on_air(self) -> int:
        return sum(len(f) for f in self.frames)


def run_handshake(aircraft: Aircraft, tower: Tower, channel: Channel | None = None) -> HandshakeResult:
    channel = channel or Channel()
    start = len(channel.frames)
    side = "tower"
    try:
        f1 = channel.send(aircraft.start())
        f2 = channel.send(tower.respond(f1))
        side = "aircraft"
        f3 = channel.send(aircraft.verify_tower(f2))
        side = "tower"
        f4, tower_key = tower.finalize(f3)
        f4 = channel.send(f4)
        side = "aircraft"
        aircraft_key = aircraft.complete(f4)
    except ProtocolAbort as abort:
        return HandshakeResult(False, abort.reason, side, frames=channel.frames[start:])
    return HandshakeResult(True, aircraft_key=aircraft_key, tower_key=tower_key, frames=channel.frames[start:])
