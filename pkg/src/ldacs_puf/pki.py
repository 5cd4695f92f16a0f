"""Certificate-based mutual authentication, for comparison with the PUF scheme.

Three parties: a certification authority, an aircraft and a tower, chain
depth 2 (CA -> entity).  The handshake is this package's own reconstruction
of a signed KEM key agreement:

    P1  aircraft -> tower   0x11 | N_A(16) | lp(cert_A)
    P2  tower -> aircraft   0x12 | N_T(16) | lp(cert_T) | lp(kem_pk) | lp(sig_T)
    P3  aircraft -> tower   0x13 | lp(ct) | lp(sig_A)
    P4  tower -> aircraft   0x14 | confirm(32)

lp(x) is a 4-byte big-endian length followed by x.  sig_T covers P1 and the
P2 bytes before it; sig_A covers P1, P2 and the P3 bytes before it.  No PUF
is involved, so device aging cannot affect it.

Signatures are Lamport one-time signatures reused across sessions and the
KEM is the correctness-only HashKem: simulation grade, not cryptography.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .encoding import EncodingError, seeded_bytes
from .primitives import HashKem, LamportSigner, SigningKey, h, kdf, mac, mac_ok

NONCE_BYTES = 16
PKI_ABORTS = frozenset({"malformed-message", "untrusted-issuer", "expired", "bad-signature", "bad-confirmation"})


class PkiAbort(Exception):
    def __init__(self, reason: str, detail: str = ""):
        if reason not in PKI_ABORTS:
            raise ValueError(f"undocumented abort reason {reason!r}")
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


def _lp(data: bytes) -> bytes:
    return len(data).to_bytes(4, "big") + data


class _Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data, self.pos = data, offset

    def fixed(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise EncodingError("truncated field")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def prefixed(self) -> bytes:
        return self.fixed(int.from_bytes(self.fixed(4), "big"))

    def end(self) -> None:
        if self.pos != len(self.data):
            raise EncodingError("trailing bytes")


@dataclass(frozen=True)
class Certificate:
    subject_id: bytes
    subject_public_key: bytes
    issuer_id: bytes
    valid_from: int
    valid_until: int            # inclusive, scenario ticks
    signature: bytes = b""

    def to_be_signed(self) -> bytes:
        return (_lp(self.subject_id) + _lp(self.subject_public_key) + _lp(self.issuer_id)
                + self.valid_from.to_bytes(8, "big") + self.valid_until.to_bytes(8, "big"))

    def encode(self) -> bytes:
        return self.to_be_signed() + _lp(self.signature)

    @classmethod
    def decode(cls, data: bytes) -> Certificate:
        r = _Reader(data)
        subject, vk, issuer = r.prefixed(), r.prefixed(), r.prefixed()
        start, end = int.from_bytes(r.fixed(8), "big"), int.from_bytes(r.fixed(8), "big")
        sig = r.prefixed()
        r.end()
        return cls(subject, vk, issuer, start, end, sig)


@dataclass(frozen=True)
class CertificateAuthority:
    ca_id: bytes
    keys: SigningKey

    @classmethod
    def create(cls, ca_id: bytes, seed: int) -> CertificateAuthority:
        return cls(ca_id, LamportSigner.keygen(seed))

    @property
    def verify_key(self) -> bytes:
        return self.keys.verify_key

    @property
    def anchor(self) -> TrustAnchor:
        return TrustAnchor(self.ca_id, self.verify_key)


@dataclass(frozen=True)
class TrustAnchor:
    ca_id: bytes
    verify_key: bytes


def ca_issue(ca: CertificateAuthority, subject_id: bytes, subject_vk: bytes,
             validity: tuple[int, int]) -> Certificate:
    start, end = validity
    if end < start:
        raise ValueError("validity interval is empty")
    unsigned = Certificate(subject_id, subject_vk, ca.ca_id, start, end)
    return Certificate(subject_id, subject_vk, ca.ca_id, start, end,
                       LamportSigner.sign(ca.keys, unsigned.to_be_signed()))


def verify_certificate(cert: Certificate, anchor: TrustAnchor, now: int) -> None:
    """Raise PkiAbort unless cert chains to the anchor and is valid at `now`."""
    if cert.issuer_id != anchor.ca_id:
        raise PkiAbort("untrusted-issuer", cert.issuer_id.decode(errors="replace"))
    if not LamportSigner.verify(anchor.verify_key, cert.to_be_signed(), cert.signature):
        raise PkiAbort("bad-signature", "certificate")
    if not cert.valid_from <= now <= cert.valid_until:
        raise PkiAbort("expired", f"valid {cert.valid_from}..{cert.valid_until}, now {now}")


@dataclass(frozen=True)
class PkiParty:
    identity: bytes
    keys: SigningKey
    certificate: Certificate

    @classmethod
    def enroll(cls, ca: CertificateAuthority, identity: bytes, seed: int,
               validity: tuple[int, int]) -> PkiParty:
        keys = LamportSigner.keygen(seed)
        return cls(identity, keys, ca_issue(ca, identity, keys.verify_key, validity))


@dataclass
class PkiResult:
    success: bool
    reason: str | None = None
    aborted_by: str | None = None
    aircraft_key: bytes | None = None
    tower_key: bytes | None = None
    frames: list[bytes] = field(default_factory=list)
    verifications_performed: int = 0

    @property
    def metrics(self) -> dict:
        return {"messages": len(self.frames), "bytes_on_air": sum(len(f) for f in self.frames),
                "verifications_performed": self.verifications_performed}


def pki_handshake(aircraft: PkiParty, tower: PkiParty, anchor: TrustAnchor, now: int = 0,
                  nonce_seed: int = 0, kem_seed: int = 0,
                  tamper: Callable[[int, bytes], bytes] | None = None) -> PkiResult:
    """Run the 4-message signed KEM handshake; `tamper(index, frame)` may rewrite frames."""
    result = PkiResult(False)
    frames = result.frames

    def send(frame: bytes) -> bytes:
        if tamper is not None:
            frame = tamper(len(frames), frame)
        frames.append(frame)
        return frame

    def check_cert(cert: Certificate) -> None:
        result.verifications_performed += 1
        verify_certificate(cert, anchor, now)

    def check_sig(vk: bytes, message: bytes, sig: bytes) -> None:
        result.verifications_performed += 1
        if not LamportSigner.verify(vk, message, sig):
            raise PkiAbort("bad-signature", "transcript")

    # Each party keeps its own copy of the frames it sent; the peer sees
    # whatever the channel delivered.
    side = "tower"
    try:
        try:
            a_p1 = b"\x11" + seeded_bytes(nonce_seed, "pki-NA", NONCE_BYTES) + _lp(aircraft.certificate.encode())
            t_p1 = send(a_p1)
            if t_p1[:1] != b"\x11":
                raise EncodingError("expected P1")
            r = _Reader(t_p1, 1 + NONCE_BYTES)
            cert_a = Certificate.decode(r.prefixed())
            r.end()
            check_cert(cert_a)

            kem_keys = HashKem.keygen(kem_seed)
            body2 = (b"\x12" + seeded_bytes(nonce_seed, "pki-NT", NONCE_BYTES)
                     + _lp(tower.certificate.encode()) + _lp(kem_keys.public_key))
            t_p2 = body2 + _lp(LamportSigner.sign(tower.keys, t_p1 + body2))
            a_p2 = send(t_p2)

            side = "aircraft"
            if a_p2[:1] != b"\x12":
                raise EncodingError("expected P2")
            r = _Reader(a_p2, 1 + NONCE_BYTES)
            cert_t = Certificate.decode(r.prefixed())
            pk = r.prefixed()
            signed_len = r.pos
            sig_t = r.prefixed()
            r.end()
            check_cert(cert_t)
            check_sig(cert_t.subject_public_key, a_p1 + a_p2[:signed_len], sig_t)

            ct, ss_a = HashKem.encapsulate(pk, kem_seed + 1)
            body3 = b"\x13" + _lp(ct)
            a_p3 = body3 + _lp(LamportSigner.sign(aircraft.keys, a_p1 + a_p2 + body3))
            t_p3 = send(a_p3)

            side = "tower"
            if t_p3[:1] != b"\x13":
                raise EncodingError("expected P3")
            r = _Reader(t_p3, 1)
            ct_t = r.prefixed()
            signed_len = r.pos
            sig_a = r.prefixed()
            r.end()
            check_sig(cert_a.subject_public_key, t_p1 + t_p2 + t_p3[:signed_len], sig_a)
            transcript_t = h(t_p1 + t_p2 + t_p3)
            key_t = kdf(HashKem.decapsulate(kem_keys.secret_key, ct_t), "pki-session", transcript_t)
            a_p4 = send(b"\x14" + mac(kdf(key_t, "confirm"), transcript_t))

            side = "aircraft"
            if a_p4[:1] != b"\x14" or len(a_p4) != 33:
                raise EncodingError("expected P4")
            transcript_a = h(a_p1 + a_p2 + a_p3)
            key_a = kdf(ss_a, "pki-session", transcript_a)
            if not mac_ok(kdf(key_a, "confirm"), transcript_a, a_p4[1:]):
                raise PkiAbort("bad-confirmation")
        except EncodingError as exc:
            raise PkiAbort("malformed-message", str(exc)) from exc
    except PkiAbort as abort:
        result.reason, result.aborted_by = abort.reason, side
        return result
    result.success, result.aircraft_key, result.tower_key = True, key_a, key_t
    return result
