import pytest

from ldacs_puf.primitives import LamportSigner
from ldacs_puf.pki import (Certificate, CertificateAuthority, PkiAbort, PkiParty, ca_issue, pki_handshake,
                           verify_certificate)


@pytest.fixture(scope="module")
def world():
    ca = CertificateAuthority.create(b"CA", 1)
    return ca, PkiParty.enroll(ca, b"3C4A5B", 2, (0, 100)), PkiParty.enroll(ca, b"TOWER", 3, (0, 100))


def test_lamport_contract():
    key = LamportSigner.keygen(4)
    sig = LamportSigner.sign(key, b"hello")
    assert len(key.verify_key) == 16384 and len(sig) == 8192
    assert LamportSigner.verify(key.verify_key, b"hello", sig)
    assert not LamportSigner.verify(key.verify_key, b"hellp", sig)
    assert not LamportSigner.verify(LamportSigner.keygen(5).verify_key, b"hello", sig)


def test_certificate_round_trip_and_binding(world):
    ca, aircraft, _ = world
    cert = aircraft.certificate
    assert Certificate.decode(cert.encode()) == cert
    verify_certificate(cert, ca.anchor, 50)
    raw = bytearray(cert.encode())
    raw[5] ^= 1                                   # inside subject_id
    with pytest.raises(PkiAbort) as info:
        verify_certificate(Certificate.decode(bytes(raw)), ca.anchor, 50)
    assert info.value.reason == "bad-signature"
    with pytest.raises(ValueError):
        ca_issue(ca, b"x", b"y", (5, 4))


def test_honest_handshake(world):
    ca, aircraft, tower = world
    for seed in range(3):
        res = pki_handshake(aircraft, tower, ca.anchor, now=seed, nonce_seed=seed, kem_seed=seed)
        assert res.success and res.aircraft_key == res.tower_key
        assert res.metrics["messages"] == 4 and res.metrics["verifications_performed"] == 4
        assert res.metrics["bytes_on_air"] > 207        # PUF handshake is 207 bytes


def test_typed_aborts(world):
    ca, aircraft, tower = world
    rogue = CertificateAuthority.create(b"ROGUE", 9)
    assert pki_handshake(PkiParty.enroll(rogue, b"X", 8, (0, 100)), tower, ca.anchor).reason == "untrusted-issuer"
    assert pki_handshake(aircraft, tower, ca.anchor, now=101).reason == "expired"
    impostor = PkiParty(b"TOWER", LamportSigner.keygen(77), tower.certificate)
    assert pki_handshake(aircraft, impostor, ca.anchor).reason == "bad-signature"


@pytest.mark.parametrize("index,offset,reason", [
    (0, 0, "malformed-message"), (0, 3, "bad-signature"), (1, 40, "bad-signature"), (1, 5, "bad-signature"),
    (1, -100, "bad-signature"), (2, 10, "bad-signature"), (3, 5, "bad-confirmation"), (2, 1, "malformed-message"),
])
def test_tampering(world, index, offset, reason):
    ca, aircraft, tower = world

    def flip(i, frame):
        if i != index:
            return frame
        b = bytearray(frame)
        b[offset] ^= 1
        return bytes(b)
    res = pki_handshake(aircraft, tower, ca.anchor, tamper=flip)
    assert not res.success and res.reason == reason
