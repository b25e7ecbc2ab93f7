"""Certificate authority, signature, and user-id derivation tests."""

from __future__ import annotations

import random
import string

import pytest

from hailchain.identity import (
    Certificate,
    CertificateRegistry,
    DuplicateLocalId,
    DuplicateOrg,
    IdentityError,
    InvalidCertificate,
    Role,
    derive_user_id,
    sign,
    verify_sig,
)


@pytest.fixture
def registry() -> CertificateRegistry:
    return CertificateRegistry()


def test_create_org_and_duplicate(registry):
    registry.create_org("Org1PeerOrgMSP")
    with pytest.raises(DuplicateOrg):
        registry.create_org("Org1PeerOrgMSP")


def test_create_org_rejects_empty_name(registry):
    with pytest.raises(IdentityError):
        registry.create_org("")


def test_create_org_rejects_separator(registry):
    with pytest.raises(IdentityError):
        registry.create_org("Org@MSP")


def test_issue_certificate_verifies(registry):
    org = registry.create_org("Org1PeerOrgMSP")
    cert, secret = org.issue_certificate("alice", Role.CLIENT)
    assert cert.role is Role.CLIENT
    assert cert.org_msp_id == "Org1PeerOrgMSP"
    assert len(secret) == 32
    assert registry.verify_certificate(cert)


def test_issue_duplicate_local_id(registry):
    org = registry.create_org("Org1PeerOrgMSP")
    org.issue_certificate("alice", Role.CLIENT)
    with pytest.raises(DuplicateLocalId):
        org.issue_certificate("alice", Role.CLIENT)


def test_issue_rejects_separator_in_local_id(registry):
    org = registry.create_org("Org1PeerOrgMSP")
    with pytest.raises(InvalidCertificate):
        org.issue_certificate("al@ice", Role.CLIENT)
    with pytest.raises(InvalidCertificate):
        org.issue_certificate("", Role.CLIENT)


def test_verify_rejects_unknown_org(registry):
    other = CertificateRegistry()
    org = other.create_org("GhostOrgMSP")
    cert, _ = org.issue_certificate("bob", Role.PEER)
    assert registry.verify_certificate(cert) is False


def _mutations(cert: Certificate) -> list[Certificate]:
    """Every single-field corruption of a valid certificate."""
    out = [
        Certificate("other", cert.org_msp_id, cert.role, cert.public_key, cert.issuer_signature),
        Certificate(cert.local_id + "x", cert.org_msp_id, cert.role, cert.public_key, cert.issuer_signature),
        Certificate(cert.local_id, cert.org_msp_id + "x", cert.role, cert.public_key, cert.issuer_signature),
        Certificate(cert.local_id, "OtherOrgMSP", cert.role, cert.public_key, cert.issuer_signature),
        Certificate(cert.local_id, cert.org_msp_id, Role.PEER if cert.role is not Role.PEER else Role.CLIENT, cert.public_key, cert.issuer_signature),
    ]
    # flip one byte at a time through key and signature material
    for i in range(len(cert.public_key)):
        pk = bytearray(cert.public_key)
        pk[i] ^= 0x01
        out.append(Certificate(cert.local_id, cert.org_msp_id, cert.role, bytes(pk), cert.issuer_signature))
    for i in range(len(cert.issuer_signature)):
        sig = bytearray(cert.issuer_signature)
        sig[i] ^= 0x01
        out.append(Certificate(cert.local_id, cert.org_msp_id, cert.role, cert.public_key, bytes(sig)))
    return out


def test_single_field_mutations_all_rejected(registry):
    org = registry.create_org("Org2PeerOrgMSP")
    cert, _ = org.issue_certificate("eDUwOT", Role.CLIENT)
    assert registry.verify_certificate(cert)
    mutants = _mutations(cert)
    rejected = sum(0 if registry.verify_certificate(m) else 1 for m in mutants)
    assert rejected == len(mutants)


def test_derive_user_id_joins_local_and_org(registry):
    org = registry.create_org("Org2PeerOrgMSP")
    cert, _ = org.issue_certificate("eDUwOT", Role.CLIENT)
    assert derive_user_id(cert) == "eDUwOT@Org2PeerOrgMSP"


def test_derive_user_id_rejects_separator_components():
    bad = Certificate("a@b", "OrgMSP", Role.CLIENT, b"\x00" * 32, b"")
    with pytest.raises(InvalidCertificate):
        derive_user_id(bad)
    bad = Certificate("ab", "Org@MSP", Role.CLIENT, b"\x00" * 32, b"")
    with pytest.raises(InvalidCertificate):
        derive_user_id(bad)
    bad = Certificate("", "OrgMSP", Role.CLIENT, b"\x00" * 32, b"")
    with pytest.raises(InvalidCertificate):
        derive_user_id(bad)


def test_user_id_derivation_injective_over_random_pairs():
    """10^4 random (local, org) pairs: derivation either rejects the
    pair (separator present) or yields an id no other pair produced."""
    rng = random.Random(2024)
    alphabet = string.ascii_letters + string.digits + "@.-_"
    seen: dict[str, tuple[str, str]] = {}
    derived = 0
    for _ in range(10_000):
        local = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 12)))
        org = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 12)))
        cert = Certificate(local, org, Role.CLIENT, b"\x00" * 32, b"")
        if "@" in local or "@" in org:
            with pytest.raises(InvalidCertificate):
                derive_user_id(cert)
            continue
        uid = derive_user_id(cert)
        derived += 1
        if uid in seen:
            assert seen[uid] == (local, org), f"collision: {seen[uid]} vs {(local, org)}"
        seen[uid] = (local, org)
    assert derived > 5_000  # the alphabet makes separator-free pairs common


def test_sign_verify_roundtrip(registry):
    org = registry.create_org("Org1PeerOrgMSP")
    _cert, secret = org.issue_certificate("alice", Role.CLIENT)
    cert = org.registry["alice"]
    message = b"ride request payload"
    signature = sign(secret, message)
    assert verify_sig(cert.public_key, message, signature)
    assert not verify_sig(cert.public_key, message + b"!", signature)


def test_bit_flip_fuzz_no_false_accepts(registry):
    """1000 trials flipping one random bit in the signature or message;
    zero may verify."""
    org = registry.create_org("Org1PeerOrgMSP")
    _cert, secret = org.issue_certificate("fuzz", Role.CLIENT)
    cert = org.registry["fuzz"]
    rng = random.Random(7)
    message = b"the canonical message under test"
    signature = sign(secret, message)
    false_accepts = 0
    for trial in range(1000):
        if trial % 2 == 0:
            sig = bytearray(signature)
            bit = rng.randrange(len(sig) * 8)
            sig[bit // 8] ^= 1 << (bit % 8)
            if verify_sig(cert.public_key, message, bytes(sig)):
                false_accepts += 1
        else:
            msg = bytearray(message)
            bit = rng.randrange(len(msg) * 8)
            msg[bit // 8] ^= 1 << (bit % 8)
            if verify_sig(cert.public_key, bytes(msg), signature):
                false_accepts += 1
    assert false_accepts == 0


def test_certificate_byte_roundtrip(registry):
    org = registry.create_org("Org1PeerOrgMSP")
    cert, _ = org.issue_certificate("carol", Role.ORDERER)
    assert Certificate.from_bytes(cert.to_bytes()) == cert


def test_certificate_json_roundtrip(registry):
    org = registry.create_org("Org1PeerOrgMSP")
    cert, _ = org.issue_certificate("dave", Role.PEER)
    assert Certificate.from_json_dict(cert.to_json_dict()) == cert
    assert "public_key" in cert.to_json()


def test_secret_key_not_retained(registry):
    org = registry.create_org("Org1PeerOrgMSP")
    cert, secret = org.issue_certificate("erin", Role.CLIENT)
    # the CA's registry holds only the public certificate
    stored = org.registry["erin"]
    assert stored == cert
    assert secret not in stored.to_bytes()
    assert secret != org._root_secret
