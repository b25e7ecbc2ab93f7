"""Organizations, certificates, and signing identities.

Each organization runs its own certificate authority: a root keypair
that signs member certificates for peers, orderers, and clients. A
user's network-wide id is derived from the certificate as
``local_id + "@" + org_msp_id`` and never accepted from call
arguments, so the separator is forbidden inside both components to
keep the derivation injective.

Certificates serialize to a canonical byte layout (the form that gets
signed and hashed) plus a JSON debug form for logs and the CLI.
"""

from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass, field
from enum import Enum

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .canonical import ByteReader, DecodeError, enc_bytes, enc_str

USER_ID_SEPARATOR = "@"


class IdentityError(Exception):
    """Base class for certificate and organization failures."""


class DuplicateOrg(IdentityError):
    pass


class InvalidOrgName(IdentityError):
    pass


class DuplicateLocalId(IdentityError):
    pass


class InvalidCertificate(IdentityError):
    pass


class Role(str, Enum):
    PEER = "peer"
    ORDERER = "orderer"
    CLIENT = "client"


# --- signature scheme -------------------------------------------------

class Ed25519Scheme:
    """Deterministic signatures over raw 32-byte keys.

    The rest of the package only touches this interface (generate /
    sign / verify over opaque byte strings), so a different scheme can
    be swapped in without changing certificate or transaction logic.
    """

    name = "ed25519"

    # verification is a pure function of (key, message, signature), and
    # every replica checks the same endorsements, so the answer is
    # shared; this changes wall time only, never observable behavior
    _MEMO_LIMIT = 200_000

    def __init__(self) -> None:
        self._verify_memo: dict[tuple[bytes, bytes, bytes], bool] = {}

    def generate(self, rng: random.Random | None = None) -> tuple[bytes, bytes]:
        """Return (public_key, secret_key) as raw bytes.

        Passing a seeded rng makes the keypair reproducible, which the
        simulator needs for byte-identical reruns. Leave it None for
        OS-entropy keys everywhere else.
        """
        if rng is None:
            sk = Ed25519PrivateKey.generate()
        else:
            sk = Ed25519PrivateKey.from_private_bytes(rng.randbytes(32))
        pub = sk.public_key().public_bytes_raw()
        return pub, sk.private_bytes_raw()

    def sign(self, secret_key: bytes, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(secret_key).sign(message)

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        key = (public_key, signature, message)
        hit = self._verify_memo.get(key)
        if hit is None:
            try:
                Ed25519PublicKey.from_public_bytes(public_key).verify(signature, message)
                hit = True
            except (InvalidSignature, ValueError):
                hit = False
            if len(self._verify_memo) >= self._MEMO_LIMIT:
                self._verify_memo.clear()
            self._verify_memo[key] = hit
        return hit


DEFAULT_SCHEME = Ed25519Scheme()


def sign(secret_key: bytes, message: bytes) -> bytes:
    return DEFAULT_SCHEME.sign(secret_key, message)


def verify_sig(public_key: bytes, message: bytes, signature: bytes) -> bool:
    """True iff signature is valid; never raises on malformed input."""
    try:
        return DEFAULT_SCHEME.verify(public_key, message, signature)
    except Exception:
        return False


# --- certificates ------------------------------------------------------

@dataclass(frozen=True)
class Certificate:
    """Membership credential issued and signed by an organization CA."""

    local_id: str
    org_msp_id: str
    role: Role
    public_key: bytes
    issuer_signature: bytes

    def signing_payload(self) -> bytes:
        """Canonical bytes covered by the issuer signature."""
        return (
            enc_str(self.local_id)
            + enc_str(self.org_msp_id)
            + enc_str(self.role.value)
            + enc_bytes(self.public_key)
        )

    def to_bytes(self) -> bytes:
        return self.signing_payload() + enc_bytes(self.issuer_signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Certificate":
        reader = ByteReader(data)
        cert = cls.read_from(reader)
        reader.expect_end()
        return cert

    @classmethod
    def read_from(cls, reader: ByteReader) -> "Certificate":
        local_id = reader.str_()
        org = reader.str_()
        role_raw = reader.str_()
        try:
            role = Role(role_raw)
        except ValueError as exc:
            raise DecodeError(f"unknown role {role_raw!r}") from exc
        public_key = reader.bytes_()
        signature = reader.bytes_()
        return cls(local_id, org, role, public_key, signature)

    def to_json_dict(self) -> dict:
        return {
            "local_id": self.local_id,
            "org_msp_id": self.org_msp_id,
            "role": self.role.value,
            "public_key": self.public_key.hex(),
            "issuer_signature": self.issuer_signature.hex(),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Certificate":
        return cls(
            local_id=obj["local_id"],
            org_msp_id=obj["org_msp_id"],
            role=Role(obj["role"]),
            public_key=bytes.fromhex(obj["public_key"]),
            issuer_signature=bytes.fromhex(obj["issuer_signature"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


@dataclass
class Organization:
    """A certificate authority plus the registry of identities it issued."""

    msp_id: str
    scheme: Ed25519Scheme = field(default_factory=lambda: DEFAULT_SCHEME, repr=False)
    registry: dict[str, Certificate] = field(default_factory=dict)
    root_public_key: bytes = b""
    _root_secret: bytes = field(default=b"", repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    key_rng: random.Random | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if not self.root_public_key:
            self.root_public_key, self._root_secret = self.scheme.generate(self.key_rng)

    def issue_certificate(self, local_id: str, role: Role) -> tuple[Certificate, bytes]:
        """Issue a member credential.

        Returns the certificate and the member's secret key. The secret
        is handed out exactly once; the CA does not retain it.

        Raises:
            InvalidCertificate: empty local id, or id containing the
                user-id separator.
            DuplicateLocalId: local id already issued by this org.
        """
        if not local_id:
            raise InvalidCertificate("empty local id")
        if USER_ID_SEPARATOR in local_id:
            raise InvalidCertificate(f"{USER_ID_SEPARATOR!r} not allowed in local id")
        # issuance is serialized; lookups after issuance are read-only
        with self._lock:
            if local_id in self.registry:
                raise DuplicateLocalId(f"{local_id!r} already issued by {self.msp_id}")
            public_key, secret_key = self.scheme.generate(self.key_rng)
            unsigned = Certificate(local_id, self.msp_id, role, public_key, b"")
            signature = self.scheme.sign(self._root_secret, unsigned.signing_payload())
            cert = Certificate(local_id, self.msp_id, role, public_key, signature)
            self.registry[local_id] = cert
        return cert, secret_key


class CertificateRegistry:
    """Network trust store: org MSP ids mapped to their root keys."""

    def __init__(self) -> None:
        self._orgs: dict[str, Organization] = {}

    def create_org(self, name: str, key_rng: random.Random | None = None) -> Organization:
        """Create an organization CA under a unique, non-empty MSP name.

        Raises:
            InvalidOrgName: empty name or name containing the user-id
                separator.
            DuplicateOrg: MSP name already registered.
        """
        if not name:
            raise InvalidOrgName("empty organization name")
        if USER_ID_SEPARATOR in name:
            raise InvalidOrgName(f"{USER_ID_SEPARATOR!r} not allowed in organization name")
        if name in self._orgs:
            raise DuplicateOrg(f"{name!r} already registered")
        org = Organization(name, key_rng=key_rng)
        self._orgs[name] = org
        return org

    def add_org(self, org: Organization) -> None:
        if org.msp_id in self._orgs:
            raise DuplicateOrg(f"{org.msp_id!r} already registered")
        self._orgs[org.msp_id] = org

    def get_org(self, msp_id: str) -> Organization | None:
        return self._orgs.get(msp_id)

    def orgs(self) -> list[Organization]:
        return list(self._orgs.values())

    def root_key(self, msp_id: str) -> bytes | None:
        org = self._orgs.get(msp_id)
        return org.root_public_key if org else None

    def verify_certificate(self, cert: Certificate) -> bool:
        """True iff the certificate is well formed and carries a valid
        signature from a known organization's root key. Returns False on
        any failure rather than raising."""
        try:
            if not cert.local_id or not cert.org_msp_id:
                return False
            if USER_ID_SEPARATOR in cert.local_id or USER_ID_SEPARATOR in cert.org_msp_id:
                return False
            root = self.root_key(cert.org_msp_id)
            if root is None:
                return False
            return verify_sig(root, cert.signing_payload(), cert.issuer_signature)
        except Exception:
            return False


def create_org(name: str, registry: CertificateRegistry) -> Organization:
    """Convenience wrapper: create and register an org in one step."""
    return registry.create_org(name)


def derive_user_id(cert: Certificate) -> str:
    """Derive the network-wide user id from a certificate.

    The id is the local id joined to the org MSP id with "@". Both
    components must be non-empty and separator-free, which makes the
    mapping injective: the first "@" in the result always splits it
    back into the original pair.

    Raises:
        InvalidCertificate: malformed component fields.
    """
    if not cert.local_id or not cert.org_msp_id:
        raise InvalidCertificate("certificate has empty id components")
    if USER_ID_SEPARATOR in cert.local_id or USER_ID_SEPARATOR in cert.org_msp_id:
        raise InvalidCertificate("id components must not contain the separator")
    return f"{cert.local_id}{USER_ID_SEPARATOR}{cert.org_msp_id}"
