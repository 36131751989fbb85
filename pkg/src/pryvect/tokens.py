"""Signed, expiring authorization tokens.

A token binds a policy id (digest of the serialized DFA), the issuing
facility's key fingerprint and a trace digest committed by the user. Anyone
holding the facility's verification key can check it offline.
"""

from __future__ import annotations

import base64
import enum
import hashlib
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey, Ed25519PublicKey,
)

from .errors import MalformedEncoding
from .trace import Trace, encode

MAGIC = b"PYVT"
VERSION = 1
DIGEST_LEN = 32
SIGNATURE_LEN = 64
_BODY = struct.Struct(">4sB B32s B32s B32s QQ")
TOKEN_LEN = _BODY.size + 2 + SIGNATURE_LEN


class TokenStatus(enum.Enum):
    VALID = "Valid"
    BAD_SIGNATURE = "BadSignature"
    EXPIRED = "Expired"
    WRONG_ISSUER = "WrongIssuer"
    MALFORMED = "Malformed"


def fingerprint(vk: Ed25519PublicKey) -> bytes:
    raw = vk.public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
    return hashlib.sha256(b"pryvect-signer" + raw).digest()


@dataclass(frozen=True)
class SigningKeyPair:
    signing_key: Ed25519PrivateKey

    @classmethod
    def generate(cls, rng=None) -> "SigningKeyPair":
        if rng is None:
            return cls(Ed25519PrivateKey.generate())
        seed = bytes(rng.getrandbits(8) for _ in range(32))
        return cls(Ed25519PrivateKey.from_private_bytes(seed))

    @property
    def verification_key(self) -> Ed25519PublicKey:
        return self.signing_key.public_key()

    @property
    def fingerprint(self) -> bytes:
        return fingerprint(self.verification_key)

    def sign(self, data: bytes) -> bytes:
        return self.signing_key.sign(data)

    def private_pem(self) -> bytes:
        return self.signing_key.private_bytes(
            serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8,
            serialization.NoEncryption())

    def public_pem(self) -> bytes:
        return public_pem(self.verification_key)

    @classmethod
    def from_pem(cls, data: bytes) -> "SigningKeyPair":
        key = serialization.load_pem_private_key(data, password=None)
        if not isinstance(key, Ed25519PrivateKey):
            raise ValueError("expected an Ed25519 private key")
        return cls(key)


def public_pem(vk: Ed25519PublicKey) -> bytes:
    return vk.public_bytes(serialization.Encoding.PEM,
                           serialization.PublicFormat.SubjectPublicKeyInfo)


def load_verification_key(data: bytes) -> Ed25519PublicKey:
    key = serialization.load_pem_public_key(data)
    if not isinstance(key, Ed25519PublicKey):
        raise ValueError("expected an Ed25519 public key")
    return key


@dataclass(frozen=True)
class AuthToken:
    policy_id: bytes
    facility_id: bytes
    trace_digest: bytes
    issued_at: int
    expires_at: int
    signature: bytes = b""

    def body(self) -> bytes:
        """Canonical encoding of every field the signature covers."""
        return _BODY.pack(MAGIC, VERSION, DIGEST_LEN, self.policy_id, DIGEST_LEN,
                          self.facility_id, DIGEST_LEN, self.trace_digest,
                          self.issued_at, self.expires_at)

    def to_bytes(self) -> bytes:
        return self.body() + struct.pack(">H", len(self.signature)) + self.signature

    @classmethod
    def from_bytes(cls, data: bytes) -> "AuthToken":
        if len(data) != TOKEN_LEN:
            raise MalformedEncoding(f"token must be {TOKEN_LEN} bytes, got {len(data)}",
                                    min(len(data), TOKEN_LEN))
        magic, version, l1, policy_id, l2, facility_id, l3, digest, issued, expires = \
            _BODY.unpack_from(data, 0)
        if magic != MAGIC:
            raise MalformedEncoding("bad token magic", 0)
        if version != VERSION:
            raise MalformedEncoding(f"unsupported token version {version}", 4)
        for offset, length in ((5, l1), (38, l2), (71, l3)):
            if length != DIGEST_LEN:
                raise MalformedEncoding("bad digest length", offset)
        (sig_len,) = struct.unpack_from(">H", data, _BODY.size)
        if sig_len != SIGNATURE_LEN:
            raise MalformedEncoding("bad signature length", _BODY.size)
        if expires <= issued:
            raise MalformedEncoding("token expires before it is issued", _BODY.size - 8)
        return cls(policy_id, facility_id, digest, issued, expires, data[_BODY.size + 2:])

    def to_base64(self) -> str:
        return base64.b64encode(self.to_bytes()).decode("ascii")

    @classmethod
    def from_base64(cls, text: str) -> "AuthToken":
        try:
            raw = base64.b64decode(text.strip(), validate=True)
        except ValueError:
            raise MalformedEncoding("invalid base64", 0) from None
        return cls.from_bytes(raw)


def trace_digest(trace: Trace) -> bytes:
    return hashlib.sha256(encode(trace)).digest()


def issue(keys: SigningKeyPair, policy_id: bytes, digest: bytes,
          validity_secs: int, now: int) -> AuthToken:
    if validity_secs <= 0:
        raise ValueError("validity must be positive")
    if len(policy_id) != DIGEST_LEN or len(digest) != DIGEST_LEN:
        raise ValueError("policy id and trace digest must be 32 bytes")
    unsigned = AuthToken(policy_id, keys.fingerprint, digest, int(now), int(now) + validity_secs)
    return AuthToken(unsigned.policy_id, unsigned.facility_id, unsigned.trace_digest,
                     unsigned.issued_at, unsigned.expires_at, keys.sign(unsigned.body()))


def check(vk: Ed25519PublicKey, token: AuthToken | bytes, now: int) -> TokenStatus:
    """Diagnose a token; :func:`verify` is the boolean view of this."""
    if isinstance(token, (bytes, bytearray)):
        try:
            token = AuthToken.from_bytes(bytes(token))
        except MalformedEncoding:
            return TokenStatus.MALFORMED
    if token.facility_id != fingerprint(vk):
        return TokenStatus.WRONG_ISSUER
    try:
        vk.verify(token.signature, token.body())
    except InvalidSignature:
        return TokenStatus.BAD_SIGNATURE
    if now > token.expires_at:
        return TokenStatus.EXPIRED
    return TokenStatus.VALID


def verify(vk: Ed25519PublicKey, token: AuthToken | bytes, now: int) -> bool:
    return check(vk, token, now) is TokenStatus.VALID
