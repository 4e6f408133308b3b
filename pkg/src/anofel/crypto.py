"""Hashing, dataset commitments, PRF tags and Ed25519 signatures.

All hashed concatenations go through :func:`pack`, which prefixes each field
with its 4-byte big-endian length so that no two field lists share an
encoding.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .errors import DecodeError, InvalidSalt
from .rng import Rng

DIGEST_SIZE = 32
LAMBDA_BITS = 128
SALT_SIZE = LAMBDA_BITS // 8
KEY_SIZE = 32
SIGNATURE_SIZE = 64

# one-byte domain separators
COMMITMENT = 0x01
PRF_OUTER = 0x02
PRF_INNER = 0x03
MERKLE_LEAF = 0x04
MERKLE_NODE = 0x05
BOARD_ENTRY = 0x06
KEY_LEAF = 0x07
STATEMENT = 0x08
CIPHERTEXT = 0x09
PUBLIC_KEY = 0x0A
BLOCK = 0x0B

Digest = bytes


def hash_bytes(data: bytes, domain: int | None = None) -> Digest:
    """SHA-256, optionally prefixed by a one-byte domain separator."""
    h = hashlib.sha256()
    if domain is not None:
        h.update(bytes((domain,)))
    h.update(data)
    return h.digest()


def pack(*fields: bytes) -> bytes:
    out = bytearray()
    for f in fields:
        out += len(f).to_bytes(4, "big")
        out += f
    return bytes(out)


def unpack(data: bytes, count: int | None = None) -> list[bytes]:
    """Inverse of :func:`pack`; raises :class:`DecodeError` on malformed input."""
    fields = []
    pos = 0
    view = memoryview(data)
    while pos < len(data):
        if pos + 4 > len(data):
            raise DecodeError("truncated length prefix")
        n = int.from_bytes(view[pos:pos + 4], "big")
        pos += 4
        if pos + n > len(data):
            raise DecodeError("truncated field")
        fields.append(bytes(view[pos:pos + n]))
        pos += n
    if count is not None and len(fields) != count:
        raise DecodeError(f"expected {count} fields, got {len(fields)}")
    return fields


def int_bytes(value: int) -> bytes:
    """Minimal big-endian encoding of a non-negative integer."""
    value = int(value)
    if value < 0:
        raise ValueError("negative integer")
    return value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")


def bytes_int(data: bytes) -> int:
    return int.from_bytes(data, "big")


def u64(value: int) -> bytes:
    return int(value).to_bytes(8, "big")


def read_u64(data: bytes) -> int:
    if len(data) != 8:
        raise DecodeError("expected 8-byte integer")
    return int.from_bytes(data, "big")


# commitments ---------------------------------------------------------------

def new_salt(rng: Rng) -> bytes:
    return rng.bytes(SALT_SIZE)


def commit(dataset_bytes: bytes, mpk: bytes, salt: bytes) -> Digest:
    if len(salt) != SALT_SIZE:
        raise InvalidSalt(f"salt must be {SALT_SIZE} bytes, got {len(salt)}")
    return hash_bytes(pack(dataset_bytes, mpk, salt), COMMITMENT)


def verify_opening(comm: Digest, dataset_bytes: bytes, mpk: bytes, salt: bytes) -> bool:
    try:
        expected = commit(dataset_bytes, mpk, salt)
    except InvalidSalt:
        return False
    return hmac.compare_digest(expected, comm)


def prf_tag(msk: bytes, pk_sig: bytes) -> Digest:
    """Tag binding a fresh signing key to a master secret: H(msk || H(pk_sig))."""
    a = hash_bytes(pk_sig, PRF_INNER)
    return hash_bytes(pack(msk, a), PRF_OUTER)


# signatures ------------------------------------------------------------------

@dataclass(frozen=True)
class SigKeypair:
    sk: bytes
    pk: bytes

    def __repr__(self) -> str:
        return f"SigKeypair(pk={self.pk.hex()[:16]}...)"


def derive_public(sk: bytes) -> bytes:
    if len(sk) != KEY_SIZE:
        raise DecodeError(f"secret key must be {KEY_SIZE} bytes")
    key = Ed25519PrivateKey.from_private_bytes(sk)
    return key.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )


def sig_keygen(rng: Rng) -> SigKeypair:
    sk = rng.bytes(KEY_SIZE)
    return SigKeypair(sk, derive_public(sk))


# A master keypair is a signature keypair; ownership of mpk is shown by
# re-deriving it from msk.
master_keygen = sig_keygen
derive_mpk = derive_public


def sign(sk: bytes, message: bytes) -> bytes:
    if len(sk) != KEY_SIZE:
        raise DecodeError(f"secret key must be {KEY_SIZE} bytes")
    return Ed25519PrivateKey.from_private_bytes(sk).sign(message)


def verify_sig(pk: bytes, message: bytes, sig: bytes) -> bool:
    if len(pk) != KEY_SIZE:
        raise DecodeError(f"public key must be {KEY_SIZE} bytes")
    if len(sig) != SIGNATURE_SIZE:
        raise DecodeError(f"signature must be {SIGNATURE_SIZE} bytes")
    try:
        key = Ed25519PublicKey.from_public_bytes(pk)
    except ValueError as exc:
        raise DecodeError(str(exc)) from exc
    try:
        key.verify(sig, message)
    except InvalidSignature:
        return False
    return True


def check_sig(pk: bytes, message: bytes, sig: bytes) -> bool:
    """Like :func:`verify_sig` but treats undecodable input as a failed check."""
    try:
        return verify_sig(pk, message, sig)
    except DecodeError:
        return False


def key_leaf(pk: bytes) -> Digest:
    """Merkle leaf for a registered public key."""
    return hash_bytes(pk, KEY_LEAF)
