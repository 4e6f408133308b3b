"""NP relations for registration and training, behind a proof-system interface.

Relations are pure predicates over ``(statement, witness)``.  A backend turns
a satisfying pair into a :class:`Proof` and later decides whether a proof is
acceptable for a statement.

The bundled :class:`TransparentBackend` is a verifier-oracle stand-in for a
succinct proof system: the prover seals the witness to the validator's X25519
key (ephemeral ECDH, HKDF, ChaCha20-Poly1305) with the statement digest as
associated data, and the validator opens it and re-runs the relation.
Soundness is exact; zero knowledge holds towards everyone except the holder
of the validator key.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import merkle
from .crypto import (
    DIGEST_SIZE,
    STATEMENT,
    Digest,
    bytes_int,
    check_sig,
    derive_mpk,
    hash_bytes,
    int_bytes,
    key_leaf,
    pack,
    prf_tag,
    read_u64,
    u64,
    unpack,
    verify_opening,
)
from .errors import BadBackend, DecodeError, UnsatisfiedRelation
from .merkle import InclusionProof
from .paillier import EncryptedVector, PublicKey, encrypt_vector_with
from .rng import Rng

REGISTRATION = 1
TRAINING = 2


@dataclass(frozen=True)
class Extensions:
    """Optional relation clauses for semi-malicious clients (both off by default)."""

    dataset_type: bool = False
    ciphertext_wellformed: bool = False


NO_EXTENSIONS = Extensions()


def certificate_message(dataset_bytes: bytes, mpk: bytes, dt: bytes | None = None) -> bytes:
    """What a certifier signs: D || mpk, or D || mpk || dt with dataset types on."""
    return pack(dataset_bytes, mpk) if dt is None else pack(dataset_bytes, mpk, dt)


def _opt(value: bytes | None) -> bytes:
    return b"" if value is None else b"\x01" + value


def _read_opt(data: bytes) -> bytes | None:
    return None if not data else data[1:]


def _proof_bytes(p: InclusionProof | None) -> bytes:
    return b"" if p is None else p.to_bytes()


def _read_proof(data: bytes) -> InclusionProof | None:
    return InclusionProof.from_bytes(data) if data else None


# statements and witnesses ---------------------------------------------------

@dataclass(frozen=True)
class RegStatement:
    comm: Digest
    tag: Digest
    pk_sig: bytes
    sid: int
    cert_root: Digest

    def to_bytes(self) -> bytes:
        return pack(self.comm, self.tag, self.pk_sig, u64(self.sid), self.cert_root)


@dataclass(frozen=True)
class RegWitness:
    dataset_bytes: bytes = field(repr=False)
    salt: bytes
    msk: bytes = field(repr=False)
    mpk: bytes
    cert_pk: bytes
    cert_proof: InclusionProof
    certificate: bytes
    sk_sig: bytes = field(repr=False)
    dt: bytes | None = None

    def to_bytes(self) -> bytes:
        return pack(
            self.dataset_bytes, self.salt, self.msk, self.mpk, self.cert_pk,
            self.cert_proof.to_bytes(), self.certificate, self.sk_sig, _opt(self.dt),
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> RegWitness:
        f = unpack(data, 9)
        return cls(f[0], f[1], f[2], f[3], f[4], InclusionProof.from_bytes(f[5]), f[6], f[7], _read_opt(f[8]))


@dataclass(frozen=True)
class TrainStatement:
    tag: Digest
    pk_sig: bytes
    sid: int
    client_root: Digest
    # populated only when extensions are enabled
    cert_root: Digest = b""
    ag_keys: tuple[PublicKey, ...] = ()
    ag_dts: tuple[bytes, ...] = ()
    ciphertexts: tuple[EncryptedVector, ...] = ()

    def to_bytes(self) -> bytes:
        return pack(
            self.tag, self.pk_sig, u64(self.sid), self.client_root, self.cert_root,
            pack(*(k.to_bytes() for k in self.ag_keys)),
            pack(*self.ag_dts),
            pack(*(c.to_bytes() for c in self.ciphertexts)),
        )


@dataclass(frozen=True)
class TrainWitness:
    dataset_bytes: bytes = field(repr=False)
    salt: bytes
    msk: bytes = field(repr=False)
    mpk: bytes
    comm: Digest
    comm_proof: InclusionProof
    sk_sig: bytes = field(repr=False)
    # dataset-type clause
    dt: bytes | None = None
    cert_pk: bytes = b""
    cert_proof: InclusionProof | None = None
    certificate: bytes = b""
    target_index: int = -1
    # ciphertext well-formedness clause
    plaintexts: tuple[tuple[int, ...], ...] = field(default=(), repr=False)
    randomness: tuple[tuple[int, ...], ...] = field(default=(), repr=False)

    def to_bytes(self) -> bytes:
        return pack(
            self.dataset_bytes, self.salt, self.msk, self.mpk, self.comm,
            self.comm_proof.to_bytes(), self.sk_sig, _opt(self.dt), self.cert_pk,
            _proof_bytes(self.cert_proof), self.certificate,
            int_bytes(self.target_index + 1),
            pack(*(pack(*map(int_bytes, row)) for row in self.plaintexts)),
            pack(*(pack(*map(int_bytes, row)) for row in self.randomness)),
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> TrainWitness:
        f = unpack(data, 14)
        rows = lambda blob: tuple(tuple(bytes_int(v) for v in unpack(r)) for r in unpack(blob))  # noqa: E731
        return cls(
            f[0], f[1], f[2], f[3], f[4], InclusionProof.from_bytes(f[5]), f[6],
            _read_opt(f[7]), f[8], _read_proof(f[9]), f[10], bytes_int(f[11]) - 1,
            rows(f[12]), rows(f[13]),
        )


# relations ------------------------------------------------------------------

def _owns(msk: bytes, mpk: bytes) -> bool:
    try:
        return derive_mpk(msk) == mpk
    except DecodeError:
        return False


def _certified(cert_root: Digest, cert_pk: bytes, proof: InclusionProof | None,
               message: bytes, certificate: bytes) -> bool:
    if proof is None:
        return False
    return check_sig(cert_pk, message, certificate) and merkle.verify_inclusion(
        cert_root, key_leaf(cert_pk), proof
    )


def reg_relation_check(stmt: RegStatement, wit: RegWitness, extensions: Extensions = NO_EXTENSIONS) -> bool:
    if not verify_opening(stmt.comm, wit.dataset_bytes, wit.mpk, wit.salt):
        return False
    if extensions.dataset_type and wit.dt is None:
        return False
    dt = wit.dt if extensions.dataset_type else None
    message = certificate_message(wit.dataset_bytes, wit.mpk, dt)
    if not _certified(stmt.cert_root, wit.cert_pk, wit.cert_proof, message, wit.certificate):
        return False
    if not _owns(wit.msk, wit.mpk):
        return False
    return prf_tag(wit.msk, stmt.pk_sig) == stmt.tag


def _wellformed(stmt: TrainStatement, wit: TrainWitness) -> bool:
    u = len(stmt.ciphertexts)
    if not (u == len(stmt.ag_keys) == len(wit.plaintexts) == len(wit.randomness)) or u == 0:
        return False
    nonzero = []
    for j, (pk, ct, pts, rnd) in enumerate(zip(stmt.ag_keys, stmt.ciphertexts, wit.plaintexts, wit.randomness)):
        try:
            if encrypt_vector_with(pk, pts, rnd) != ct:
                return False
        except (ValueError, ArithmeticError):
            return False
        if any(pts):
            nonzero.append(j)
    if len(nonzero) != 1:
        return False
    return wit.target_index < 0 or nonzero[0] == wit.target_index


def train_relation_check(stmt: TrainStatement, wit: TrainWitness, extensions: Extensions = NO_EXTENSIONS) -> bool:
    if not verify_opening(wit.comm, wit.dataset_bytes, wit.mpk, wit.salt):
        return False
    if not merkle.verify_inclusion(stmt.client_root, wit.comm, wit.comm_proof):
        return False
    if not _owns(wit.msk, wit.mpk):
        return False
    if prf_tag(wit.msk, stmt.pk_sig) != stmt.tag:
        return False
    if extensions.dataset_type:
        if wit.dt is None or not 0 <= wit.target_index < len(stmt.ag_dts):
            return False
        if stmt.ag_dts[wit.target_index] != wit.dt:
            return False
        message = certificate_message(wit.dataset_bytes, wit.mpk, wit.dt)
        if not _certified(stmt.cert_root, wit.cert_pk, wit.cert_proof, message, wit.certificate):
            return False
    if extensions.ciphertext_wellformed and not _wellformed(stmt, wit):
        return False
    return True


RELATIONS = {
    REGISTRATION: (reg_relation_check, RegWitness),
    TRAINING: (train_relation_check, TrainWitness),
}


def statement_digest(relation_id: int, stmt) -> Digest:
    return hash_bytes(pack(bytes((relation_id,)), stmt.to_bytes()), STATEMENT)


# proofs ---------------------------------------------------------------------

@dataclass(frozen=True)
class Proof:
    backend_id: int
    statement_digest: Digest
    payload: bytes

    def to_bytes(self) -> bytes:
        return bytes((self.backend_id,)) + self.statement_digest + pack(self.payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> Proof:
        if len(data) < 1 + DIGEST_SIZE + 4:
            raise DecodeError("proof too short")
        (payload,) = unpack(data[1 + DIGEST_SIZE:], 1)
        return cls(data[0], data[1:1 + DIGEST_SIZE], payload)


def _raw_public(key: X25519PrivateKey) -> bytes:
    return key.public_key().public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)


PAD_BLOCK = 4096


def _pad(raw: bytes) -> bytes:
    # proof size should not depend on the witness beyond a coarse bucket
    body = u64(len(raw)) + raw
    return body + bytes(-len(body) % PAD_BLOCK)


def _unpad(raw: bytes) -> bytes:
    n = read_u64(raw[:8])
    if len(raw) < 8 + n or any(raw[8 + n:]):
        raise DecodeError("bad proof padding")
    return raw[8:8 + n]


class TransparentBackend:
    backend_id = 1

    def __init__(self, public_key: bytes, private_key: bytes | None = None):
        self.public_key = public_key
        self._private_bytes = private_key
        self._private = X25519PrivateKey.from_private_bytes(private_key) if private_key else None
        if self._private is not None and _raw_public(self._private) != public_key:
            raise ValueError("private key does not match public key")

    def private_bytes(self) -> bytes | None:
        return self._private_bytes

    @classmethod
    def generate(cls, rng: Rng) -> TransparentBackend:
        sk = rng.bytes(32)
        return cls(_raw_public(X25519PrivateKey.from_private_bytes(sk)), sk)

    @property
    def can_verify(self) -> bool:
        return self._private is not None

    def prover(self) -> TransparentBackend:
        """A copy holding only the public key, for distribution to provers."""
        return TransparentBackend(self.public_key)

    def _key(self, shared: bytes, eph_pub: bytes, digest: Digest) -> ChaCha20Poly1305:
        okm = HKDF(
            algorithm=hashes.SHA256(), length=32, salt=digest,
            info=b"anofel-transparent-proof" + eph_pub + self.public_key,
        ).derive(shared)
        return ChaCha20Poly1305(okm)

    def _ad(self, relation_id: int, digest: Digest) -> bytes:
        return bytes((self.backend_id, relation_id)) + digest

    def seal(self, relation_id: int, stmt, wit, rng: Rng) -> Proof:
        digest = statement_digest(relation_id, stmt)
        eph = X25519PrivateKey.from_private_bytes(rng.bytes(32))
        eph_pub = _raw_public(eph)
        shared = eph.exchange(X25519PublicKey.from_public_bytes(self.public_key))
        # the key is fresh per proof, so a fixed nonce is safe
        box = self._key(shared, eph_pub, digest).encrypt(
            bytes(12), _pad(wit.to_bytes()), self._ad(relation_id, digest)
        )
        return Proof(self.backend_id, digest, eph_pub + box)

    def open(self, relation_id: int, proof: Proof):
        if self._private is None:
            raise BadBackend("this backend instance cannot verify (no validator key)")
        payload = proof.payload
        if len(payload) < 32 + 16:
            return None
        eph_pub, box = payload[:32], payload[32:]
        try:
            shared = self._private.exchange(X25519PublicKey.from_public_bytes(eph_pub))
            raw = self._key(shared, eph_pub, proof.statement_digest).decrypt(
                bytes(12), box, self._ad(relation_id, proof.statement_digest)
            )
        except (InvalidTag, ValueError):
            return None
        try:
            return RELATIONS[relation_id][1].from_bytes(_unpad(raw))
        except (DecodeError, ValueError, IndexError):
            return None


BACKENDS = {TransparentBackend.backend_id: TransparentBackend}


def prove(relation_id: int, stmt, wit, backend: TransparentBackend, rng: Rng | None = None,
          extensions: Extensions = NO_EXTENSIONS) -> Proof:
    if relation_id not in RELATIONS:
        raise ValueError(f"unknown relation {relation_id}")
    check, _ = RELATIONS[relation_id]
    if not check(stmt, wit, extensions):
        raise UnsatisfiedRelation(f"witness does not satisfy relation {relation_id}")
    return backend.seal(relation_id, stmt, wit, rng or Rng())


def verify(relation_id: int, stmt, proof: Proof | bytes, backend: TransparentBackend,
           extensions: Extensions = NO_EXTENSIONS) -> bool:
    if relation_id not in RELATIONS:
        raise ValueError(f"unknown relation {relation_id}")
    if isinstance(proof, (bytes, bytearray)):
        if proof and proof[0] not in BACKENDS:
            raise BadBackend(f"unknown proof backend {proof[0]}")
        try:
            proof = Proof.from_bytes(bytes(proof))
        except DecodeError:
            return False
    if proof.backend_id not in BACKENDS:
        raise BadBackend(f"unknown proof backend {proof.backend_id}")
    if proof.backend_id != backend.backend_id:
        raise BadBackend(f"proof is for backend {proof.backend_id}, verifier is {backend.backend_id}")
    if proof.statement_digest != statement_digest(relation_id, stmt):
        return False
    wit = backend.open(relation_id, proof)
    if wit is None:
        return False
    check, _ = RELATIONS[relation_id]
    return check(stmt, wit, extensions)
