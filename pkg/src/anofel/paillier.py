"""Threshold Paillier encryption (Damgard-Jurik, s = 1) with a trusted dealer.

The decryption exponent ``d`` (``d = 0 mod p'q'`` and ``d = 1 mod N``) is
Shamir-shared over ``Z_{N p' q'}``.  Member ``i`` publishes
``c^(2 * Delta * s_i)``; any ``t`` of these combine with integer Lagrange
coefficients scaled by ``Delta = n!`` into ``c^(4 Delta^2 d)``, from which the
plaintext is read off with ``L(u) = (u - 1) / N``.

Encryption uses a fixed-base randomizer ``h_N^a`` with ``h_N = (-x^2)^N`` and
a short exponent ``a`` (Damgard-Jurik-Nielsen), evaluated through a
precomputed window table so that bulk encryption of model updates stays
cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import gmpy2
from gmpy2 import mpz

from .crypto import (
    CIPHERTEXT,
    DIGEST_SIZE,
    PUBLIC_KEY,
    Digest,
    bytes_int,
    hash_bytes,
    int_bytes,
    pack,
    unpack,
)
from .errors import (
    BadParams,
    BadThreshold,
    CombineFailure,
    DecodeError,
    DuplicateShare,
    InsufficientShares,
    KeyMismatch,
    PlaintextRange,
)
from .rng import Rng

DEFAULT_KEY_BITS = 2048
MIN_KEY_BITS = 512
_WINDOW = 8


@dataclass(frozen=True)
class PublicKey:
    n: int
    h_n: int
    t: int
    members: int

    @cached_property
    def n2(self):
        return mpz(self.n) ** 2

    @cached_property
    def delta(self) -> int:
        return math.factorial(self.members)

    @cached_property
    def fingerprint(self) -> Digest:
        return hash_bytes(self.to_bytes(), PUBLIC_KEY)

    @property
    def randomizer_bits(self) -> int:
        return (self.n.bit_length() + 1) // 2

    @cached_property
    def _table(self) -> list[list]:
        n2 = self.n2
        base = mpz(self.h_n)
        rows = []
        for _ in range(-(-self.randomizer_bits // _WINDOW)):
            row = [mpz(1)]
            for _ in range((1 << _WINDOW) - 1):
                row.append(row[-1] * base % n2)
            rows.append(row)
            base = row[-1] * base % n2
        return rows

    def randomizer(self, a: int):
        """``h_N^a mod N^2`` via the window table."""
        n2 = self.n2
        acc = mpz(1)
        mask = (1 << _WINDOW) - 1
        for row in self._table:
            if not a:
                break
            acc = acc * row[a & mask] % n2
            a >>= _WINDOW
        if a:
            raise PlaintextRange("randomizer exponent too large")
        return acc

    def to_bytes(self) -> bytes:
        return pack(int_bytes(self.n), int_bytes(self.h_n), int_bytes(self.t), int_bytes(self.members))

    @classmethod
    def from_bytes(cls, data: bytes) -> PublicKey:
        n, h_n, t, members = (bytes_int(f) for f in unpack(data, 4))
        if n < 2 or not 1 <= t <= members:
            raise DecodeError("malformed public key")
        return cls(n, h_n, t, members)


@dataclass(frozen=True)
class KeyShare:
    index: int
    value: int = field(repr=False)
    public_key: PublicKey = field(repr=False)


@dataclass(frozen=True)
class ThresholdKeyMaterial:
    public_key: PublicKey
    shares: tuple[KeyShare, ...]

    @property
    def t(self) -> int:
        return self.public_key.t

    @property
    def n(self) -> int:
        return self.public_key.members


_WIDTH_STEP = 32


def _fixed_width(values) -> bytes:
    # every element padded to a common width so encodings of one key have one size
    top = max((int(v).bit_length() for v in values), default=0)
    width = max(1, -(-((top + 7) // 8) // _WIDTH_STEP)) * _WIDTH_STEP
    return width.to_bytes(4, "big") + len(values).to_bytes(4, "big") + b"".join(int(v).to_bytes(width, "big") for v in values)


def _parse_fixed_width(data: bytes) -> tuple:
    if len(data) < 8:
        raise DecodeError("truncated ciphertext encoding")
    width, count = int.from_bytes(data[:4], "big"), int.from_bytes(data[4:8], "big")
    body = data[8:]
    if width == 0 or len(body) != width * count:
        raise DecodeError("ciphertext encoding length mismatch")
    return tuple(mpz(int.from_bytes(body[i:i + width], "big")) for i in range(0, len(body), width))


@dataclass(frozen=True)
class Ciphertext:
    value: int
    fingerprint: Digest

    def to_bytes(self) -> bytes:
        return self.fingerprint + _fixed_width((self.value,))

    @classmethod
    def from_bytes(cls, data: bytes) -> Ciphertext:
        if len(data) < DIGEST_SIZE:
            raise DecodeError("ciphertext too short")
        values = _parse_fixed_width(data[DIGEST_SIZE:])
        if len(values) != 1:
            raise DecodeError("expected one ciphertext")
        return cls(values[0], data[:DIGEST_SIZE])

    @property
    def digest(self) -> Digest:
        return hash_bytes(self.to_bytes(), CIPHERTEXT)


@dataclass(frozen=True)
class EncryptedVector:
    """A vector of ciphertexts under one key; element-wise homomorphic."""

    values: tuple
    fingerprint: Digest

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> Ciphertext:
        return Ciphertext(self.values[i], self.fingerprint)

    def to_bytes(self) -> bytes:
        return self.fingerprint + _fixed_width(self.values)

    @classmethod
    def from_bytes(cls, data: bytes) -> EncryptedVector:
        if len(data) < DIGEST_SIZE:
            raise DecodeError("ciphertext vector too short")
        return cls(_parse_fixed_width(data[DIGEST_SIZE:]), data[:DIGEST_SIZE])

    @cached_property
    def digest(self) -> Digest:
        return hash_bytes(self.to_bytes(), CIPHERTEXT)


@dataclass(frozen=True)
class PartialDecryption:
    share_index: int
    value: int
    ct_digest: Digest
    fingerprint: Digest
    proof: bytes = b""  # slot for a share-correctness proof; unused


@dataclass(frozen=True)
class PartialVector:
    share_index: int
    values: tuple
    ct_digest: Digest
    fingerprint: Digest
    proof: bytes = b""

    def to_bytes(self) -> bytes:
        return pack(
            int_bytes(self.share_index),
            self.ct_digest,
            self.fingerprint,
            pack(*(int_bytes(v) for v in self.values)),
            self.proof,
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> PartialVector:
        index, ct_digest, fp, values, proof = unpack(data, 5)
        vals = tuple(mpz(bytes_int(v)) for v in unpack(values))
        return cls(bytes_int(index), vals, ct_digest, fp, proof)


# key generation -------------------------------------------------------------

def _safe_prime(bits: int, rng: Rng):
    """Prime p = 2q + 1 with q prime and the top two bits of p set."""
    while True:
        q = rng.randbits(bits - 1) | (3 << (bits - 3))
        q = gmpy2.next_prime(mpz(q))
        p = 2 * q + 1
        if p.bit_length() == bits and gmpy2.is_prime(p, 30):
            return p, q


def keygen(n: int, t: int, key_bits: int = DEFAULT_KEY_BITS, rng: Rng | None = None) -> ThresholdKeyMaterial:
    if not 1 <= t <= n:
        raise BadThreshold(f"need 1 <= t <= n, got t={t}, n={n}")
    if key_bits < MIN_KEY_BITS or key_bits % 2:
        raise BadParams(f"key_bits must be an even number >= {MIN_KEY_BITS}")
    rng = rng or Rng()
    half = key_bits // 2
    while True:
        p, p1 = _safe_prime(half, rng)
        q, q1 = _safe_prime(half, rng)
        if p != q and (p * q).bit_length() == key_bits:
            break
    N = p * q
    m = p1 * q1
    nm = N * m
    d = m * gmpy2.invert(m, N)  # d = 0 mod m, d = 1 mod N
    coeffs = [d] + [mpz(rng.randbelow(int(nm))) for _ in range(t - 1)]
    shares = []
    for i in range(1, n + 1):
        s = mpz(0)
        for c in reversed(coeffs):
            s = (s * i + c) % nm
        shares.append(s)
    while True:
        x = mpz(rng.randrange(2, int(N)))
        if gmpy2.gcd(x, N) == 1:
            break
    h_n = gmpy2.powmod((-x * x) % N, N, N * N)
    pk = PublicKey(int(N), int(h_n), t, n)
    return ThresholdKeyMaterial(pk, tuple(KeyShare(i + 1, int(s), pk) for i, s in enumerate(shares)))


# encryption -----------------------------------------------------------------

def draw_randomness(pk: PublicKey, count: int, rng: Rng) -> list[int]:
    bits = pk.randomizer_bits
    return [rng.randbits(bits) for _ in range(count)]


def encrypt_with(pk: PublicKey, m: int, a: int) -> Ciphertext:
    """Deterministic encryption of ``m`` with randomizer exponent ``a``."""
    if not 0 <= m < pk.n:
        raise PlaintextRange(f"plaintext outside [0, N)")
    # (1 + N)^m = 1 + m N  (mod N^2)
    value = (1 + m * mpz(pk.n)) * pk.randomizer(a) % pk.n2
    return Ciphertext(value, pk.fingerprint)


def encrypt(pk: PublicKey, m: int, rng: Rng | None = None) -> Ciphertext:
    rng = rng or Rng()
    return encrypt_with(pk, m, rng.randbits(pk.randomizer_bits))


def encrypt_vector_with(pk: PublicKey, plaintexts: Sequence[int], exponents: Sequence[int]) -> EncryptedVector:
    if len(plaintexts) != len(exponents):
        raise ValueError("one randomizer exponent per plaintext")
    N = mpz(pk.n)
    n2 = pk.n2
    randomizer = pk.randomizer
    out = []
    for m, a in zip(plaintexts, exponents):
        if not 0 <= m < N:
            raise PlaintextRange("plaintext outside [0, N)")
        out.append((1 + m * N) * randomizer(a) % n2)
    return EncryptedVector(tuple(out), pk.fingerprint)


def encrypt_vector(pk: PublicKey, plaintexts: Sequence[int], rng: Rng | None = None) -> EncryptedVector:
    rng = rng or Rng()
    return encrypt_vector_with(pk, plaintexts, draw_randomness(pk, len(plaintexts), rng))


def add(pk: PublicKey, ct1: Ciphertext, ct2: Ciphertext) -> Ciphertext:
    if not ct1.fingerprint == ct2.fingerprint == pk.fingerprint:
        raise KeyMismatch("ciphertexts under different keys")
    return Ciphertext(mpz(ct1.value) * ct2.value % pk.n2, pk.fingerprint)


def add_vectors(pk: PublicKey, vectors: Sequence[EncryptedVector]) -> EncryptedVector:
    """Element-wise homomorphic sum of equally long ciphertext vectors."""
    if not vectors:
        raise ValueError("nothing to add")
    length = len(vectors[0])
    for v in vectors:
        if v.fingerprint != pk.fingerprint:
            raise KeyMismatch("ciphertext vector under a different key")
        if len(v) != length:
            raise ValueError("ciphertext vectors differ in length")
    n2 = pk.n2
    acc = [mpz(x) for x in vectors[0].values]
    for v in vectors[1:]:
        acc = [a * b % n2 for a, b in zip(acc, v.values)]
    return EncryptedVector(tuple(acc), pk.fingerprint)


# threshold decryption -------------------------------------------------------

def partial_decrypt(share: KeyShare, ct: Ciphertext) -> PartialDecryption:
    pk = share.public_key
    if ct.fingerprint != pk.fingerprint:
        raise KeyMismatch("ciphertext not under this share's key")
    value = gmpy2.powmod(mpz(ct.value), 2 * pk.delta * share.value, pk.n2)
    return PartialDecryption(share.index, value, ct.digest, pk.fingerprint)


def partial_decrypt_vector(share: KeyShare, vec: EncryptedVector) -> PartialVector:
    pk = share.public_key
    if vec.fingerprint != pk.fingerprint:
        raise KeyMismatch("ciphertext vector not under this share's key")
    exponent = mpz(2 * pk.delta * share.value)
    n2 = pk.n2
    values = tuple(gmpy2.powmod(mpz(c), exponent, n2) for c in vec.values)
    return PartialVector(share.index, values, vec.digest, pk.fingerprint)


def _select(pk: PublicKey, partials) -> list:
    if any(p.fingerprint != pk.fingerprint for p in partials):
        raise KeyMismatch("partial decryption under a different key")
    indices = [p.share_index for p in partials]
    if len(set(indices)) != len(indices):
        raise DuplicateShare(f"duplicate share indices in {sorted(indices)}")
    if len(partials) < pk.t:
        raise InsufficientShares(f"need {pk.t} partial decryptions, got {len(partials)}")
    if len({p.ct_digest for p in partials}) != 1:
        raise CombineFailure("partial decryptions are for different ciphertexts")
    if any(not 1 <= i <= pk.members for i in indices):
        raise CombineFailure("share index outside the committee")
    return sorted(partials, key=lambda p: p.share_index)[: pk.t]


def _lagrange(delta: int, indices: Sequence[int], i: int) -> int:
    num, den = delta, 1
    for j in indices:
        if j != i:
            num *= j
            den *= j - i
    lam, rem = divmod(num, den)
    assert rem == 0
    return lam


def _combine_values(pk: PublicKey, columns: list[tuple], indices: list[int]) -> list[int]:
    N = mpz(pk.n)
    n2 = pk.n2
    exps = [2 * _lagrange(pk.delta, indices, i) for i in indices]
    scale = gmpy2.invert(mpz(4 * pk.delta * pk.delta), N)
    out = []
    for column in columns:
        acc = mpz(1)
        for c, e in zip(column, exps):
            acc = acc * gmpy2.powmod(c, e, n2) % n2
        u, rem = divmod(acc - 1, N)
        if rem:
            raise CombineFailure("partials do not combine to a valid plaintext")
        out.append(int(u * scale % N))
    return out


def combine(pk: PublicKey, partials: Sequence[PartialDecryption]) -> int:
    chosen = _select(pk, list(partials))
    indices = [p.share_index for p in chosen]
    return _combine_values(pk, [tuple(p.value for p in chosen)], indices)[0]


def combine_vector(pk: PublicKey, partials: Sequence[PartialVector]) -> list[int]:
    chosen = _select(pk, list(partials))
    length = len(chosen[0].values)
    if any(len(p.values) != length for p in chosen):
        raise CombineFailure("partial vectors differ in length")
    indices = [p.share_index for p in chosen]
    return _combine_values(pk, list(zip(*(p.values for p in chosen))), indices)


def decrypt_with_shares(shares: Sequence[KeyShare], ct: Ciphertext) -> int:
    """Convenience: partially decrypt with each share and combine."""
    pk = shares[0].public_key
    return combine(pk, [partial_decrypt(s, ct) for s in shares])
