"""Deterministic, forkable randomness.

Every party draws from its own :class:`Rng` stream.  Streams are derived by
label so a run is a pure function of its root seeds, and two parties never
share mutable generator state.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np


class Rng:
    """Counter-mode BLAKE2b generator keyed by a 32-byte seed."""

    __slots__ = ("_key", "_counter", "_buf")

    def __init__(self, seed: bytes | int | str | tuple | None = None):
        if seed is None:
            seed = os.urandom(32)
        self._key = _seed_bytes(seed)
        self._counter = 0
        self._buf = b""

    @property
    def seed(self) -> bytes:
        return self._key

    def child(self, *labels: object) -> Rng:
        """Independent stream derived from this seed and ``labels``."""
        h = hashlib.blake2b(key=self._key, digest_size=32, person=b"anofel-child")
        for label in labels:
            part = repr(label).encode()
            h.update(len(part).to_bytes(4, "big") + part)
        return Rng(h.digest())

    def bytes(self, n: int) -> bytes:
        while len(self._buf) < n:
            block = hashlib.blake2b(
                self._counter.to_bytes(8, "big"), key=self._key, digest_size=64
            ).digest()
            self._counter += 1
            self._buf += block
        out, self._buf = self._buf[:n], self._buf[n:]
        return out

    def randbits(self, k: int) -> int:
        if k <= 0:
            return 0
        value = int.from_bytes(self.bytes((k + 7) // 8), "big")
        return value >> (-k % 8)

    def randbelow(self, n: int) -> int:
        """Uniform integer in ``[0, n)`` by rejection sampling."""
        if n <= 0:
            raise ValueError("upper bound must be positive")
        k = n.bit_length()
        while True:
            v = self.randbits(k)
            if v < n:
                return v

    def randrange(self, lo: int, hi: int) -> int:
        return lo + self.randbelow(hi - lo)

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def numpy(self, *labels: object) -> np.random.Generator:
        """A numpy generator seeded from a labelled child stream."""
        seed = self.child("numpy", *labels).bytes(32)
        return np.random.default_rng(np.frombuffer(seed, dtype=np.uint32))


def _seed_bytes(seed: bytes | int | str | tuple) -> bytes:
    if isinstance(seed, bytes):
        raw = seed
    elif isinstance(seed, int):
        raw = seed.to_bytes((seed.bit_length() + 8) // 8, "big", signed=True)
    elif isinstance(seed, str):
        raw = seed.encode()
    elif isinstance(seed, tuple):
        raw = b"".join(_seed_bytes(part) for part in seed)
    else:
        raise TypeError(f"unsupported seed type {type(seed).__name__}")
    return hashlib.blake2b(raw, digest_size=32, person=b"anofel-seed").digest()
