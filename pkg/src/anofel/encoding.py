"""Signed fixed-point encoding of real vectors into the Paillier plaintext space.

Non-negative values map to themselves; negative values ``v`` map to
``N - |v|``.  Anything in the upper half of ``[0, N)`` decodes as negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadParams, CorruptAggregate, EncodeOverflow

DEFAULT_SCALE_BITS = 16


@dataclass(frozen=True)
class FixedPointCodec:
    modulus: int
    scale_bits: int = DEFAULT_SCALE_BITS
    max_participants: int = 1024
    max_magnitude: float = 1e6

    def __post_init__(self):
        if self.scale_bits < 0:
            raise BadParams("scale_bits must be non-negative")
        budget = (1 << self.scale_bits) * self.max_magnitude * self.max_participants
        if not budget < self.modulus // 2:
            raise BadParams(
                f"modulus too small: {self.max_participants} summands of magnitude "
                f"{self.max_magnitude} at scale 2^{self.scale_bits} can wrap around"
            )

    @property
    def scale(self) -> int:
        return 1 << self.scale_bits

    @property
    def half(self) -> int:
        return self.modulus // 2

    def encode(self, x: float) -> int:
        if not np.isfinite(x) or abs(x) > self.max_magnitude:
            raise EncodeOverflow(f"value {x} outside codec range +-{self.max_magnitude}")
        v = int(np.rint(x * self.scale))
        if abs(v) >= self.half:
            raise EncodeOverflow(f"value {x} does not fit the plaintext space")
        return v if v >= 0 else self.modulus + v

    def decode(self, v: int, n_summands: int = 1) -> float:
        """Decode one (possibly summed) plaintext.

        ``n_summands`` is only used as a range check: a sum of that many
        encodings cannot exceed ``n_summands * max_magnitude``.
        """
        v = int(v)
        if not 0 <= v < self.modulus:
            raise CorruptAggregate("plaintext outside [0, N)")
        signed = v if v < self.half else v - self.modulus
        if abs(signed) > n_summands * self.max_magnitude * self.scale:
            raise CorruptAggregate(f"decoded magnitude exceeds budget for {n_summands} summands")
        return signed / self.scale

    def encode_vector(self, values) -> list[int]:
        x = np.asarray(values, dtype=np.float64).ravel()
        bad = np.flatnonzero(~np.isfinite(x) | (np.abs(x) > self.max_magnitude))
        if bad.size:
            raise EncodeOverflow("value outside codec range", index=int(bad[0]))
        scaled = np.rint(x * self.scale)
        m = self.modulus
        return [v if v >= 0 else m + v for v in (int(s) for s in scaled)]

    def decode_vector(self, values, n_summands: int = 1) -> np.ndarray:
        return np.array([self.decode(v, n_summands) for v in values], dtype=np.float64)
