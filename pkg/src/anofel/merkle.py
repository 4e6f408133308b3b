"""Merkle trees over anonymity sets (certifier keys, client commitments)."""

from __future__ import annotations

import hmac
from dataclasses import dataclass
from functools import cached_property

from .crypto import DIGEST_SIZE, MERKLE_LEAF, MERKLE_NODE, Digest, hash_bytes
from .errors import BadIndex, DecodeError, EmptySet

PAD_LEAF = hash_bytes(b"ANOFEL_PAD", MERKLE_LEAF)
# root reported for an anonymity set with no members yet
EMPTY_ROOT = hash_bytes(b"ANOFEL_EMPTY", MERKLE_NODE)

LEFT, RIGHT = 0, 1  # side of the sibling relative to the running hash


def leaf_hash(leaf: Digest) -> Digest:
    return hash_bytes(leaf, MERKLE_LEAF)


def node_hash(left: Digest, right: Digest) -> Digest:
    return hash_bytes(left + right, MERKLE_NODE)


def tree_depth(size: int) -> int:
    """Depth of the padded tree; a lone leaf still gets one level so it has a path."""
    return max(1, (max(size, 1) - 1).bit_length())


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    siblings: tuple[tuple[Digest, int], ...]

    @property
    def depth(self) -> int:
        return len(self.siblings)

    def to_bytes(self) -> bytes:
        out = bytearray(self.leaf_index.to_bytes(4, "big"))
        out.append(self.depth)
        for digest, side in self.siblings:
            out.append(side)
            out += digest
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> InclusionProof:
        if len(data) < 5:
            raise DecodeError("inclusion proof too short")
        index = int.from_bytes(data[:4], "big")
        depth = data[4]
        if len(data) != 5 + depth * (1 + DIGEST_SIZE):
            raise DecodeError("inclusion proof length does not match depth")
        siblings = []
        pos = 5
        for _ in range(depth):
            side = data[pos]
            if side not in (LEFT, RIGHT):
                raise DecodeError("bad side flag")
            siblings.append((data[pos + 1:pos + 1 + DIGEST_SIZE], side))
            pos += 1 + DIGEST_SIZE
        return cls(index, tuple(siblings))


@dataclass(frozen=True)
class MerkleTree:
    leaves: tuple[Digest, ...]

    @cached_property
    def depth(self) -> int:
        return tree_depth(len(self.leaves))

    @cached_property
    def levels(self) -> tuple[tuple[Digest, ...], ...]:
        level = [leaf_hash(x) for x in self.leaves]
        level += [PAD_LEAF] * ((1 << self.depth) - len(level))
        levels = [tuple(level)]
        while len(level) > 1:
            level = [node_hash(level[i], level[i + 1]) for i in range(0, len(level), 2)]
            levels.append(tuple(level))
        return tuple(levels)

    @property
    def root(self) -> Digest:
        return self.levels[-1][0]

    def index_of(self, leaf: Digest) -> int:
        try:
            return self.leaves.index(leaf)
        except ValueError:
            raise BadIndex("leaf not in tree") from None

    def prove(self, index: int) -> InclusionProof:
        return prove_inclusion(self, index)


def build(leaves) -> MerkleTree:
    leaves = tuple(leaves)
    if not leaves:
        raise EmptySet("cannot build a Merkle tree over an empty set")
    tree = MerkleTree(leaves)
    tree.levels  # compute eagerly; trees are immutable afterwards
    return tree


def prove_inclusion(tree: MerkleTree, index: int) -> InclusionProof:
    if not 0 <= index < len(tree.leaves):
        raise BadIndex(f"index {index} out of range for {len(tree.leaves)} leaves")
    siblings = []
    pos = index
    for level in tree.levels[:-1]:
        if pos % 2 == 0:
            siblings.append((level[pos + 1], RIGHT))
        else:
            siblings.append((level[pos - 1], LEFT))
        pos //= 2
    return InclusionProof(index, tuple(siblings))


def verify_inclusion(root: Digest, leaf: Digest, proof: InclusionProof) -> bool:
    if proof.depth == 0 or proof.leaf_index >> proof.depth:
        return False
    running = leaf_hash(leaf)
    pos = proof.leaf_index
    for sibling, side in proof.siblings:
        # the side flags must agree with the index bits
        if side != (LEFT if pos & 1 else RIGHT):
            return False
        running = node_hash(sibling, running) if side == LEFT else node_hash(running, sibling)
        pos >>= 1
    return hmac.compare_digest(running, root)


def root_of(leaves) -> Digest:
    leaves = tuple(leaves)
    return build(leaves).root if leaves else EMPTY_ROOT
