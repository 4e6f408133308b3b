import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anofel import crypto
from anofel.crypto import (
    commit,
    derive_mpk,
    hash_bytes,
    master_keygen,
    pack,
    prf_tag,
    sig_keygen,
    sign,
    unpack,
    verify_opening,
    verify_sig,
)
from anofel.errors import DecodeError, InvalidSalt
from anofel.rng import Rng


def test_hash_is_deterministic_and_32_bytes():
    assert hash_bytes(b"abc") == hash_bytes(b"abc")
    assert len(hash_bytes(b"")) == 32


def test_hash_distinguishes_trailing_zero_byte():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        x = rng.bytes(int(rng.integers(0, 64)))
        assert hash_bytes(x) != hash_bytes(x + b"\x00")


def test_domain_prefix_separates_uses():
    assert hash_bytes(b"x", crypto.COMMITMENT) != hash_bytes(b"x", crypto.MERKLE_LEAF)
    assert hash_bytes(b"x") != hash_bytes(b"x", crypto.COMMITMENT)


@given(st.lists(st.binary(max_size=40), max_size=6))
def test_pack_roundtrip(fields):
    assert unpack(pack(*fields)) == fields


def test_pack_is_unambiguous():
    assert pack(b"ab", b"c") != pack(b"a", b"bc")


def test_unpack_rejects_truncation():
    raw = pack(b"hello", b"world")
    with pytest.raises(DecodeError):
        unpack(raw[:-1])


def test_commitment_roundtrip_and_salt_sensitivity():
    mk = master_keygen(Rng("m"))
    data = b"dataset bytes"
    salt = bytes(16)
    c = commit(data, mk.pk, salt)
    assert c == commit(data, mk.pk, salt)
    assert verify_opening(c, data, mk.pk, salt)
    rng = Rng("salts")
    seen = set()
    for i in range(1000):
        s1, s2 = crypto.new_salt(rng), crypto.new_salt(rng)
        assert s1 != s2
        assert commit(data, mk.pk, s1) != commit(data, mk.pk, s2)
        seen.add(commit(data, mk.pk, s1))
    assert len(seen) == 1000


def test_opening_rejects_every_flipped_dataset_byte():
    mk = master_keygen(Rng("m"))
    data = bytes(range(64))
    salt = b"s" * 16
    c = commit(data, mk.pk, salt)
    for i in range(64):
        bad = bytearray(data)
        bad[i] ^= 0x01
        assert not verify_opening(c, bytes(bad), mk.pk, salt)


def test_opening_bound_to_mpk():
    a, b = master_keygen(Rng("a")), master_keygen(Rng("b"))
    c = commit(b"d", a.pk, b"s" * 16)
    assert not verify_opening(c, b"d", b.pk, b"s" * 16)


def test_salt_length_enforced():
    with pytest.raises(InvalidSalt):
        commit(b"d", master_keygen(Rng("a")).pk, b"short")


def test_commitment_hiding_byte_frequencies():
    # chi-square on byte frequencies: commitments to two fixed datasets look alike
    mk = master_keygen(Rng("hide"))
    rng = Rng("hide-salts")
    counts = np.zeros((2, 256))
    for d, data in enumerate((b"\x00" * 32, b"\xff" * 32)):
        for _ in range(10_000):
            c = commit(data, mk.pk, crypto.new_salt(rng))
            counts[d] += np.bincount(np.frombuffer(c, dtype=np.uint8), minlength=256)
    total = counts.sum(axis=0)
    expected = counts.sum(axis=1, keepdims=True) * total / total.sum()
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    dof = 255
    assert chi2 < dof + 3 * np.sqrt(2 * dof)


def test_binding_on_truncated_hash_matches_birthday_rate():
    # tiny domain: 2-byte datasets and salts, commitments cut to 4 bytes
    pk = b"\x01" * 32
    seen = {}
    collisions = 0
    n = 0
    for d in range(0, 65536, 97):
        for s in range(0, 65536, 4099):
            data, salt = d.to_bytes(2, "big"), s.to_bytes(2, "big")
            key = hash_bytes(pack(data, pk, salt), crypto.COMMITMENT)[:4]
            n += 1
            if key in seen and seen[key] != (data, salt):
                collisions += 1
            seen.setdefault(key, (data, salt))
    expected = n * n / 2 / 2**32
    assert collisions <= expected + 4 * np.sqrt(expected) + 1


def test_prf_tags():
    a, b = master_keygen(Rng("a")), master_keygen(Rng("b"))
    pk = sig_keygen(Rng("k")).pk
    assert prf_tag(a.sk, pk) == prf_tag(a.sk, pk)
    assert prf_tag(a.sk, pk) != prf_tag(b.sk, pk)
    rng = Rng("fresh")
    tags = {prf_tag(a.sk, sig_keygen(rng.child(i)).pk) for i in range(1000)}
    assert len(tags) == 1000


def test_distinct_masters_give_distinct_tags():
    pk = sig_keygen(Rng("k")).pk
    tags = {prf_tag(master_keygen(Rng(("m", i))).sk, pk) for i in range(1000)}
    assert len(tags) == 1000


def test_signatures():
    kp = sig_keygen(Rng("s"))
    other = sig_keygen(Rng("t"))
    m = b"message"
    sig = sign(kp.sk, m)
    assert verify_sig(kp.pk, m, sig)
    assert not verify_sig(kp.pk, m + b"\x01", sig)
    assert not verify_sig(other.pk, m, sig)


def test_master_public_key_derivation():
    kp = master_keygen(Rng("owner"))
    assert derive_mpk(kp.sk) == kp.pk
    assert derive_mpk(master_keygen(Rng("other")).sk) != kp.pk


@settings(max_examples=30)
@given(st.binary(min_size=1, max_size=32))
def test_rng_children_are_independent(label):
    r = Rng(b"root")
    assert r.child(label).bytes(16) == Rng(b"root").child(label).bytes(16)
    assert r.child(label).bytes(16) != r.child(label + b"x").bytes(16)


def test_unseeded_rng_is_fresh():
    assert Rng().bytes(16) != Rng().bytes(16)
    assert len(os.urandom(1)) == 1
