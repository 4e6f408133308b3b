from dataclasses import replace

import pytest

from anofel import board as bd
from anofel import merkle, zkrel
from anofel.board import TRAINING_MESSAGE, BoardEntry, TrainingMessage, verify_chain
from anofel.errors import DuplicateCommitment, DuplicateTag, NoSuchRound, NoSuchState, Rejected
from anofel.crypto import sig_keygen
from anofel.rng import Rng
from helpers import blobs, make_deployment


@pytest.fixture
def dep(key_pool):
    return make_deployment(key_pool, committees=1)


def _flip(b: bytes, pos: int = 0) -> bytes:
    out = bytearray(b)
    out[pos] ^= 0x01
    return bytes(out)


def test_genesis_and_certifier_roots(dep):
    st0 = dep.board.read_state(0)
    assert st0.cert_keys == () and st0.commitments == ()
    assert st0.cert_root == merkle.EMPTY_ROOT
    assert dep.board.cert_root(1) != dep.board.cert_root(0)
    with pytest.raises(NoSuchState):
        dep.board.read_state(dep.board.current_sid + 1)


def test_registration_changes_client_root(dep):
    before = dep.board.client_root(dep.board.current_sid)
    dep.new_client("c0", blobs(20, 0), "A")
    assert dep.board.client_root(dep.board.current_sid) != before


class _FlippingProver:
    def __init__(self, inner):
        self.inner = inner

    def seal(self, relation_id, stmt, wit, rng):
        p = self.inner.seal(relation_id, stmt, wit, rng)
        return zkrel.Proof(p.backend_id, p.statement_digest, _flip(p.payload, len(p.payload) - 1))


def test_tampered_registration_proof_rejected(dep):
    c = dep.new_client("c0", blobs(20, 0), "A", register=False)
    with pytest.raises(Rejected) as info:
        c.register(dep.board, _FlippingProver(dep.prover))
    assert info.value.reason == "ProofInvalid"
    foreign = zkrel.TransparentBackend.generate(Rng("someone else")).prover()
    with pytest.raises(Rejected) as info:
        c.register(dep.board, foreign)
    assert info.value.reason == "ProofInvalid"


def test_uncertified_client_rejected(dep):
    from anofel.parties import Certifier

    c = dep.new_client("c0", blobs(20, 0), "A", register=False)
    c.obtain_certificate(Certifier("rogue", Rng("rogue")))
    with pytest.raises(Rejected) as info:
        c.register(dep.board, dep.prover)
    assert info.value.reason == "ProofInvalid"


def test_duplicate_registration(dep):
    c = dep.new_client("c0", blobs(20, 0), "A")
    with pytest.raises(DuplicateCommitment):
        c.register(dep.board, dep.prover)


def _accepted_training_entry(dep):
    c = dep.new_client("c0", blobs(20, 0), "A")
    dep.new_client("c1", blobs(20, 1), "A")
    dep.open_round(2)
    dep.enter_window()
    cfg = dep.config_for("A")
    c.submit_update(dep.board, dep.round, dep.prover, cfg)
    return c, cfg, dep.board.pending[-1]


def test_signature_covers_every_training_field(dep):
    _, _, entry = _accepted_training_entry(dep)
    m = TrainingMessage.from_bytes(entry.payload)
    variants = {
        "ciphertexts": replace(m, ciphertext_field=_flip(m.ciphertext_field, len(m.ciphertext_field) // 2)),
        "ag_pk": replace(m, ag_fingerprints=(_flip(m.ag_fingerprints[0]),)),
        "tag": replace(m, tag=_flip(m.tag)),
        "pk_sig": replace(m, pk_sig=_flip(m.pk_sig, 5)),
        "sid": replace(m, sid=m.sid - 1),
        "proof": replace(m, proof=_flip(m.proof, len(m.proof) - 1)),
    }
    for name, bad in variants.items():
        with pytest.raises(Rejected) as info:
            dep.board.append(BoardEntry(TRAINING_MESSAGE, bad.to_bytes(), entry.signature))
        assert info.value.reason == "SigInvalid", name


def test_one_training_message_per_tag(dep):
    c, cfg, _ = _accepted_training_entry(dep)
    with pytest.raises(DuplicateTag):
        c.submit_update(dep.board, dep.round, dep.prover, cfg)


def test_old_sid_proof_still_verifies(dep):
    c = dep.new_client("c0", blobs(20, 0), "A")
    dep.new_client("c1", blobs(20, 1), "A")
    ref = dep.board.current_sid
    dep.board.advance(5)
    dep.open_round(2)
    dep.enter_window()
    c.submit_update(dep.board, dep.round, dep.prover, dep.config_for("A"), sid_ref=ref)
    assert len(dep.board.training_messages(dep.round)) == 1


def test_stale_and_future_sids_rejected(key_pool):
    dep = make_deployment(key_pool, freshness_window=3)
    c = dep.new_client("c0", blobs(20, 0), "A")
    ref = dep.board.current_sid
    dep.board.advance(6)
    dep.open_round(1)
    dep.enter_window()
    with pytest.raises(Rejected) as info:
        c.submit_update(dep.board, dep.round, dep.prover, dep.config_for("A"), sid_ref=ref)
    assert info.value.reason == "StaleSid"
    c.submit_update(dep.board, dep.round, dep.prover, dep.config_for("A"))
    m = TrainingMessage.from_bytes(dep.board.pending[-1].payload)
    key = sig_keygen(Rng("future"))
    future = replace(m, pk_sig=key.pk, tag=_flip(m.tag), sid=dep.board.next_sid)
    with pytest.raises(Rejected) as info:
        dep.board.append(bd.make_entry(TRAINING_MESSAGE, future, key.sk))
    assert info.value.reason == "StaleSid"


def test_messages_outside_window_rejected(dep):
    c = dep.new_client("c0", blobs(20, 0), "A")
    # header still pending: the window starts one block after it lands
    dep.owners["A"].start_round(dep.board, 1)
    with pytest.raises(Rejected) as info:
        c.submit_update(dep.board, 1, dep.prover, dep.config_for("A"))
    assert info.value.reason == "RoundClosed"
    dep.board.seal_block()
    dep.round = 1
    dep.close_window()
    with pytest.raises(Rejected) as info:
        c.submit_update(dep.board, 1, dep.prover, dep.config_for("A"))
    assert info.value.reason == "RoundClosed"


def test_round_boundary_matches_header(dep):
    dep.new_client("c0", blobs(20, 0), "A")
    dep.open_round(1)
    h = dep.board.header("A", 1)
    assert dep.board.round_boundary(1) == (h.start_sid, h.end_sid) == dep.board.round_boundary(1, "A")
    assert h.end_sid > h.start_sid
    with pytest.raises(NoSuchRound):
        dep.board.round_boundary(7)


def _run(dep, rounds=2, clients=3):
    cs = [dep.new_client(f"c{i}", blobs(20, i), "A") for i in range(clients)]
    cfg = {"A": dep.config_for("A")}
    for _ in range(rounds):
        dep.run_round(cs, cfg)
    return cs


def test_chain_links_and_replay(dep):
    _run(dep)
    blocks = dep.board.blocks
    assert len(blocks) >= 10
    for prev, cur in zip(blocks, blocks[1:]):
        assert cur.prev_digest == prev.digest
        assert cur.sid == prev.sid + 1
    assert verify_chain(blocks, dep.validator, dep.board.blobs).ok


def test_root_consistency_by_recomputation(dep):
    _run(dep, rounds=1, clients=4)
    regs = []
    for sid, block in enumerate(dep.board.blocks):
        regs += [e.parsed().comm for e in block.entries if e.kind == bd.REGISTRATION]
        expected = merkle.build(regs).root if regs else merkle.EMPTY_ROOT
        assert dep.board.client_root(sid) == expected


def test_same_block_registrations(dep):
    a = dep.new_client("a", blobs(20, 0), "A", seal=False)
    b = dep.new_client("b", blobs(20, 1), "A", seal=False)
    dep.board.seal_block()
    assert a.registration_sid == b.registration_sid
    root = merkle.build([a.comm, b.comm]).root
    assert dep.board.client_root(a.registration_sid) == root


def test_tamper_sweep_reports_tampered_sid(dep, tmp_path):
    _run(dep, rounds=1)
    log = tmp_path / "run.board"
    dep.board.save(log)
    records = bd.load_raw_records(log)
    for sid in range(len(records)):
        for pos in (len(records[sid]) // 2, len(records[sid]) - 1):
            bad = list(records)
            bad[sid] = _flip(bad[sid], pos)
            report = verify_chain(bad, dep.validator, dep.board.blobs)
            assert not report.ok
            assert report.first_bad_sid == sid, (sid, pos, report.reason)


def test_log_roundtrip_and_export(dep, tmp_path):
    _run(dep, rounds=1)
    log = tmp_path / "run.board"
    dep.board.save(log)
    blocks = bd.load_log(log)
    assert [b.digest for b in blocks] == [b.digest for b in dep.board.blocks]
    rebuilt = bd.board_from_blocks(blocks, dep.board.blobs)
    assert rebuilt.head_digest == dep.board.head_digest
    dep.board.export_jsonl(tmp_path / "run.jsonl")
    lines = (tmp_path / "run.jsonl").read_text().splitlines()
    assert len(lines) == len(blocks)


def test_storage_offload_keeps_digests_only(key_pool):
    inline = make_deployment(key_pool)
    offload = make_deployment(key_pool, storage_offload=True)
    for d in (inline, offload):
        _run(d, rounds=1, clients=2)
    size = lambda d: sum(len(b.to_bytes()) for b in d.board.blocks)  # noqa: E731
    assert size(offload) < size(inline)
    for d, limit in ((offload, 64), (inline, 1000)):
        msgs = [m.message for m in d.board.training_messages()]
        assert all((len(m.ciphertext_field) <= 64) == (d is offload) for m in msgs)
    assert len(offload.board.blobs) > 0
    assert verify_chain(offload.board.blocks, offload.validator, offload.board.blobs).ok
    assert [o.model.values.tolist() for o in offload.owners.values()] == \
           [o.model.values.tolist() for o in inline.owners.values()]


def test_append_only_after_run(dep):
    _run(dep, rounds=1)
    snapshot = [b.to_bytes() for b in dep.board.blocks]
    _run_more = dep.clients
    dep.run_round(_run_more, {"A": dep.config_for("A")})
    assert [b.to_bytes() for b in dep.board.blocks[: len(snapshot)]] == snapshot
