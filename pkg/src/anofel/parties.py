"""Certifier, client, aggregator committee and model owner.

Parties only talk through the board.  Each owns its state, draws randomness
from labelled child streams of its own :class:`Rng` (so no party ever
mutates a shared generator), and exposes ``snapshot()`` for state-diff
assertions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import dp as dpmod
from . import trainer, zkrel
from .board import (
    COMMITTEE_KEY,
    CERTIFIER_KEY,
    INITIAL_MODEL,
    PARTIAL_DECRYPTION,
    REGISTRATION,
    ROUND_END,
    TRAINING_MESSAGE,
    Board,
    CertifierKey,
    CommitteeInfo,
    CommitteeKey,
    PartialDecryptionPost,
    Registration,
    RoundEnd,
    RoundHeader,
    TrainingMessage,
    ciphertext_bytes,
    make_entry,
    model_to_bytes,
    wrap_blob,
)
from .crypto import (
    SigKeypair,
    commit,
    hash_bytes,
    key_leaf,
    master_keygen,
    new_salt,
    prf_tag,
    sig_keygen,
    sign,
)
from .encoding import FixedPointCodec
from .errors import CorruptAggregate, EmptyRound, ProtocolError
from .paillier import (
    EncryptedVector,
    PartialVector,
    ThresholdKeyMaterial,
    add_vectors,
    combine_vector,
    draw_randomness,
    encrypt_vector_with,
    partial_decrypt_vector,
)
from .rng import Rng

DEFAULT_DECOYS = 4
DEFAULT_ROUND_BLOCKS = 2


def make_codec(modulus: int, scale_bits: int = 16, max_participants: int = 1024,
               max_magnitude: float = 1e6) -> FixedPointCodec:
    return FixedPointCodec(modulus, scale_bits, max_participants, max_magnitude)


# certifier -----------------------------------------------------------------------

class Certifier:
    def __init__(self, name: str, rng: Rng):
        self.name = name
        self.keypair = sig_keygen(rng.child("certifier", name))
        self.posted_sid: int | None = None

    @property
    def public_key(self) -> bytes:
        return self.keypair.pk

    def post_key(self, board: Board) -> int:
        entry = make_entry(CERTIFIER_KEY, CertifierKey(self.keypair.pk), self.keypair.sk)
        self.posted_sid = board.append(entry)
        return self.posted_sid

    def certify(self, dataset_bytes: bytes, mpk: bytes, dt: bytes | None = None) -> bytes:
        return sign(self.keypair.sk, zkrel.certificate_message(dataset_bytes, mpk, dt))

    def snapshot(self) -> dict:
        return {"name": self.name, "pk": self.keypair.pk, "posted_sid": self.posted_sid}


# committee -----------------------------------------------------------------------

class Committee:
    """An aggregator committee: n members holding shares of one threshold key."""

    def __init__(self, committee_id: str, material: ThresholdKeyMaterial, rng: Rng,
                 owner_pk: bytes, dt: bytes = b""):
        self.committee_id = committee_id
        self.material = material
        self.dt = dt
        self.owner_pk = owner_pk
        self.member_keys = tuple(sig_keygen(rng.child("member", committee_id, i)) for i in range(1, material.n + 1))
        self.aggregates: dict[int, EncryptedVector] = {}

    @property
    def public_key(self):
        return self.material.public_key

    @property
    def t(self) -> int:
        return self.material.t

    @property
    def n(self) -> int:
        return self.material.n

    def info(self) -> CommitteeInfo:
        return CommitteeInfo(self.committee_id, self.t, tuple(k.pk for k in self.member_keys), self.owner_pk, self.dt)

    def post_keys(self, board: Board, members=None) -> list[int]:
        members = range(1, self.n + 1) if members is None else members
        key = self.public_key.to_bytes()
        sids = []
        for i in members:
            entry = make_entry(COMMITTEE_KEY, CommitteeKey(self.committee_id, i, key), self.member_keys[i - 1].sk)
            sids.append(board.append(entry))
        return sids

    def messages_for(self, board: Board, round_: int) -> list[EncryptedVector]:
        """This committee's slot from every accepted message of the round."""
        fp = self.public_key.fingerprint
        out = []
        for acc in board.training_messages(round_):
            m = acc.message
            if fp not in m.ag_fingerprints:
                continue
            out.append(m.ciphertexts(board.blobs)[m.ag_fingerprints.index(fp)])
        return out

    def aggregate_round(self, board: Board, round_: int) -> EncryptedVector:
        if not board.round_closed(self.committee_id, round_):
            raise ProtocolError(f"round {round_} is still open")
        vectors = self.messages_for(board, round_)
        if not vectors:
            raise EmptyRound(f"no training messages for {self.committee_id!r} in round {round_}")
        agg = add_vectors(self.public_key, vectors)
        self.aggregates[round_] = agg
        return agg

    def partial_decryptions(self, round_: int, members=None) -> list[PartialVector]:
        agg = self.aggregates.get(round_)
        if agg is None:
            raise ProtocolError(f"round {round_} has not been aggregated")
        members = range(1, self.t + 1) if members is None else members
        return [partial_decrypt_vector(self.material.shares[i - 1], agg) for i in members]

    def post_partials(self, board: Board, round_: int, members=None) -> list[int]:
        sids = []
        store = board.blobs if board.params.storage_offload else None
        for part in self.partial_decryptions(round_, members):
            i = part.share_index
            post = PartialDecryptionPost(self.committee_id, round_, i, wrap_blob(part.to_bytes(), store))
            sids.append(board.append(make_entry(PARTIAL_DECRYPTION, post, self.member_keys[i - 1].sk)))
        return sids

    def snapshot(self) -> dict:
        return {
            "committee_id": self.committee_id,
            "fingerprint": self.public_key.fingerprint,
            "t": self.t,
            "n": self.n,
            "aggregates": {r: a.digest for r, a in sorted(self.aggregates.items())},
        }


# model owner ---------------------------------------------------------------------

@dataclass
class RoundResult:
    round: int
    participants: int
    update: np.ndarray | None
    aggregate_digest: bytes = b""


class ModelOwner:
    """The server running one training task through one committee."""

    def __init__(self, committee_id: str, model: trainer.ModelParams, lr: float, rng: Rng,
                 round_blocks: int = DEFAULT_ROUND_BLOCKS, scale_bits: int = 16, max_participants: int = 1024,
                 max_magnitude: float = 1e6):
        self.committee_id = committee_id
        self.model = model
        self.lr = lr
        self.keypair = sig_keygen(rng.child("owner", committee_id))
        self.round_blocks = round_blocks
        self.round = 0
        self.scale_bits = scale_bits
        self.max_participants = max_participants
        self.max_magnitude = max_magnitude
        self.history: list[RoundResult] = []

    def start_round(self, board: Board, expected_participants: int) -> RoundHeader:
        data = model_to_bytes(self.model.values)
        store = board.blobs if board.params.storage_offload else None
        start = board.next_sid + 1
        header = RoundHeader(
            self.round + 1, self.committee_id, hash_bytes(data), max(1, expected_participants),
            start, start + self.round_blocks, wrap_blob(data, store),
        )
        board.append(make_entry(INITIAL_MODEL, header, self.keypair.sk))
        self.round += 1
        return header

    def finalize_round(self, board: Board, round_: int, partials: list[PartialVector] | None = None,
                       open_next: bool = False, expected_participants: int | None = None) -> RoundResult:
        """Combine partials, average over the realized participant count, step the model.

        A round in which nobody targeted this committee (or every message was
        a decoy) leaves the model unchanged.
        """
        pk = board.committee_key(self.committee_id)
        header = board.header(self.committee_id, round_)
        if partials is None:
            partials = board.partials(self.committee_id, round_)
        if not partials and not any(
            pk.fingerprint in m.message.ag_fingerprints for m in board.training_messages(round_)
        ):
            result = RoundResult(round_, 0, None)
        else:
            plain = combine_vector(pk, partials)
            codec = make_codec(pk.n, self.scale_bits, self.max_participants, self.max_magnitude)
            count = plain[-1]
            if count > self.max_participants * max(1, int(self.max_magnitude)):
                raise CorruptAggregate("participant counter out of range")
            if count == 0:
                result = RoundResult(round_, 0, None, partials[0].ct_digest)
            else:
                total = codec.decode_vector(plain[:-1], n_summands=count)
                avg = total / count
                self.model = trainer.apply_update(self.model, avg, self.lr)
                result = RoundResult(round_, int(count), avg, partials[0].ct_digest)
        update_digest = hash_bytes(model_to_bytes(result.update)) if result.update is not None else bytes(32)
        end = RoundEnd(round_, self.committee_id, result.participants, update_digest,
                       hash_bytes(model_to_bytes(self.model.values)))
        board.append(make_entry(ROUND_END, end, self.keypair.sk))
        self.history.append(result)
        if open_next:
            self.start_round(board, expected_participants or header.expected_participants)
        return result

    def snapshot(self) -> dict:
        return {
            "committee_id": self.committee_id,
            "round": self.round,
            "model": hash_bytes(model_to_bytes(self.model.values)),
            "lr": self.lr,
        }


# client ----------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingConfig:
    """How a client turns its data into an update.

    ``dp=None`` disables clipping and noise.  ``weighted`` multiplies the
    update (and the participant counter) by the local dataset size.
    """

    template: trainer.ModelParams
    dp: dpmod.DPParams | None = None
    weighted: bool = False


@dataclass
class Submission:
    round: int
    sid: int
    target_index: int
    tag: bytes
    pk_sig: bytes
    gradient: np.ndarray | None = field(default=None, repr=False)


class Client:
    def __init__(self, name: str, dataset: trainer.LocalDataset, rng: Rng, dt: bytes | None = None):
        self.name = name
        self.dataset = dataset
        self.dataset_bytes = dataset.to_bytes()
        self.dt = dt
        self._rng = rng
        self.master: SigKeypair = master_keygen(rng.child("master"))
        self.salt = new_salt(rng.child("salt"))
        self.comm = commit(self.dataset_bytes, self.master.pk, self.salt)
        self.certificate: bytes | None = None
        self.cert_pk: bytes | None = None
        self.registration_sid: int | None = None
        self.target: str | None = None
        self.ag: tuple[str, ...] = ()
        self.submissions: list[Submission] = []
        # fault/variant switches used by the security games
        self.fixed_ag_order = False  # shuffle AG once and reuse that order
        self.leak_registration_sid = False  # (bug) prove against the registration block, not the current one

    # setup ----------------------------------------------------------------------

    def obtain_certificate(self, certifier: Certifier) -> bytes:
        self.certificate = certifier.certify(self.dataset_bytes, self.master.pk, self.dt)
        self.cert_pk = certifier.public_key
        return self.certificate

    def _cert_proof(self, board: Board, sid: int):
        try:
            tree = board.tree(sid, "cert")
            return tree.prove(tree.index_of(key_leaf(self.cert_pk)))
        except (LookupError, ValueError):
            # no path exists; the board will reject the proof
            from .merkle import InclusionProof

            return InclusionProof(0, ())

    def registration_keys(self) -> SigKeypair:
        return sig_keygen(self._rng.child("registration-sig"))

    def register(self, board: Board, backend: zkrel.TransparentBackend, sid_ref: int | None = None) -> int:
        """Post (comm, tag, pk_sig, proof, sid) signed under a fresh key.

        The witness is sealed as is; the board is the only judge of whether
        it satisfies the relation.
        """
        if self.certificate is None:
            raise ProtocolError(f"client {self.name} has no certificate")
        sid = board.current_sid if sid_ref is None else sid_ref
        keys = self.registration_keys()
        tag = prf_tag(self.master.sk, keys.pk)
        stmt = zkrel.RegStatement(self.comm, tag, keys.pk, sid, board.cert_root(sid))
        wit = zkrel.RegWitness(
            self.dataset_bytes, self.salt, self.master.sk, self.master.pk, self.cert_pk,
            self._cert_proof(board, sid), self.certificate, keys.sk,
            self.dt if board.params.extensions.dataset_type else None,
        )
        proof = backend.seal(zkrel.REGISTRATION, stmt, wit, self._rng.child("registration-proof"))
        reg = Registration(self.comm, tag, keys.pk, proof.to_bytes(), sid)
        self.registration_sid = board.append(make_entry(REGISTRATION, reg, keys.sk))
        return self.registration_sid

    def choose_ag(self, board: Board, target: str, u: int = DEFAULT_DECOYS) -> tuple[str, ...]:
        """Pick the decoy set once: the target plus ``u - 1`` other active committees."""
        if self.ag:
            if target != self.target:
                raise ProtocolError("the decoy set is frozen; target cannot change")
            return self.ag
        others = sorted(c for c in board.active_committees() if c != target)
        if target not in board.active_committees():
            raise ProtocolError(f"target committee {target!r} is not active")
        rng = self._rng.child("ag-choice")
        rng.shuffle(others)
        self.target = target
        self.ag = (target, *others[: max(0, min(u, len(others) + 1) - 1)])
        return self.ag

    # training ---------------------------------------------------------------------

    def round_keys(self, round_: int) -> SigKeypair:
        """Fresh signing key for one round.

        Derived per round, so a second submission in the same round carries
        the same tag and is refused by the board.
        """
        return sig_keygen(self._rng.child("train-sig", round_))

    def compute_update(self, model: trainer.ModelParams, cfg: TrainingConfig, round_: int,
                       expected_participants: int, rng: Rng | None = None) -> np.ndarray:
        base = rng or self._rng
        if model.arch == trainer.STRESS:
            g = trainer.stress_gradient(model, base.numpy("stress", round_))
        elif cfg.dp is None:
            g = trainer.local_gradient(model, self.dataset)
        else:
            rows = trainer.per_example_gradients(model, self.dataset)
            g = dpmod.clip_rows(rows, cfg.dp.clip).mean(axis=0)
        if cfg.dp is not None:
            params = replace(cfg.dp, dataset_size=self.dataset.size)
            scale = dpmod.noise_sigma(params)
            g = g + dpmod.sample_noise(scale, len(g), expected_participants, base.numpy("noise", round_))
        if cfg.weighted:
            g = g * self.dataset.size
        return g

    def submit_update(self, board: Board, round_: int, backend: zkrel.TransparentBackend,
                      cfg: TrainingConfig, sid_ref: int | None = None, rng: Rng | None = None) -> int:
        """Train on the round's model and post the update.

        ``rng`` replaces the client's own stream for every per-message draw
        (signing key, AG order, noise, encryption, proof).
        """
        if not self.ag:
            raise ProtocolError(f"client {self.name} has no decoy set")
        if self.registration_sid is None:
            raise ProtocolError(f"client {self.name} is not registered")
        header = board.header(self.target, round_)
        model = cfg.template.with_values(header.model(board.blobs))
        g = self.compute_update(model, cfg, round_, header.expected_participants, rng)
        counter = self.dataset.size if cfg.weighted else 1
        return self.post_update(board, round_, backend, g, counter, sid_ref, rng=rng)

    def post_update(self, board: Board, round_: int, backend: zkrel.TransparentBackend,
                    update: np.ndarray, counter: int = 1, sid_ref: int | None = None,
                    zero_target: bool = False, rng: Rng | None = None) -> int:
        """Encrypt ``update`` to the target slot, zeros elsewhere, prove and post.

        ``zero_target`` sends a pure-decoy message (all slots zero).
        """
        ext = board.params.extensions
        sid = board.current_sid if sid_ref is None else sid_ref
        if self.leak_registration_sid:
            sid = self.registration_sid
        base = rng or self._rng
        order = list(self.ag)
        if self.fixed_ag_order:
            self._rng.child("ag-order").shuffle(order)
        else:
            base.child("ag-order", round_).shuffle(order)
        target_index = order.index(self.target)
        keys = [board.committee_key(c) for c in order]
        plaintexts, randomness, vectors = [], [], []
        enc_rng = base.child("encrypt", round_)
        for j, (cid, pk) in enumerate(zip(order, keys)):
            length = len(board.header(cid, round_).model(board.blobs)) + 1
            if j == target_index and not zero_target:
                codec = make_codec(pk.n, board.params.scale_bits)
                pts = codec.encode_vector(update) + [counter]
                if len(pts) != length:
                    raise ProtocolError("update length does not match the target model")
            else:
                pts = [0] * length
            rnd = draw_randomness(pk, length, enc_rng.child(j))
            vectors.append(encrypt_vector_with(pk, pts, rnd))
            plaintexts.append(tuple(pts))
            randomness.append(tuple(rnd))
        if rng is not None:
            sig = sig_keygen(rng.child("train-sig", round_))
        else:
            sig = self.round_keys(round_)
        tag = prf_tag(self.master.sk, sig.pk)
        client_tree = board.tree(sid, "client")
        comm_proof = client_tree.prove(client_tree.index_of(self.comm))
        stmt = zkrel.TrainStatement(
            tag, sig.pk, sid, board.client_root(sid),
            cert_root=board.cert_root(sid) if ext.dataset_type else b"",
            ag_keys=tuple(keys) if ext.ciphertext_wellformed else (),
            ag_dts=tuple(board.params.committee(c).dt for c in order) if ext.dataset_type else (),
            ciphertexts=tuple(vectors) if ext.ciphertext_wellformed else (),
        )
        wit = zkrel.TrainWitness(
            self.dataset_bytes, self.salt, self.master.sk, self.master.pk, self.comm, comm_proof, sig.sk,
            dt=self.dt if ext.dataset_type else None,
            cert_pk=self.cert_pk if ext.dataset_type else b"",
            cert_proof=self._cert_proof(board, sid) if ext.dataset_type else None,
            certificate=self.certificate if ext.dataset_type else b"",
            target_index=target_index if (ext.dataset_type or ext.ciphertext_wellformed) else -1,
            plaintexts=tuple(plaintexts) if ext.ciphertext_wellformed else (),
            randomness=tuple(randomness) if ext.ciphertext_wellformed else (),
        )
        proof = backend.seal(zkrel.TRAINING, stmt, wit, base.child("train-proof", round_))
        store = board.blobs if board.params.storage_offload else None
        msg = TrainingMessage(
            wrap_blob(ciphertext_bytes(vectors), store), tuple(k.fingerprint for k in keys),
            tag, sig.pk, sid, proof.to_bytes(),
        )
        posted = board.append(make_entry(TRAINING_MESSAGE, msg, sig.sk))
        self.submissions.append(Submission(round_, posted, target_index, tag, sig.pk, None if zero_target else update))
        return posted

    def snapshot(self) -> dict:
        return {
            "name": self.name,
            "mpk": self.master.pk,
            "comm": self.comm,
            "certificate": self.certificate,
            "registration_sid": self.registration_sid,
            "ag": self.ag,
            "submissions": tuple((s.round, s.sid, s.tag) for s in self.submissions),
        }
