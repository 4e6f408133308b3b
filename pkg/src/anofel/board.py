"""Public bulletin board: a validated, append-only block log.

One logical validator accepts entries, checks them against the state at the
block they will land in, and seals them into hash-chained blocks.  Readers
get immutable per-sid snapshots of the anonymity-set registries (certifier
keys and client commitments) and their Merkle roots.

Every entry is ``(kind, payload, signature)``.  The signature covers
``pack(kind, payload)`` and is checked against a key determined by the kind:
the fresh ``pk_sig`` inside registration and training messages, a genesis
roster key for everything else.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from . import merkle, zkrel
from .crypto import (
    BLOCK,
    BOARD_ENTRY,
    DIGEST_SIZE,
    Digest,
    check_sig,
    hash_bytes,
    key_leaf,
    pack,
    read_u64,
    u64,
    unpack,
)
from .errors import (
    BadBackend,
    DecodeError,
    DuplicateCommitment,
    DuplicateTag,
    NoSuchRound,
    NoSuchState,
    Rejected,
)
from .paillier import EncryptedVector, PartialVector, PublicKey

SYSTEM_PARAMS = 1
CERTIFIER_KEY = 2
COMMITTEE_KEY = 3
REGISTRATION = 4
INITIAL_MODEL = 5
TRAINING_MESSAGE = 6
ROUND_END = 7
PARTIAL_DECRYPTION = 8

KIND_NAMES = {
    SYSTEM_PARAMS: "SystemParams",
    CERTIFIER_KEY: "CertifierKey",
    COMMITTEE_KEY: "CommitteeKey",
    REGISTRATION: "Registration",
    INITIAL_MODEL: "InitialModel",
    TRAINING_MESSAGE: "TrainingMessage",
    ROUND_END: "RoundEnd",
    PARTIAL_DECRYPTION: "PartialDecryption",
}

DEFAULT_FRESHNESS = 64

# large payload fields are either carried inline or replaced by the digest
# of a blob held in the side store
_INLINE, _BLOB = b"\x00", b"\x01"


def entry_message(kind: int, payload: bytes) -> bytes:
    """The byte string an entry's signature covers."""
    return pack(bytes((kind,)), payload)


class BlobStore:
    """Content-addressed side storage for bulky payloads."""

    def __init__(self, blobs: dict[bytes, bytes] | None = None):
        self._blobs = dict(blobs or {})

    def put(self, data: bytes) -> Digest:
        digest = hash_bytes(data)
        self._blobs[digest] = data
        return digest

    def get(self, digest: Digest) -> bytes:
        return self._blobs[digest]

    def __contains__(self, digest) -> bool:
        return digest in self._blobs

    def __len__(self) -> int:
        return len(self._blobs)

    def save(self, path) -> None:
        with Path(path).open("wb") as fh:
            for digest in sorted(self._blobs):
                fh.write(pack(digest, self._blobs[digest]))

    @classmethod
    def load(cls, path) -> BlobStore:
        data = Path(path).read_bytes()
        fields = unpack(data)
        return cls(dict(zip(fields[0::2], fields[1::2])))


def wrap_blob(data: bytes, store: BlobStore | None) -> bytes:
    if store is None:
        return _INLINE + data
    return _BLOB + store.put(data)


def unwrap_blob(field_bytes: bytes, store: BlobStore | None) -> bytes:
    if not field_bytes:
        raise DecodeError("empty payload field")
    tag, body = field_bytes[:1], field_bytes[1:]
    if tag == _INLINE:
        return body
    if tag == _BLOB:
        if store is None or body not in store:
            raise DecodeError("payload blob not available")
        return store.get(body)
    raise DecodeError("bad payload field tag")


def model_to_bytes(values) -> bytes:
    return np.ascontiguousarray(values, dtype=">f8").tobytes()


def model_from_bytes(data: bytes) -> np.ndarray:
    if len(data) % 8:
        raise DecodeError("model bytes not a whole number of float64 values")
    return np.frombuffer(data, dtype=">f8").astype(np.float64)


# payloads --------------------------------------------------------------------

@dataclass(frozen=True)
class CommitteeInfo:
    committee_id: str
    t: int
    members: tuple[bytes, ...]  # member signing keys, 1-indexed by position
    owner_pk: bytes  # model owner of the training task run by this committee
    dt: bytes = b""

    @property
    def n(self) -> int:
        return len(self.members)

    def to_bytes(self) -> bytes:
        return pack(self.committee_id.encode(), u64(self.t), pack(*self.members), self.owner_pk, self.dt)

    @classmethod
    def from_bytes(cls, data: bytes) -> CommitteeInfo:
        cid, t, members, owner, dt = unpack(data, 5)
        return cls(cid.decode(), read_u64(t), tuple(unpack(members)), owner, dt)


@dataclass(frozen=True)
class SystemParams:
    proof_key: bytes
    certifiers: tuple[bytes, ...]
    committees: tuple[CommitteeInfo, ...]
    extensions: zkrel.Extensions = zkrel.NO_EXTENSIONS
    freshness_window: int = DEFAULT_FRESHNESS
    storage_offload: bool = False
    scale_bits: int = 16

    def committee(self, committee_id: str) -> CommitteeInfo:
        for c in self.committees:
            if c.committee_id == committee_id:
                return c
        raise KeyError(committee_id)

    def to_bytes(self) -> bytes:
        flags = int(self.extensions.dataset_type) | int(self.extensions.ciphertext_wellformed) << 1
        return pack(
            self.proof_key, pack(*self.certifiers), pack(*(c.to_bytes() for c in self.committees)),
            u64(flags), u64(self.freshness_window), u64(int(self.storage_offload)), u64(self.scale_bits),
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> SystemParams:
        key, certs, comms, flags, window, offload, scale = unpack(data, 7)
        flags = read_u64(flags)
        ext = zkrel.Extensions(bool(flags & 1), bool(flags & 2))
        return cls(
            key, tuple(unpack(certs)), tuple(CommitteeInfo.from_bytes(c) for c in unpack(comms)),
            ext, read_u64(window), bool(read_u64(offload)), read_u64(scale),
        )

    def fields(self) -> dict:
        return {"proof_key": self.proof_key, "params": self.to_bytes()}


@dataclass(frozen=True)
class CertifierKey:
    cert_pk: bytes

    def to_bytes(self) -> bytes:
        return pack(self.cert_pk)

    @classmethod
    def from_bytes(cls, data: bytes) -> CertifierKey:
        return cls(*unpack(data, 1))

    def fields(self) -> dict:
        return {"cert_pk": self.cert_pk}


@dataclass(frozen=True)
class CommitteeKey:
    committee_id: str
    member_index: int
    public_key: bytes

    def to_bytes(self) -> bytes:
        return pack(self.committee_id.encode(), u64(self.member_index), self.public_key)

    @classmethod
    def from_bytes(cls, data: bytes) -> CommitteeKey:
        cid, idx, pk = unpack(data, 3)
        return cls(cid.decode(), read_u64(idx), pk)

    def fields(self) -> dict:
        return {"committee_id": self.committee_id, "member_index": self.member_index, "public_key": self.public_key}


@dataclass(frozen=True)
class Registration:
    comm: Digest
    tag: Digest
    pk_sig: bytes
    proof: bytes
    sid: int

    def to_bytes(self) -> bytes:
        return pack(self.comm, self.tag, self.pk_sig, self.proof, u64(self.sid))

    @classmethod
    def from_bytes(cls, data: bytes) -> Registration:
        comm, tag, pk, proof, sid = unpack(data, 5)
        return cls(comm, tag, pk, proof, read_u64(sid))

    def fields(self) -> dict:
        return {"comm": self.comm, "tag": self.tag, "pk_sig": self.pk_sig, "proof": self.proof, "sid": self.sid}


@dataclass(frozen=True)
class RoundHeader:
    """Posted by a model owner to open a round; carries the current model."""

    round: int
    committee_id: str
    model_params_digest: Digest
    expected_participants: int
    start_sid: int
    end_sid: int
    model_field: bytes = field(default=b"", repr=False)

    def to_bytes(self) -> bytes:
        return pack(
            u64(self.round), self.committee_id.encode(), self.model_params_digest,
            u64(self.expected_participants), u64(self.start_sid), u64(self.end_sid), self.model_field,
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> RoundHeader:
        r, cid, digest, expected, start, end, model = unpack(data, 7)
        return cls(read_u64(r), cid.decode(), digest, read_u64(expected), read_u64(start), read_u64(end), model)

    def model(self, store: BlobStore | None = None) -> np.ndarray:
        return model_from_bytes(unwrap_blob(self.model_field, store))

    def fields(self) -> dict:
        return {
            "round": self.round, "committee_id": self.committee_id,
            "model_params_digest": self.model_params_digest,
            "expected_participants": self.expected_participants,
            "start_sid": self.start_sid, "end_sid": self.end_sid, "model_field": self.model_field,
        }


InitialModel = RoundHeader


@dataclass(frozen=True)
class TrainingMessage:
    """m = (c, AG_pk, tag, pk_sig, sid, proof); AG_pk holds key fingerprints."""

    ciphertext_field: bytes = field(repr=False)
    ag_fingerprints: tuple[Digest, ...]
    tag: Digest
    pk_sig: bytes
    sid: int
    proof: bytes = field(repr=False)

    def to_bytes(self) -> bytes:
        return pack(self.ciphertext_field, pack(*self.ag_fingerprints), self.tag, self.pk_sig, u64(self.sid), self.proof)

    @classmethod
    def from_bytes(cls, data: bytes) -> TrainingMessage:
        c, ag, tag, pk, sid, proof = unpack(data, 6)
        return cls(c, tuple(unpack(ag)), tag, pk, read_u64(sid), proof)

    def ciphertexts(self, store: BlobStore | None = None) -> tuple[EncryptedVector, ...]:
        raw = unwrap_blob(self.ciphertext_field, store)
        return tuple(EncryptedVector.from_bytes(v) for v in unpack(raw))

    def fields(self) -> dict:
        return {
            "ciphertexts": self.ciphertext_field, "ag_pk": pack(*self.ag_fingerprints), "tag": self.tag,
            "pk_sig": self.pk_sig, "sid": self.sid, "proof": self.proof,
        }


def ciphertext_bytes(vectors) -> bytes:
    return pack(*(v.to_bytes() for v in vectors))


@dataclass(frozen=True)
class RoundEnd:
    """Posted by a model owner after finalizing a round."""

    round: int
    committee_id: str
    participants: int
    update_digest: Digest
    model_params_digest: Digest

    def to_bytes(self) -> bytes:
        return pack(u64(self.round), self.committee_id.encode(), u64(self.participants),
                    self.update_digest, self.model_params_digest)

    @classmethod
    def from_bytes(cls, data: bytes) -> RoundEnd:
        r, cid, n, upd, model = unpack(data, 5)
        return cls(read_u64(r), cid.decode(), read_u64(n), upd, model)

    def fields(self) -> dict:
        return {"round": self.round, "committee_id": self.committee_id, "participants": self.participants,
                "update_digest": self.update_digest, "model_params_digest": self.model_params_digest}


@dataclass(frozen=True)
class PartialDecryptionPost:
    committee_id: str
    round: int
    member_index: int
    partial_field: bytes = field(repr=False)

    def to_bytes(self) -> bytes:
        return pack(self.committee_id.encode(), u64(self.round), u64(self.member_index), self.partial_field)

    @classmethod
    def from_bytes(cls, data: bytes) -> PartialDecryptionPost:
        cid, r, idx, part = unpack(data, 4)
        return cls(cid.decode(), read_u64(r), read_u64(idx), part)

    def partial(self, store: BlobStore | None = None) -> PartialVector:
        return PartialVector.from_bytes(unwrap_blob(self.partial_field, store))

    def fields(self) -> dict:
        return {"committee_id": self.committee_id, "round": self.round,
                "member_index": self.member_index, "partial": self.partial_field}


PAYLOAD_TYPES = {
    SYSTEM_PARAMS: SystemParams,
    CERTIFIER_KEY: CertifierKey,
    COMMITTEE_KEY: CommitteeKey,
    REGISTRATION: Registration,
    INITIAL_MODEL: RoundHeader,
    TRAINING_MESSAGE: TrainingMessage,
    ROUND_END: RoundEnd,
    PARTIAL_DECRYPTION: PartialDecryptionPost,
}


# entries and blocks -------------------------------------------------------------

@dataclass(frozen=True)
class BoardEntry:
    kind: int
    payload: bytes = field(repr=False)
    signature: bytes = b""

    @property
    def kind_name(self) -> str:
        return KIND_NAMES.get(self.kind, f"kind{self.kind}")

    def to_bytes(self) -> bytes:
        return pack(bytes((self.kind,)), self.payload, self.signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> BoardEntry:
        kind, payload, sig = unpack(data, 3)
        if len(kind) != 1:
            raise DecodeError("bad entry kind")
        return cls(kind[0], payload, sig)

    @cached_property
    def digest(self) -> Digest:
        return hash_bytes(self.to_bytes(), BOARD_ENTRY)

    def parsed(self):
        if self.kind not in PAYLOAD_TYPES:
            raise DecodeError(f"unknown entry kind {self.kind}")
        return PAYLOAD_TYPES[self.kind].from_bytes(self.payload)


def make_entry(kind: int, payload_obj, signer_sk: bytes | None = None) -> BoardEntry:
    from .crypto import sign

    payload = payload_obj.to_bytes()
    sig = sign(signer_sk, entry_message(kind, payload)) if signer_sk is not None else b""
    return BoardEntry(kind, payload, sig)


@dataclass(frozen=True)
class Block:
    sid: int
    entries: tuple[BoardEntry, ...]
    prev_digest: Digest
    state_digest: Digest
    cert_root: Digest
    client_root: Digest

    def to_bytes(self) -> bytes:
        return pack(
            u64(self.sid), self.prev_digest, self.state_digest, self.cert_root, self.client_root,
            pack(*(e.to_bytes() for e in self.entries)),
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> Block:
        sid, prev, state, cert, client, entries = unpack(data, 6)
        return cls(read_u64(sid), tuple(BoardEntry.from_bytes(e) for e in unpack(entries)), prev, state, cert, client)

    @cached_property
    def digest(self) -> Digest:
        return hash_bytes(self.to_bytes(), BLOCK)

    def to_record(self) -> dict:
        return {
            "sid": self.sid,
            "digest": self.digest.hex(),
            "prev_digest": self.prev_digest.hex(),
            "state_digest": self.state_digest.hex(),
            "cert_root": self.cert_root.hex(),
            "client_root": self.client_root.hex(),
            "entries": [_entry_record(e) for e in self.entries],
        }


GENESIS_PREV = bytes(DIGEST_SIZE)


def _render(value):
    if isinstance(value, bytes):
        if len(value) <= 64:
            return value.hex()
        return {"len": len(value), "sha256": hash_bytes(value).hex()}
    return value


def _entry_record(entry: BoardEntry) -> dict:
    rec = {"kind": entry.kind_name, "digest": entry.digest.hex(), "signature": entry.signature.hex()}
    try:
        rec["fields"] = {k: _render(v) for k, v in entry.parsed().fields().items()}
    except (DecodeError, ValueError):
        rec["fields"] = None
    return rec


# snapshots -------------------------------------------------------------------------

@dataclass(frozen=True)
class BoardState:
    """Immutable view of the registries as of one sealed block."""

    sid: int
    cert_keys: tuple[bytes, ...]
    commitments: tuple[Digest, ...]
    cert_root: Digest
    client_root: Digest
    committee_keys: dict = field(repr=False)  # committee_id -> PublicKey (active only)
    headers: tuple[RoundHeader, ...] = field(repr=False)
    n_registrations: int = 0
    n_training_messages: int = 0


@dataclass
class _CommitteeStatus:
    info: CommitteeInfo
    postings: dict = field(default_factory=dict)  # member_index -> key bytes
    active_sid: int | None = None
    public_key: PublicKey | None = None


@dataclass(frozen=True)
class AcceptedMessage:
    sid: int
    round: int
    message: TrainingMessage


class Board:
    def __init__(self, params: SystemParams, verifier: zkrel.TransparentBackend | None = None,
                 blobs: BlobStore | None = None, check_proofs: bool = True):
        self.params = params
        self.verifier = verifier
        self.blobs = blobs if blobs is not None else BlobStore()
        self.check_proofs = check_proofs
        if check_proofs and (verifier is None or not verifier.can_verify):
            raise BadBackend("the board needs the validator's proof key to check proofs")
        if verifier is not None and verifier.public_key != params.proof_key:
            raise BadBackend("validator key does not match the system parameters")
        self.blocks: list[Block] = []
        self.pending: list[BoardEntry] = []
        self._cert_keys: list[bytes] = []
        self._commitments: list[Digest] = []
        self._comm_set: set[Digest] = set()
        self._reg_tags: set[Digest] = set()
        self._train_tags: set[Digest] = set()
        self._committees = {c.committee_id: _CommitteeStatus(c) for c in params.committees}
        self._by_fingerprint: dict[Digest, str] = {}
        self._headers: dict[tuple[str, int], tuple[int, RoundHeader]] = {}
        self._messages: list[AcceptedMessage] = []
        self._partials: dict[tuple[str, int], list[tuple[int, PartialDecryptionPost]]] = {}
        self._round_ends: dict[tuple[str, int], RoundEnd] = {}
        self._counts: list[tuple[int, int, int, int, int]] = []
        self._trees: dict[tuple[str, int], merkle.MerkleTree] = {}
        self._state_acc = bytes(DIGEST_SIZE)
        # genesis
        self.pending.append(BoardEntry(SYSTEM_PARAMS, params.to_bytes()))
        self.seal_block()

    # sids ------------------------------------------------------------------------

    @property
    def current_sid(self) -> int:
        """Index of the last sealed block."""
        return len(self.blocks) - 1

    @property
    def next_sid(self) -> int:
        """Index of the block that pending entries will land in."""
        return len(self.blocks)

    # roots -------------------------------------------------------------------------

    def _tree_for(self, kind: str, count: int) -> merkle.MerkleTree | None:
        if count == 0:
            return None
        key = (kind, count)
        if key not in self._trees:
            leaves = self._cert_keys[:count] if kind == "cert" else self._commitments[:count]
            if kind == "cert":
                leaves = [key_leaf(pk) for pk in leaves]
            self._trees[key] = merkle.MerkleTree(tuple(leaves))
        return self._trees[key]

    def _root(self, kind: str, count: int) -> Digest:
        tree = self._tree_for(kind, count)
        return merkle.EMPTY_ROOT if tree is None else tree.root

    def tree(self, sid: int, kind: str) -> merkle.MerkleTree:
        """Merkle tree over certifier keys (``"cert"``) or commitments (``"client"``) at ``sid``."""
        self._check_sid(sid)
        n_cert, n_comm = self._counts[sid][:2]
        tree = self._tree_for(kind, n_cert if kind == "cert" else n_comm)
        if tree is None:
            raise NoSuchState(f"no {kind} entries at sid {sid}")
        return tree

    def _check_sid(self, sid: int) -> None:
        if not 0 <= sid <= self.current_sid:
            raise NoSuchState(f"sid {sid} not sealed (current {self.current_sid})")

    def cert_root(self, sid: int) -> Digest:
        self._check_sid(sid)
        return self.blocks[sid].cert_root

    def client_root(self, sid: int) -> Digest:
        self._check_sid(sid)
        return self.blocks[sid].client_root

    # reading ---------------------------------------------------------------------

    def read_state(self, sid: int) -> BoardState:
        self._check_sid(sid)
        n_cert, n_comm, n_reg, n_msg, _ = self._counts[sid]
        keys = {
            cid: st.public_key for cid, st in self._committees.items()
            if st.active_sid is not None and st.active_sid <= sid
        }
        headers = tuple(h for (s, h) in sorted(self._headers.values(), key=lambda x: (x[0], x[1].committee_id)) if s <= sid)
        return BoardState(
            sid, tuple(self._cert_keys[:n_cert]), tuple(self._commitments[:n_comm]),
            self.blocks[sid].cert_root, self.blocks[sid].client_root, keys, headers, n_reg, n_msg,
        )

    def committee_key(self, committee_id: str) -> PublicKey | None:
        st = self._committees.get(committee_id)
        return None if st is None or st.active_sid is None else st.public_key

    def committee_of(self, fingerprint: Digest) -> str | None:
        return self._by_fingerprint.get(fingerprint)

    def active_committees(self) -> list[str]:
        return [cid for cid, st in self._committees.items() if st.active_sid is not None]

    def header(self, committee_id: str, round_: int) -> RoundHeader:
        try:
            return self._headers[(committee_id, round_)][1]
        except KeyError:
            raise NoSuchRound(f"no round {round_} for committee {committee_id!r}") from None

    def latest_round(self, committee_id: str) -> int:
        rounds = [r for (cid, r) in self._headers if cid == committee_id]
        return max(rounds, default=0)

    def round_boundary(self, round_: int, committee_id: str | None = None) -> tuple[int, int]:
        if committee_id is None:
            matches = [h for (cid, r), (_, h) in sorted(self._headers.items()) if r == round_]
            if not matches:
                raise NoSuchRound(f"no round {round_}")
            h = matches[0]
        else:
            h = self.header(committee_id, round_)
        return h.start_sid, h.end_sid

    def round_closed(self, committee_id: str, round_: int) -> bool:
        """True once no further training message can land in the round."""
        return self.next_sid >= self.header(committee_id, round_).end_sid

    def open_round(self, committee_id: str) -> RoundHeader | None:
        s = self.next_sid
        for (cid, _), (_, h) in self._headers.items():
            if cid == committee_id and h.start_sid <= s < h.end_sid:
                return h
        return None

    def training_messages(self, round_: int | None = None) -> list[AcceptedMessage]:
        """Accepted training messages (sealed or pending), optionally for one round."""
        return [m for m in self._messages if round_ is None or m.round == round_]

    def partials(self, committee_id: str, round_: int) -> list[PartialVector]:
        return [p.partial(self.blobs) for _, p in self._partials.get((committee_id, round_), [])]

    def round_end(self, committee_id: str, round_: int) -> RoundEnd | None:
        return self._round_ends.get((committee_id, round_))

    def entries(self, kind: int | None = None):
        """(sid, entry) for every sealed entry, optionally filtered by kind."""
        for block in self.blocks:
            for e in block.entries:
                if kind is None or e.kind == kind:
                    yield block.sid, e

    # appending ---------------------------------------------------------------------

    def append(self, entry: BoardEntry) -> int:
        """Validate and queue ``entry``; returns the sid of the block that will hold it."""
        handler = _HANDLERS.get(entry.kind)
        if handler is None or entry.kind == SYSTEM_PARAMS:
            raise Rejected("Malformed", f"kind {entry.kind} cannot be appended")
        handler(self, entry)
        self.pending.append(entry)
        self._state_acc = hash_bytes(self._state_acc + entry.digest, BOARD_ENTRY)
        return self.next_sid

    def seal_block(self) -> Block:
        """Seal pending entries (possibly none: a heartbeat block) into the next block."""
        sid = self.next_sid
        cert_root = self._root("cert", len(self._cert_keys))
        client_root = self._root("client", len(self._commitments))
        active = pack(*(
            pack(cid.encode(), st.public_key.fingerprint) for cid, st in sorted(self._committees.items())
            if st.public_key is not None and len(st.postings) >= st.info.t
        ))
        state = hash_bytes(pack(u64(sid), self._state_acc, cert_root, client_root, active), BOARD_ENTRY)
        prev = self.blocks[-1].digest if self.blocks else GENESIS_PREV
        block = Block(sid, tuple(self.pending), prev, state, cert_root, client_root)
        self.blocks.append(block)
        self.pending = []
        for st in self._committees.values():
            if st.active_sid is None and st.public_key is not None and len(st.postings) >= st.info.t:
                st.active_sid = sid
        self._counts.append((len(self._cert_keys), len(self._commitments), len(self._comm_set),
                             len(self._messages), len(self._train_tags)))
        return block

    def advance(self, blocks: int = 1) -> None:
        for _ in range(blocks):
            self.seal_block()

    # validation --------------------------------------------------------------------

    def _signed(self, entry: BoardEntry, pk: bytes) -> None:
        if not check_sig(pk, entry_message(entry.kind, entry.payload), entry.signature):
            raise Rejected("SigInvalid", f"{entry.kind_name} signature does not verify")

    def _parse(self, entry: BoardEntry):
        try:
            return entry.parsed()
        except (DecodeError, ValueError, UnicodeDecodeError) as exc:
            raise Rejected("Malformed", str(exc)) from None

    def _fresh(self, sid: int) -> None:
        if sid > self.current_sid:
            raise Rejected("StaleSid", f"sid {sid} is not sealed yet")
        if sid < self.current_sid - self.params.freshness_window:
            raise Rejected("StaleSid", f"sid {sid} is older than the freshness window")

    def _verify_proof(self, relation: int, stmt, proof: bytes) -> None:
        if not self.check_proofs:
            return
        try:
            ok = zkrel.verify(relation, stmt, proof, self.verifier, self.params.extensions)
        except (BadBackend, DecodeError, ValueError):
            ok = False
        if not ok:
            raise Rejected("ProofInvalid", "proof does not verify against the referenced state")

    def _member_key(self, committee_id: str, index: int) -> bytes:
        st = self._committees.get(committee_id)
        if st is None or not 1 <= index <= st.info.n:
            raise Rejected("UnknownSigner", f"no member {index} in committee {committee_id!r}")
        return st.info.members[index - 1]

    def _owner_key(self, committee_id: str) -> bytes:
        st = self._committees.get(committee_id)
        if st is None:
            raise Rejected("UnknownSigner", f"no committee {committee_id!r}")
        return st.info.owner_pk

    def _on_certifier_key(self, entry: BoardEntry) -> None:
        p = self._parse(entry)
        if p.cert_pk not in self.params.certifiers:
            raise Rejected("UnknownSigner", "certifier key not in the trusted registry")
        self._signed(entry, p.cert_pk)
        if p.cert_pk in self._cert_keys:
            raise Rejected("DuplicateKey", "certifier key already posted")
        self._cert_keys.append(p.cert_pk)

    def _on_committee_key(self, entry: BoardEntry) -> None:
        p = self._parse(entry)
        self._signed(entry, self._member_key(p.committee_id, p.member_index))
        st = self._committees[p.committee_id]
        if p.member_index in st.postings:
            raise Rejected("DuplicateKey", "member already posted the committee key")
        try:
            pk = PublicKey.from_bytes(p.public_key)
        except DecodeError as exc:
            raise Rejected("Malformed", str(exc)) from None
        if pk.t != st.info.t or pk.members != st.info.n:
            raise Rejected("Malformed", "key threshold does not match the committee roster")
        if st.public_key is not None and st.public_key.to_bytes() != p.public_key:
            raise Rejected("Malformed", "members disagree on the committee key")
        if st.public_key is None and pk.fingerprint in self._by_fingerprint:
            raise Rejected("DuplicateKey", "key already used by another committee")
        st.public_key = pk
        st.postings[p.member_index] = p.public_key
        self._by_fingerprint[pk.fingerprint] = p.committee_id

    def _on_registration(self, entry: BoardEntry) -> None:
        p = self._parse(entry)
        self._signed(entry, p.pk_sig)
        if p.comm in self._comm_set:
            raise DuplicateCommitment("commitment already registered")
        if p.tag in self._reg_tags:
            raise DuplicateTag("registration tag already used")
        self._fresh(p.sid)
        stmt = zkrel.RegStatement(p.comm, p.tag, p.pk_sig, p.sid, self.blocks[p.sid].cert_root)
        self._verify_proof(zkrel.REGISTRATION, stmt, p.proof)
        self._comm_set.add(p.comm)
        self._reg_tags.add(p.tag)
        self._commitments.append(p.comm)

    def _on_initial_model(self, entry: BoardEntry) -> None:
        h = self._parse(entry)
        self._signed(entry, self._owner_key(h.committee_id))
        if self.committee_key(h.committee_id) is None:
            raise Rejected("Malformed", f"committee {h.committee_id!r} has no active key")
        if (h.committee_id, h.round) in self._headers:
            raise Rejected("Malformed", "round header already posted")
        if h.round != self.latest_round(h.committee_id) + 1:
            raise Rejected("Malformed", "rounds must be opened in order")
        if h.start_sid < self.next_sid or h.end_sid <= h.start_sid:
            raise Rejected("Malformed", "round window must lie in the future and be non-empty")
        if h.expected_participants < 1:
            raise Rejected("Malformed", "expected participants must be positive")
        try:
            model = unwrap_blob(h.model_field, self.blobs)
            model_from_bytes(model)
        except DecodeError as exc:
            raise Rejected("Malformed", str(exc)) from None
        if hash_bytes(model) != h.model_params_digest:
            raise Rejected("Malformed", "model digest mismatch")
        self._headers[(h.committee_id, h.round)] = (self.next_sid, h)

    def _on_training_message(self, entry: BoardEntry) -> None:
        m = self._parse(entry)
        self._signed(entry, m.pk_sig)
        if m.tag in self._train_tags:
            raise DuplicateTag("training tag already used")
        self._fresh(m.sid)
        if not m.ag_fingerprints or len(set(m.ag_fingerprints)) != len(m.ag_fingerprints):
            raise Rejected("Malformed", "AG must list distinct committees")
        cids = []
        for fp in m.ag_fingerprints:
            cid = self._by_fingerprint.get(fp)
            if cid is None or self._committees[cid].active_sid is None:
                raise Rejected("Malformed", "AG names an unknown or inactive committee")
            cids.append(cid)
        headers = [self.open_round(cid) for cid in cids]
        if any(h is None for h in headers):
            raise Rejected("RoundClosed", "no open round for every committee in AG")
        rounds = {h.round for h in headers}
        if len(rounds) != 1:
            raise Rejected("Malformed", "AG committees are in different rounds")
        try:
            vectors = m.ciphertexts(self.blobs)
        except (DecodeError, ValueError) as exc:
            raise Rejected("Malformed", str(exc)) from None
        keys = [self._committees[cid].public_key for cid in cids]
        if len(vectors) != len(keys):
            raise Rejected("Malformed", "one ciphertext vector per AG committee required")
        for vec, pk, h in zip(vectors, keys, headers):
            if vec.fingerprint != pk.fingerprint:
                raise Rejected("Malformed", "ciphertext vector under the wrong key")
            if len(vec) != len(h.model(self.blobs)) + 1:
                raise Rejected("Malformed", "ciphertext vector length does not match the model")
            n2 = pk.n2
            if any(not 0 < v < n2 for v in vec.values):
                raise Rejected("Malformed", "ciphertext outside Z_{N^2}")
        ext = self.params.extensions
        stmt = zkrel.TrainStatement(
            m.tag, m.pk_sig, m.sid, self.blocks[m.sid].client_root,
            cert_root=self.blocks[m.sid].cert_root if ext.dataset_type else b"",
            ag_keys=tuple(keys) if ext.ciphertext_wellformed else (),
            ag_dts=tuple(self._committees[c].info.dt for c in cids) if ext.dataset_type else (),
            ciphertexts=tuple(vectors) if ext.ciphertext_wellformed else (),
        )
        self._verify_proof(zkrel.TRAINING, stmt, m.proof)
        self._train_tags.add(m.tag)
        self._messages.append(AcceptedMessage(self.next_sid, rounds.pop(), m))

    def _on_round_end(self, entry: BoardEntry) -> None:
        p = self._parse(entry)
        self._signed(entry, self._owner_key(p.committee_id))
        try:
            h = self.header(p.committee_id, p.round)
        except NoSuchRound as exc:
            raise Rejected("Malformed", str(exc)) from None
        if self.next_sid < h.end_sid:
            raise Rejected("Malformed", "round has not ended")
        if (p.committee_id, p.round) in self._round_ends:
            raise Rejected("Malformed", "round already closed")
        self._round_ends[(p.committee_id, p.round)] = p

    def _on_partial(self, entry: BoardEntry) -> None:
        p = self._parse(entry)
        self._signed(entry, self._member_key(p.committee_id, p.member_index))
        try:
            h = self.header(p.committee_id, p.round)
        except NoSuchRound as exc:
            raise Rejected("Malformed", str(exc)) from None
        if self.next_sid < h.end_sid:
            raise Rejected("Malformed", "round has not ended")
        posted = self._partials.setdefault((p.committee_id, p.round), [])
        if any(q.member_index == p.member_index for _, q in posted):
            raise Rejected("DuplicateShare", "member already posted a partial decryption")
        try:
            part = p.partial(self.blobs)
        except (DecodeError, ValueError) as exc:
            raise Rejected("Malformed", str(exc)) from None
        pk = self._committees[p.committee_id].public_key
        if part.fingerprint != pk.fingerprint or part.share_index != p.member_index:
            raise Rejected("Malformed", "partial decryption does not match the member or key")
        posted.append((self.next_sid, p))

    # persistence ---------------------------------------------------------------------

    def save(self, path) -> None:
        save_log(self.blocks, path)
        if len(self.blobs):
            self.blobs.save(blob_path(path))

    def export_jsonl(self, path) -> None:
        export_jsonl(self.blocks, path)

    @property
    def head_digest(self) -> Digest:
        return self.blocks[-1].digest


_HANDLERS = {
    SYSTEM_PARAMS: None,
    CERTIFIER_KEY: Board._on_certifier_key,
    COMMITTEE_KEY: Board._on_committee_key,
    REGISTRATION: Board._on_registration,
    INITIAL_MODEL: Board._on_initial_model,
    TRAINING_MESSAGE: Board._on_training_message,
    ROUND_END: Board._on_round_end,
    PARTIAL_DECRYPTION: Board._on_partial,
}


# log files --------------------------------------------------------------------------

def blob_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".blobs")


def save_log(blocks, path) -> None:
    with Path(path).open("wb") as fh:
        for block in blocks:
            raw = block.to_bytes()
            fh.write(len(raw).to_bytes(4, "big") + raw)


def load_log(path) -> list[Block]:
    """Read length-prefixed block records.  Undecodable records raise DecodeError."""
    data = Path(path).read_bytes()
    blocks, pos = [], 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise DecodeError(f"truncated record header after block {len(blocks) - 1}")
        size = int.from_bytes(data[pos:pos + 4], "big")
        raw = data[pos + 4:pos + 4 + size]
        if len(raw) != size:
            raise DecodeError(f"truncated block record {len(blocks)}")
        blocks.append(Block.from_bytes(raw))
        pos += 4 + size
    return blocks


def load_raw_records(path) -> list[bytes]:
    """Split a log into raw records without decoding them."""
    data = Path(path).read_bytes()
    out, pos = [], 0
    while pos + 4 <= len(data):
        size = int.from_bytes(data[pos:pos + 4], "big")
        out.append(data[pos + 4:pos + 4 + size])
        pos += 4 + size
    if pos != len(data):
        out.append(data[pos:])
    return out


def export_jsonl(blocks, path) -> None:
    with Path(path).open("w") as fh:
        for block in blocks:
            fh.write(json.dumps(block.to_record(), sort_keys=True) + "\n")


@dataclass(frozen=True)
class ChainReport:
    ok: bool
    blocks: int
    first_bad_sid: int | None = None
    reason: str = ""
    head_digest: Digest = b""


def verify_chain(blocks_or_records, verifier: zkrel.TransparentBackend | None = None,
                 blobs: BlobStore | None = None) -> ChainReport:
    """Re-validate a whole chain by replaying every entry into a fresh board.

    Accepts decoded blocks or raw records (so that a record that no longer
    decodes is reported at its sid).  Proofs are re-checked only when the
    validator key is supplied.
    """
    items = list(blocks_or_records)
    if not items:
        return ChainReport(False, 0, 0, "empty log")

    def decode(i):
        item = items[i]
        if isinstance(item, Block):
            return item
        return Block.from_bytes(item)

    try:
        genesis = decode(0)
        params = SystemParams.from_bytes(genesis.entries[0].payload)
        if len(genesis.entries) != 1 or genesis.entries[0].kind != SYSTEM_PARAMS:
            raise DecodeError("genesis must hold exactly the system parameters")
    except (DecodeError, ValueError, IndexError, UnicodeDecodeError) as exc:
        return ChainReport(False, len(items), 0, f"genesis: {exc}")
    check = verifier is not None and verifier.can_verify
    try:
        replay = Board(params, verifier if check else None, blobs, check_proofs=check)
    except BadBackend as exc:
        return ChainReport(False, len(items), 0, str(exc))
    if _genesis_altered(items, decode):
        return ChainReport(False, len(items), 0, "genesis digest does not match block 1's prev_digest")
    for i in range(len(items)):
        try:
            block = decode(i)
        except (DecodeError, ValueError, UnicodeDecodeError) as exc:
            return ChainReport(False, len(items), i, f"undecodable block: {exc}")
        if i > 0:
            try:
                for entry in block.entries:
                    replay.append(entry)
            except Rejected as exc:
                return ChainReport(False, len(items), i, f"entry rejected on replay: {exc}")
            except (DecodeError, ValueError) as exc:
                return ChainReport(False, len(items), i, f"entry malformed: {exc}")
            replay.seal_block()
        expected = replay.blocks[i]
        if block.sid != i:
            return ChainReport(False, len(items), i, "sid out of sequence")
        if block.prev_digest != expected.prev_digest:
            return ChainReport(False, len(items), i, "prev_digest does not match the previous block")
        if block.digest != expected.digest:
            return ChainReport(False, len(items), i, "block contents differ from the replayed state")
    return ChainReport(True, len(items), None, "", replay.head_digest)


def _genesis_altered(items, decode) -> bool:
    """True when block 1 does not link to the genesis block as given.

    Replay derives its parameters from the genesis block, so it cannot
    notice an altered genesis by itself.  Block 1's prev_digest pins it.  An
    alteration of block 1's own prev_digest breaks the link 1 -> 2 as well,
    and replay attributes that to block 1.
    """
    try:
        blocks = [decode(i) for i in range(min(3, len(items)))]
    except (DecodeError, ValueError, UnicodeDecodeError):
        return False
    if len(blocks) < 2 or blocks[1].prev_digest == blocks[0].digest:
        return False
    return len(blocks) < 3 or blocks[2].prev_digest == blocks[1].digest


def dump_state(board: Board, sid: int) -> dict:
    """Human-facing summary of one snapshot (used by ``board inspect``)."""
    st = board.read_state(sid)
    block = board.blocks[sid]
    return {
        "sid": sid,
        "block_digest": block.digest.hex(),
        "prev_digest": block.prev_digest.hex(),
        "state_digest": block.state_digest.hex(),
        "cert_root": st.cert_root.hex(),
        "client_root": st.client_root.hex(),
        "certifier_keys": len(st.cert_keys),
        "commitments": len(st.commitments),
        "active_committees": sorted(st.committee_keys),
        "rounds": [{"committee": h.committee_id, "round": h.round, "start_sid": h.start_sid,
                    "end_sid": h.end_sid, "expected_participants": h.expected_participants}
                   for h in st.headers],
        "entries": [e.kind_name for e in block.entries],
    }


def board_from_blocks(blocks, blobs: BlobStore | None = None) -> Board:
    """Rebuild an in-memory board (without proof checks) from a trusted log."""
    params = SystemParams.from_bytes(blocks[0].entries[0].payload)
    board = Board(params, None, blobs, check_proofs=False)
    for block in blocks[1:]:
        for e in block.entries:
            board.append(e)
        board.seal_block()
    return board
