"""Wiring for a complete deployment: validator, certifiers, committees, owners, clients.

:class:`Deployment` drives the block schedule of a round so that scenario
runs, security games and tests all exercise the same workflow:

1. owners post round headers (opening the window one block later),
2. clients post training messages inside the window,
3. once the window has passed, committees aggregate and post partials,
4. owners combine, step their models and post ``RoundEnd``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import paillier, trainer, zkrel
from .board import DEFAULT_FRESHNESS, BlobStore, Board, SystemParams
from .errors import EmptyRound
from .paillier import ThresholdKeyMaterial
from .parties import (
    DEFAULT_DECOYS,
    DEFAULT_ROUND_BLOCKS,
    Certifier,
    Client,
    Committee,
    ModelOwner,
    RoundResult,
    TrainingConfig,
)
from .rng import Rng


@dataclass(frozen=True)
class TaskSpec:
    """One training activity: a committee plus the model its owner trains."""

    committee_id: str
    template: trainer.ModelParams
    lr: float
    dt: bytes = b""


@dataclass
class Deployment:
    rng: Rng
    tasks: list[TaskSpec]
    keys: list[ThresholdKeyMaterial]
    n_certifiers: int = 1
    extensions: zkrel.Extensions = zkrel.NO_EXTENSIONS
    storage_offload: bool = False
    freshness_window: int = DEFAULT_FRESHNESS
    round_blocks: int = DEFAULT_ROUND_BLOCKS
    scale_bits: int = 16
    decoys: int = DEFAULT_DECOYS
    clients: list[Client] = field(default_factory=list)

    def __post_init__(self):
        rng = self.rng
        self.validator = zkrel.TransparentBackend.generate(rng.child("validator"))
        self.prover = self.validator.prover()
        self.certifiers = [Certifier(f"certifier-{i}", rng) for i in range(self.n_certifiers)]
        self.owners = {
            task.committee_id: ModelOwner(task.committee_id, task.template, task.lr, rng,
                                          self.round_blocks, self.scale_bits)
            for task in self.tasks
        }
        self.committees = {
            task.committee_id: Committee(task.committee_id, km, rng, self.owners[task.committee_id].keypair.pk, task.dt)
            for task, km in zip(self.tasks, self.keys)
        }
        params = SystemParams(
            self.validator.public_key,
            tuple(c.public_key for c in self.certifiers),
            tuple(c.info() for c in self.committees.values()),
            self.extensions, self.freshness_window, self.storage_offload, self.scale_bits,
        )
        self.board = Board(params, self.validator, BlobStore())
        for c in self.certifiers:
            c.post_key(self.board)
        for c in self.committees.values():
            c.post_keys(self.board)
        self.board.seal_block()
        self.round = 0

    @property
    def task_ids(self) -> list[str]:
        return [t.committee_id for t in self.tasks]

    def config_for(self, committee_id: str, dp=None, weighted: bool = False) -> TrainingConfig:
        # the template only fixes architecture and shape; values come from the board
        return TrainingConfig(self.owners[committee_id].model, dp, weighted)

    # clients -------------------------------------------------------------------------

    def new_client(self, name: str, dataset: trainer.LocalDataset, target: str, certifier: int = 0,
                   dt: bytes | None = None, register: bool = True, seal: bool = True) -> Client:
        # dataset types only exist when the extension is on; default to the task's type
        if not self.extensions.dataset_type:
            dt = None
        elif dt is None:
            dt = next(t.dt for t in self.tasks if t.committee_id == target)
        client = Client(name, dataset, self.rng.child("client", name), dt)
        client.obtain_certificate(self.certifiers[certifier])
        if register:
            client.register(self.board, self.prover)
        client.choose_ag(self.board, target, self.decoys)
        self.clients.append(client)
        if seal:
            self.board.seal_block()
        return client

    # rounds ---------------------------------------------------------------------------

    def open_round(self, expected: dict[str, int] | int) -> int:
        """Post every task's round header and seal; returns the round number."""
        for cid, owner in self.owners.items():
            n = expected if isinstance(expected, int) else expected.get(cid, 1)
            owner.start_round(self.board, n)
        self.board.seal_block()
        self.round = max(o.round for o in self.owners.values())
        return self.round

    def enter_window(self) -> None:
        """Seal heartbeat blocks until the current round's window is open."""
        cid = self.task_ids[0]
        start, _ = self.board.round_boundary(self.round, cid)
        while self.board.next_sid < start:
            self.board.seal_block()

    def close_window(self) -> None:
        cid = self.task_ids[0]
        _, end = self.board.round_boundary(self.round, cid)
        while self.board.next_sid < end:
            self.board.seal_block()

    def decrypt_round(self, committee_ids=None, members=None) -> dict[str, bool]:
        """Aggregate and post partials for each committee; False where the round was empty."""
        out = {}
        for cid in committee_ids or self.task_ids:
            committee = self.committees[cid]
            try:
                committee.aggregate_round(self.board, self.round)
            except EmptyRound:
                out[cid] = False
                continue
            committee.post_partials(self.board, self.round, members)
            out[cid] = True
        self.board.seal_block()
        return out

    def finalize(self) -> dict[str, RoundResult]:
        results = {cid: owner.finalize_round(self.board, self.round) for cid, owner in self.owners.items()}
        self.board.seal_block()
        return results

    def run_round(self, participants, configs: dict[str, TrainingConfig], expected=None) -> dict[str, RoundResult]:
        """One full round with the given clients submitting."""
        participants = list(participants)
        if expected is None:
            expected = {cid: max(1, sum(1 for c in participants if c.target == cid)) for cid in self.task_ids}
        self.open_round(expected)
        self.enter_window()
        for client in participants:
            client.submit_update(self.board, self.round, self.prover, configs[client.target])
        self.close_window()
        self.decrypt_round()
        return self.finalize()


def generate_keys(count: int, t: int, n: int, key_bits: int, rng: Rng) -> list[ThresholdKeyMaterial]:
    return [paillier.keygen(n, t, key_bits, rng.child("committee-key", i)) for i in range(count)]
