"""Executable security games: the PAFL oracle, AnonGame and D-IndGame.

Every trial runs in a fresh sandbox (a full :class:`Deployment`).  The
challenger's bit ``b`` and all randomness are seeded, so a trial is a pure
function of its seed and ``b``; running one seed under both bits gives the
two-world transcripts compared by :func:`two_world_diff`.

Statistical runs only *demonstrate* the properties: an advantage near zero
with a tight interval says the built-in adversaries find no signal, not that
no adversary could.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import dp as dpmod
from . import trainer
from .board import INITIAL_MODEL, PARTIAL_DECRYPTION, REGISTRATION, TRAINING_MESSAGE, BoardEntry
from .errors import InvalidGame, ProtocolError
from .paillier import ThresholdKeyMaterial
from .parties import Client
from .protocol import Deployment, TaskSpec, generate_keys
from .rng import Rng

TASK = "A"

# fields that may differ between the two worlds: IND-CPA ciphertexts, sealed
# proofs, the PRF tag and the signature over a message containing them
ENCRYPTED_FIELDS = frozenset({"ciphertexts", "proof", "tag", "signature"})


# results ----------------------------------------------------------------------------

def wilson_interval(wins: int, trials: int, z: float = 1.959964) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    p = wins / trials
    den = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass
class GameResult:
    game: str
    adversary: str
    trials: int
    adversary_wins: int
    invalid_trials: int = 0
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.adversary_wins <= self.trials:
            raise ValueError("wins must lie in [0, trials]")

    @property
    def win_rate(self) -> float:
        return self.adversary_wins / self.trials if self.trials else float("nan")

    @property
    def advantage(self) -> float:
        return abs(self.win_rate - 0.5)

    @property
    def interval(self) -> tuple[float, float]:
        """95% Wilson interval for the win rate."""
        return wilson_interval(self.adversary_wins, self.trials)

    @property
    def advantage_upper(self) -> float:
        lo, hi = self.interval
        return max(abs(lo - 0.5), abs(hi - 0.5))

    @property
    def binomial_sigma(self) -> float:
        return math.sqrt(0.25 / self.trials) if self.trials else float("nan")

    def to_dict(self) -> dict:
        lo, hi = self.interval
        return {
            "game": self.game,
            "adversary": self.adversary,
            "trials": self.trials,
            "adversary_wins": self.adversary_wins,
            "invalid_trials": self.invalid_trials,
            "win_rate": self.win_rate,
            "advantage": self.advantage,
            "win_rate_ci95": [lo, hi],
            "advantage_ci95_upper": self.advantage_upper,
            "binomial_sigma": self.binomial_sigma,
            "notes": self.notes,
            "caveat": "statistical demonstration against the built-in adversary, not a proof",
        }


# sandbox -----------------------------------------------------------------------------

@dataclass(frozen=True)
class GameConfig:
    seed: int = 0
    key_bits: int = 512
    t: int = 2
    n: int = 3
    committees: int = 2
    decoys: int = 2
    background: int = 2  # honest clients training in every round
    n_features: int = 4
    n_classes: int = 2
    samples: int = 100
    lr: float = 1.0
    separation: float = 3.0
    dp: dpmod.DPParams | None = None
    strict: bool = True
    key_pool: int = 4
    fixed_ag_order: bool = False
    leak_registration_sid: bool = False


_KEY_CACHE: dict[tuple, list[ThresholdKeyMaterial]] = {}


def key_pool(cfg: GameConfig) -> list[ThresholdKeyMaterial]:
    """Committee keys are pre-generated once per configuration and reused across trials."""
    k = (cfg.seed, cfg.key_bits, cfg.t, cfg.n, cfg.key_pool, cfg.committees)
    if k not in _KEY_CACHE:
        size = max(cfg.key_pool, cfg.committees)
        _KEY_CACHE[k] = generate_keys(size, cfg.t, cfg.n, cfg.key_bits, Rng(("game-keys", *k)))
    return _KEY_CACHE[k]


@dataclass(frozen=True)
class AccessResult:
    round: int
    participants: int
    update: np.ndarray | None
    model_before: np.ndarray
    model_after: np.ndarray


@dataclass(frozen=True)
class OracleCommand:
    kind: str  # Setup | Register | Train | Access | Corrupt | EndRound | BeginRound
    party: str | None = None
    aux: object = None


class PAFLOracle:
    """Command interface over one sandboxed deployment.

    Adversaries hold only this object.  What they can observe is the board
    (:meth:`view`), results of :meth:`access` and whatever :meth:`corrupt`
    returns.
    """

    def __init__(self, cfg: GameConfig, seed: object):
        self.cfg = cfg
        self.seed = seed
        self._rng = Rng(("sandbox", cfg.seed, seed))
        self._data_rng = self._rng.numpy("population")
        self.centers = trainer.blob_centers(cfg.n_features, cfg.n_classes, np.random.default_rng(cfg.seed),
                                             cfg.separation)
        self.dep: Deployment | None = None
        self.honest: dict[str, Client] = {}
        self.corrupted: set = set()
        self.background: list[str] = []
        self.round_open = False
        self.round_participants: dict[int, set[str]] = {}
        self.accessed: set[int] = set()
        self.finalized: dict[int, AccessResult] = {}
        self.busy: set[str] = set()  # clients the adversary may not train this round
        self.protected: set[str] = set()  # challenge clients; corrupting them voids the game
        self.violations: list[str] = []
        self._counter = 0

    # helpers ---------------------------------------------------------------------

    @property
    def round(self) -> int:
        return self.dep.round if self.dep else 0

    def population(self, size: int, rng: np.random.Generator | None = None) -> trainer.LocalDataset:
        """A sample from the public data distribution."""
        return trainer.gaussian_blobs(size, self.cfg.n_features, self.cfg.n_classes, rng or self._data_rng,
                                      centers=self.centers)

    def _violation(self, message: str) -> None:
        if self.cfg.strict:
            raise InvalidGame(message)
        self.violations.append(message)

    def _train_cfg(self):
        return self.dep.config_for(TASK, self.cfg.dp)

    # commands --------------------------------------------------------------------

    def execute(self, cmd: OracleCommand):
        handler = {
            "Setup": lambda: self.setup(),
            "Register": lambda: self.register(cmd.party, cmd.aux),
            "Train": lambda: self.train(cmd.party),
            "Access": lambda: self.access(),
            "Corrupt": lambda: self.corrupt(cmd.party, cmd.aux),
            "BeginRound": lambda: self.begin_round(),
            "EndRound": lambda: self.end_round(),
        }.get(cmd.kind)
        if handler is None:
            raise ProtocolError(f"unknown command {cmd.kind!r}")
        return handler()

    def setup(self, security_parameter: int = 128) -> None:
        if self.dep is not None:
            raise ProtocolError("Setup may only run once")
        cfg = self.cfg
        pool = key_pool(cfg)
        start = int.from_bytes(self._rng.child("pool-offset").bytes(2), "big")
        keys = [pool[(start + i) % len(pool)] for i in range(cfg.committees)]
        template = trainer.init_model(trainer.LOGREG, cfg.n_features, cfg.n_classes)
        names = [TASK] + [chr(ord("B") + i) for i in range(cfg.committees - 1)]
        tasks = [TaskSpec(cid, template, cfg.lr) for cid in names]
        self.dep = Deployment(self._rng.child("deployment"), tasks, keys, decoys=cfg.decoys, round_blocks=1)
        for i in range(cfg.background):
            name = f"honest-{i}"
            self._add_client(name, self.population(cfg.samples))
            self.background.append(name)
        self.dep.board.seal_block()

    def _require_setup(self) -> None:
        if self.dep is None:
            raise ProtocolError("Setup has not run")

    def _add_client(self, name: str, dataset: trainer.LocalDataset) -> Client:
        client = self.dep.new_client(name, dataset, TASK, seal=False)
        client.fixed_ag_order = self.cfg.fixed_ag_order
        client.leak_registration_sid = self.cfg.leak_registration_sid
        self.honest[name] = client
        return client

    def register(self, name: str | None = None, aux=None) -> str:
        """Register an honest client.  ``aux`` may carry ``{"dataset": LocalDataset}``."""
        self._require_setup()
        if self.round_open:
            raise ProtocolError("registration happens between rounds")
        if name is None:
            self._counter += 1
            name = f"client-{self._counter}"
        if name in self.honest:
            raise ProtocolError(f"client {name} already exists")
        dataset = (aux or {}).get("dataset")
        if dataset is None:
            dataset = self.population(self.cfg.samples)
        self._add_client(name, dataset)
        self.dep.board.seal_block()
        return name

    def registration_entry(self, name: str) -> BoardEntry:
        """The registration information (aux) of a client, as it sits on the board."""
        sid = self.honest[name].registration_sid
        for s, e in self.dep.board.entries(REGISTRATION):
            if s == sid and e.parsed().comm == self.honest[name].comm:
                return e
        raise ProtocolError(f"no registration for {name}")

    def begin_round(self) -> int:
        """Open a round; background honest clients train immediately."""
        self._require_setup()
        if self.round_open:
            raise ProtocolError("a round is already open")
        expected = max(2, len(self.background))  # two honest participants is the floor
        self.dep.open_round({TASK: expected})
        self.dep.enter_window()
        self.round_open = True
        self.busy = set()
        self.round_participants[self.round] = set()
        for name in self.background:
            if name not in self.corrupted:
                self._train(name)
        return self.round

    def _train(self, name: str, rng: Rng | None = None) -> None:
        client = self.honest[name]
        client.submit_update(self.dep.board, self.round, self.dep.prover, self._train_cfg(), rng=rng)
        self.round_participants[self.round].add(name)

    def train(self, name: str, aux=None) -> None:
        self._require_setup()
        if not self.round_open:
            raise ProtocolError("no open round")
        if name not in self.honest or name in self.corrupted:
            raise ProtocolError(f"{name} is not an honest client")
        if name in self.busy or name in self.round_participants[self.round]:
            raise ProtocolError(f"{name} cannot train again this round")
        self._train(name)

    def challenge_train(self, name: str, rng: Rng, lock: tuple[str, ...] = ()) -> None:
        """Train on behalf of the challenger; ``lock`` clients stay untrainable this round."""
        self._train(name, rng)
        self.busy |= set(lock)

    def end_round(self) -> None:
        self._require_setup()
        if not self.round_open:
            raise ProtocolError("no open round")
        dep = self.dep
        r = self.round
        before = dep.owners[TASK].model.values.copy()
        dep.close_window()
        dep.decrypt_round()
        results = dep.finalize()
        self.round_open = False
        res = results[TASK]
        self.finalized[r] = AccessResult(r, res.participants, res.update, before, dep.owners[TASK].model.values.copy())
        honest_in_round = {n for n in self.round_participants[r] if n not in self.corrupted}
        if len(honest_in_round) < 2:
            self._violation(f"round {r} had {len(honest_in_round)} honest participants")

    def access(self) -> AccessResult:
        self._require_setup()
        if self.round_open:
            raise ProtocolError("Access is only available at the end of a round")
        r = self.round
        if r not in self.finalized:
            raise ProtocolError("no finalized round to access")
        if r in self.accessed:
            raise ProtocolError(f"round {r} was already accessed")
        self.accessed.add(r)
        return self.finalized[r]

    def corrupt(self, party, aux=None):
        """Hand a party's secret state to the adversary.

        ``party`` is a client name, ``("member", committee_id, index)`` or
        ``("owner", committee_id)``.  The validator holds the proof-opening
        key and is trusted.
        """
        self._require_setup()
        if isinstance(party, tuple) and party[0] == "member":
            _, cid, idx = party
            committee = self.dep.committees[cid]
            self.corrupted.add(party)
            count = sum(1 for p in self.corrupted if isinstance(p, tuple) and p[0] == "member" and p[1] == cid)
            if count > committee.n - committee.t:
                self._violation(f"more than n - t members of {cid} corrupted")
            return committee.material.shares[idx - 1]
        if isinstance(party, tuple) and party[0] == "owner":
            self.corrupted.add(party)
            owner = self.dep.owners[party[1]]
            return {"model": owner.model, "sk": owner.keypair.sk}
        if party == "validator":
            raise ProtocolError("the validator is a trusted party in this model")
        if party not in self.honest:
            raise ProtocolError(f"unknown party {party!r}")
        if party in self.protected:
            self._violation(f"challenge client {party} corrupted")
        if any(party in names for names in self.round_participants.values()):
            self._violation(f"{party} participated in a round and must stay honest")
        self.corrupted.add(party)
        c = self.honest[party]
        return {"msk": c.master.sk, "mpk": c.master.pk, "salt": c.salt, "dataset": c.dataset,
                "certificate": c.certificate, "comm": c.comm}

    # views ---------------------------------------------------------------------------

    def view(self) -> list[BoardEntry]:
        """Every entry on the board, sealed then pending, in order."""
        board = self.dep.board
        return [e for _, e in board.entries()] + list(board.pending)

    def round_model(self, round_: int) -> np.ndarray:
        return self.dep.board.header(TASK, round_).model(self.dep.board.blobs)

    def finish(self) -> None:
        if self.round_open:
            self.end_round()


# anonymity adversaries --------------------------------------------------------------

def shingles(data: bytes, k: int = 8) -> set[bytes]:
    return {data[i:i + k] for i in range(0, max(0, len(data) - k + 1))}


class AnonAdversary:
    name = "base"

    def choose(self, oracle: PAFLOracle) -> tuple[str, str]:
        """Register the two challenge candidates; may interact freely before the challenge."""
        self.cl = (oracle.register(), oracle.register())
        return self.cl

    def pre_challenge(self, oracle: PAFLOracle) -> None:
        self.mark = len(oracle.view())

    def guess(self, oracle: PAFLOracle) -> int:
        return 0


class IgnoreAdversary(AnonAdversary):
    """Looks at nothing and always answers 0."""

    name = "ignore"


class _ProbingAdversary(AnonAdversary):
    """Registers both candidates, then trains each once in a probe round and
    remembers which entry each Train command produced."""

    def choose(self, oracle):
        cl = super().choose(oracle)
        self.known = {i: [oracle.registration_entry(c)] for i, c in enumerate(cl)}
        oracle.begin_round()
        for i, c in enumerate(cl):
            before = len(oracle.view())
            oracle.train(c)
            self.known[i].extend(oracle.view()[before:])
        oracle.end_round()
        return cl

    def challenge_message(self, oracle) -> BoardEntry:
        new = [e for e in oracle.view()[self.mark:] if e.kind == TRAINING_MESSAGE]
        return new[0]


def field_tokens(entry: BoardEntry, blobs=None, k: int = 16, skip=("ag_pk",)) -> set:
    """Comparable pieces of an entry.

    Integer fields are keyed by entry kind and field name, short byte
    values are kept whole and long ones cut into ``k``-byte
    shingles.  Ciphertext fields are split into their individual values so
    that framing bytes never count as content.
    """
    out = {("v", entry.signature)}
    payload = entry.parsed()
    for name, value in payload.fields().items():
        if name in skip:
            continue
        if name == "ciphertexts":
            out |= {("c", int(c)) for vec in payload.ciphertexts(blobs) for c in vec.values}
            continue
        if isinstance(value, int):
            out.add((entry.kind_name, name, value))
            continue
        if isinstance(value, str):
            value = value.encode()
        out.add(("v", value))
        if len(value) > k:
            out |= {("s", x) for x in shingles(value, k)}
    return out


class TranscriptAdversary(_ProbingAdversary):
    """Links the challenge message to a candidate through shared field content.

    Everything known to come from a candidate (its registration entry, the
    block that entry landed in, its probe message) is cut into field values
    and long shingles.  A piece counts as evidence only if it is specific to
    that candidate: absent from the other candidate's material and from every
    other entry on the board.  The guess is the candidate with more evidence
    inside the challenge message.  AG ordering is left to the timing
    adversary.
    """

    name = "transcript"

    def choose(self, oracle):
        cl = super().choose(oracle)
        self.tokens = {}
        for i, c in enumerate(cl):
            sid = oracle.honest[c].registration_sid
            blobs = oracle.dep.board.blobs
            self.tokens[i] = set().union(*(field_tokens(e, blobs) for e in self.known[i]))
            self.tokens[i].add(("TrainingMessage", "sid", sid))
        return cl

    def guess(self, oracle):
        challenge = self.challenge_message(oracle)
        blobs = oracle.dep.board.blobs
        ch = field_tokens(challenge, blobs)
        mine = {e.digest for i in (0, 1) for e in self.known[i]} | {challenge.digest}
        rest = set()
        for e in oracle.view():
            if e.digest not in mine:
                rest |= field_tokens(e, blobs)
        score = [len(ch & (self.tokens[i] - self.tokens[1 - i] - rest)) for i in (0, 1)]
        return 1 if score[1] > score[0] else 0


class TimingAdversary(_ProbingAdversary):
    """Matches the challenge message's AG order against each candidate's probe."""

    name = "timing"

    def guess(self, oracle):
        ch = self.challenge_message(oracle).parsed()
        probe = [next(e for e in self.known[i] if e.kind == TRAINING_MESSAGE).parsed() for i in (0, 1)]
        match = [probe[i].ag_fingerprints == ch.ag_fingerprints for i in (0, 1)]
        return 1 if match[1] and not match[0] else 0


class AggregateDifferenceAdversary(AnonAdversary):
    """Reads an individual update out of a round with a single participant.

    Registers the candidates on data it chose (opposite labels), then
    compares the challenge round's decrypted update with each candidate's
    gradient on that round's model.  Only works when the game lets a round
    run with one honest participant.
    """

    name = "aggdiff"

    def choose(self, oracle):
        cfg = oracle.cfg
        base = oracle.population(cfg.samples, np.random.default_rng(4242))
        self.datasets = [trainer.LocalDataset(base.X, np.full(base.size, k % cfg.n_classes), base.n_classes)
                         for k in (0, 1)]
        self.cl = tuple(oracle.register(aux={"dataset": d}) for d in self.datasets)
        return self.cl

    def guess(self, oracle):
        oracle.end_round()
        acc = oracle.access()
        if acc.update is None:
            return 0
        cfg = oracle.cfg
        model = trainer.init_model(trainer.LOGREG, cfg.n_features, cfg.n_classes).with_values(acc.model_before)
        d = [float(np.linalg.norm(acc.update - trainer.local_gradient(model, x))) for x in self.datasets]
        return 1 if d[1] < d[0] else 0


ANON_ADVERSARIES = {
    "transcript": TranscriptAdversary,
    "timing": TimingAdversary,
    "aggdiff": AggregateDifferenceAdversary,
    "ignore": IgnoreAdversary,
}


# dataset-privacy adversaries ---------------------------------------------------------

class DIndAdversary:
    """Base class.  Subclasses register a helper client on known data so that
    the challenge round has the two honest participants the game requires."""

    name = "base"

    def choose_datasets(self, oracle: PAFLOracle) -> tuple[trainer.LocalDataset, trainer.LocalDataset]:
        raise NotImplementedError

    def add_helper(self, oracle: PAFLOracle) -> None:
        self.helper_data = oracle.population(oracle.cfg.samples, np.random.default_rng(999))
        self.helper = oracle.register("helper", {"dataset": self.helper_data})

    def guess(self, oracle: PAFLOracle) -> int:
        oracle.train(self.helper)
        return 0


class IgnoreDIndAdversary(DIndAdversary):
    name = "ignore"

    def choose_datasets(self, oracle):
        d = oracle.population(oracle.cfg.samples, np.random.default_rng(1))
        self.add_helper(oracle)
        return d, d


class LossThresholdAdversary(DIndAdversary):
    """Membership inference from the published model step.

    ``neighbor`` datasets differ in one record (an outlier with a flipped
    label replaces the first record); ``far`` datasets share features but
    carry opposite labels throughout.  The adversary registers a helper
    client on data it knows and trains it next to the challenge client, so
    the round meets the two-honest-participants rule.  It reads the averaged
    update through Access, predicts that update under each choice (helper
    gradient, candidate gradient, and a population estimate for any other
    participants) and guesses the closer prediction.
    """

    name = "loss-threshold"

    def __init__(self, mode: str = "neighbor"):
        if mode not in ("neighbor", "far"):
            raise ValueError("mode must be 'neighbor' or 'far'")
        self.mode = mode

    def choose_datasets(self, oracle):
        cfg = oracle.cfg
        base = oracle.population(cfg.samples, np.random.default_rng(12345))
        if self.mode == "neighbor":
            c0 = oracle.centers[0]
            X1 = base.X.copy()
            y1 = base.y.copy()
            X1[0] = 4.0 * c0 / max(np.linalg.norm(c0), 1e-9)
            y1[0] = (base.y[0] + 1) % cfg.n_classes
            self.datasets = (base, trainer.LocalDataset(X1, y1, base.n_classes))
        else:
            self.datasets = (trainer.LocalDataset(base.X, np.zeros(base.size), base.n_classes),
                             trainer.LocalDataset(base.X, np.ones(base.size), base.n_classes))
        self.add_helper(oracle)
        return self.datasets

    def _gradient(self, model, data, cfg) -> np.ndarray:
        if cfg.dp is None:
            return trainer.local_gradient(model, data)
        return dpmod.clip_rows(trainer.per_example_gradients(model, data), cfg.dp.clip).mean(axis=0)

    def guess(self, oracle):
        oracle.train(self.helper)
        oracle.finish()
        acc = oracle.access()
        cfg = oracle.cfg
        if acc.update is None:
            return 0
        model = trainer.init_model(trainer.LOGREG, cfg.n_features, cfg.n_classes).with_values(acc.model_before)
        background = self._gradient(model, self.helper_data, cfg)
        others = acc.participants - 2
        if others > 0:
            sample = oracle.population(cfg.samples * others, np.random.default_rng(54321))
            background = background + others * self._gradient(model, sample, cfg)
        pred = [(background + self._gradient(model, d, cfg)) / acc.participants for d in self.datasets]
        dist = [float(np.linalg.norm(acc.update - p)) for p in pred]
        return 1 if dist[1] < dist[0] else 0


class TranscriptOnlyDIndAdversary(DIndAdversary):
    """Never calls Access; searches the board for bytes of either dataset."""

    name = "transcript-only"

    def choose_datasets(self, oracle):
        self._datasets = LossThresholdAdversary("far").choose_datasets(oracle)
        self.helper = "helper"
        return self._datasets

    def guess(self, oracle):
        oracle.train(self.helper)
        oracle.finish()
        board = b"".join(e.to_bytes() for e in oracle.view())
        hits = []
        for d in self._datasets:
            raw = d.to_bytes()
            hits.append(sum(1 for i in range(24, len(raw) - 16, 64) if raw[i:i + 16] in board))
        return 1 if hits[1] > hits[0] else 0


DIND_ADVERSARIES = {
    "loss-threshold": lambda: LossThresholdAdversary("neighbor"),
    "loss-threshold-far": lambda: LossThresholdAdversary("far"),
    "transcript-only": TranscriptOnlyDIndAdversary,
    "ignore": IgnoreDIndAdversary,
}


# harnesses ---------------------------------------------------------------------------

def challenge_bits(trials: int, rng: Rng) -> list[int]:
    """Balanced challenge bits in seeded random order (variance reduction)."""
    bits = [0] * (trials // 2) + [1] * (trials // 2)
    if trials % 2:
        bits.append(rng.child("odd").randbelow(2))
    rng.shuffle(bits)
    return bits


def _make_adversary(adversary, table):
    if isinstance(adversary, str):
        if adversary not in table:
            raise ValueError(f"unknown adversary {adversary!r}; choose from {sorted(table)}")
        return table[adversary]()
    return adversary() if isinstance(adversary, type) else adversary


def anon_trial(cfg: GameConfig, trial: int, b: int, adversary) -> tuple[int, PAFLOracle]:
    """One AnonGame trial; returns the adversary's guess and the oracle."""
    adv = _make_adversary(adversary, ANON_ADVERSARIES)
    oracle = PAFLOracle(cfg, ("anon", trial))
    oracle.setup()
    cl = adv.choose(oracle)
    if len(set(cl)) != 2 or any(c not in oracle.honest or c in oracle.corrupted for c in cl):
        raise InvalidGame("challenge clients must be two distinct honest clients")
    a, c = (oracle.honest[x] for x in cl)
    if set(a.ag) != set(c.ag) or a.target != c.target:
        raise InvalidGame("challenge clients must share their training activity and decoy set")
    if oracle.round_open:
        oracle.end_round()
    oracle.protected |= set(cl)
    oracle.begin_round()
    adv.pre_challenge(oracle)
    oracle.challenge_train(cl[b], Rng(("challenger", cfg.seed, trial)), lock=cl)
    guess = adv.guess(oracle)
    oracle.finish()
    return guess, oracle


def run_anon_game(trials: int, adversary, cfg: GameConfig = GameConfig()) -> GameResult:
    name = adversary if isinstance(adversary, str) else getattr(adversary, "name", str(adversary))
    bits = challenge_bits(trials, Rng(("anon-bits", cfg.seed)))
    wins = invalid = 0
    for i, b in enumerate(bits):
        guess, oracle = anon_trial(cfg, i, b, adversary)
        if oracle.violations:
            invalid += 1
        wins += int(guess == b)
    return GameResult("anon", name, trials, wins, invalid,
                      {"strict": cfg.strict, "background": cfg.background,
                       "fixed_ag_order": cfg.fixed_ag_order, "leak_registration_sid": cfg.leak_registration_sid})


def dind_trial(cfg: GameConfig, trial: int, b: int, adversary) -> tuple[int, PAFLOracle]:
    adv = _make_adversary(adversary, DIND_ADVERSARIES)
    oracle = PAFLOracle(cfg, ("dind", trial))
    oracle.setup()
    d0, d1 = adv.choose_datasets(oracle)
    name = oracle.register("challenge-client", {"dataset": (d0, d1)[b]})
    oracle.protected.add(name)
    oracle.begin_round()
    oracle.challenge_train(name, Rng(("challenger", cfg.seed, trial)), lock=(name,))
    guess = adv.guess(oracle)
    oracle.finish()
    return guess, oracle


def run_dind_game(trials: int, adversary, cfg: GameConfig = GameConfig()) -> GameResult:
    name = adversary if isinstance(adversary, str) else getattr(adversary, "name", str(adversary))
    bits = challenge_bits(trials, Rng(("dind-bits", cfg.seed)))
    wins = invalid = 0
    for i, b in enumerate(bits):
        guess, oracle = dind_trial(cfg, i, b, adversary)
        if oracle.violations:
            invalid += 1
        wins += int(guess == b)
    notes = {"strict": cfg.strict, "background": cfg.background, "dp": cfg.dp.to_dict() if cfg.dp else None}
    if cfg.dp is not None:
        gamma = dpmod.gamma_bound(cfg.dp.epsilon, cfg.dp.delta)
        notes["gamma"] = gamma
        notes["threshold"] = gamma + 3 * math.sqrt(0.25 / trials)
    return GameResult("dind", name, trials, wins, invalid, notes)


def dind_threshold(epsilon: float, delta: float, trials: int) -> float:
    """gamma plus three binomial standard deviations of the win rate."""
    return dpmod.gamma_bound(epsilon, delta) + 3 * math.sqrt(0.25 / trials)


# two-world comparison ----------------------------------------------------------------

@dataclass
class WorldDiff:
    entries_compared: int
    differing_fields: list[tuple[int, str, str]]
    structural: list[tuple[int, str, str]]

    @property
    def ok(self) -> bool:
        return not self.structural


def _entry_fields(entry: BoardEntry) -> dict:
    out = {"kind": entry.kind, "signature": entry.signature}
    out.update(entry.parsed().fields())
    return out


def _prefix(oracle: PAFLOracle, challenge_round: int) -> list[BoardEntry]:
    """Entries up to the point where the challenge round is decrypted."""
    out = []
    for e in oracle.view():
        if e.kind == PARTIAL_DECRYPTION and e.parsed().round == challenge_round:
            break
        out.append(e)
    return out


def two_world_diff(cfg: GameConfig = GameConfig(), trial: int = 0, adversary="transcript") -> WorldDiff:
    """Run one trial seed under b=0 and b=1 and diff the boards field by field."""
    worlds = []
    for b in (0, 1):
        _, oracle = anon_trial(cfg, trial, b, adversary)
        worlds.append(_prefix(oracle, oracle.round))
    w0, w1 = worlds
    differing, structural = [], []
    if len(w0) != len(w1):
        structural.append((min(len(w0), len(w1)), "*", "entry count"))
    for i, (e0, e1) in enumerate(zip(w0, w1)):
        f0, f1 = _entry_fields(e0), _entry_fields(e1)
        if f0.keys() != f1.keys():
            structural.append((i, str(e0.kind), "field set"))
            continue
        for k in f0:
            if f0[k] != f1[k]:
                row = (i, e0.kind_name, k)
                differing.append(row)
                if k not in ENCRYPTED_FIELDS:
                    structural.append(row)
    return WorldDiff(min(len(w0), len(w1)), differing, structural)
