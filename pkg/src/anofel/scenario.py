"""Reproducible end-to-end runs: config in, deterministic report out."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import dp as dpmod
from . import trainer, zkrel
from .board import REGISTRATION, verify_chain
from .crypto import hash_bytes
from .errors import ConfigError
from .parties import Client, TrainingConfig
from .protocol import Deployment, TaskSpec, generate_keys
from .rng import Rng

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

ENGINES = ("protocol", "reference")
PARTITIONS = ("iid", "label-shards")
DATASETS = ("digits", "blobs")


@dataclass(frozen=True)
class DPSettings:
    epsilon: float
    delta: float
    clip: float = 1.0
    exposures: int = 1

    def params(self, dataset_size: int, rounds: int = 1) -> dpmod.DPParams:
        return dpmod.DPParams(self.epsilon, self.delta, self.clip, dataset_size, self.exposures, rounds)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    clients: int = 16
    committees: int = 1
    t: int = 2
    n: int = 3
    decoys: int = 1  # size u of each client's AG set, target included
    rounds: int = 10
    key_bits: int = 512
    scale_bits: int = 16
    round_blocks: int = 2
    # task
    dataset: str = "digits"
    partition: str = "iid"
    shards_per_client: int = 2
    standardize: bool = True
    random_features: int = 0
    test_fraction: float = 0.2
    lr: float = 1.0
    weighted: bool = False
    blob_samples: int = 1600
    # privacy
    dp: DPSettings | None = None
    # participation
    late_joiners: int = 0
    join_round: int = 1
    skip_prob: float = 0.0
    # seeds: keys and protocol randomness vs data split and partition
    crypto_seed: int = 0
    data_seed: int = 0
    # flags
    engine: str = "protocol"
    compare_dp: bool = True
    clear_baseline: bool = True
    storage_offload: bool = False
    dataset_type_extension: bool = False
    wellformed_extension: bool = False
    verify: bool = True

    def validate(self) -> None:
        def need(ok, msg):
            if not ok:
                raise ConfigError(msg)

        need(self.clients >= 1, "clients must be at least 1")
        need(self.committees >= 1, "committees must be at least 1")
        need(1 <= self.t <= self.n, f"need 1 <= t <= n, got t={self.t}, n={self.n}")
        need(1 <= self.decoys <= self.committees, "decoys (AG size) must be between 1 and committees")
        need(self.rounds >= 1, "rounds must be at least 1")
        need(self.key_bits >= 256, "key_bits must be at least 256")
        need(8 <= self.scale_bits <= 40, "scale_bits must lie in [8, 40]")
        need(self.round_blocks >= 1, "round_blocks must be at least 1")
        need(self.dataset in DATASETS, f"dataset must be one of {DATASETS}")
        need(self.partition in PARTITIONS, f"partition must be one of {PARTITIONS}")
        need(self.engine in ENGINES, f"engine must be one of {ENGINES}")
        need(0 < self.test_fraction < 1, "test_fraction must lie in (0, 1)")
        need(self.lr > 0, "lr must be positive")
        need(self.random_features >= 0, "random_features must be non-negative")
        need(0 <= self.late_joiners < self.clients, "late_joiners must leave at least one initial client")
        need(1 <= self.join_round <= self.rounds, "join_round must be a round of the run")
        need(0 <= self.skip_prob < 1, "skip_prob must lie in [0, 1)")
        need(self.shards_per_client >= 1, "shards_per_client must be at least 1")
        if self.dp is not None:
            self.dp.params(1)  # runs DPParams validation

    @property
    def dp_params(self) -> dpmod.DPParams | None:
        # dataset_size is filled in by each client from its own data
        return None if self.dp is None else self.dp.params(1, self.rounds)

    @property
    def extensions(self) -> zkrel.Extensions:
        return zkrel.Extensions(self.dataset_type_extension, self.wellformed_extension)

    @classmethod
    def from_dict(cls, raw: dict) -> ScenarioConfig:
        raw = dict(raw)
        flat = {}
        for section in ("federation", "task", "participation", "flags"):
            flat.update(raw.pop(section, {}))
        seeds = raw.pop("seeds", {})
        if "crypto" in seeds:
            flat["crypto_seed"] = seeds["crypto"]
        if "data" in seeds:
            flat["data_seed"] = seeds["data"]
        dp = raw.pop("dp", None)
        flat.update(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(flat) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if dp is not None and dp.get("enabled", True):
            dp = {k: v for k, v in dp.items() if k != "enabled"}
            flat["dp"] = DPSettings(**dp)
        cfg = cls(**flat)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> ScenarioConfig:
        with Path(path).open("rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


# report -------------------------------------------------------------------------------

@dataclass
class TaskRound:
    committee_id: str
    updates: int
    participants: int
    aggregate_digest: str
    loss: float
    accuracy: float


@dataclass
class RoundRecord:
    round: int
    registrations: int
    tasks: list[TaskRound]
    dp: dict | None = None


@dataclass
class RunReport:
    config: dict
    engine: str
    parameters: int
    rounds: list[RoundRecord] = field(default_factory=list)
    final: dict = field(default_factory=dict)
    board_digest: str = ""
    chain_ok: bool | None = None
    baseline: dict | None = None
    dp_comparison: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, directory) -> dict[str, Path]:
        """Write the report, and for protocol runs the board log and validator key."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        name = self.config["name"]
        out = {"report": directory / f"{name}.report.json"}
        out["report"].write_text(self.to_json() + "\n")
        dep = getattr(self, "deployment", None)
        if dep is not None:
            out["board"] = directory / f"{name}.board"
            dep.board.save(out["board"])
            out["validator_key"] = directory / f"{name}.validator.key"
            out["validator_key"].write_text(dep.validator.private_bytes().hex() + "\n")
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def digest(self) -> str:
        return hash_bytes(self.to_json().encode()).hex()

    def accuracy(self, committee_id: str | None = None) -> float:
        accs = self.final["accuracy"]
        return accs[committee_id] if committee_id else float(np.mean(list(accs.values())))


# data -------------------------------------------------------------------------------

@dataclass
class Workload:
    train: trainer.LocalDataset
    test: trainer.LocalDataset
    shards: list[trainer.LocalDataset]
    template: trainer.ModelParams


def build_workload(cfg: ScenarioConfig) -> Workload:
    rng = np.random.default_rng(cfg.data_seed)
    if cfg.dataset == "digits":
        data = trainer.digits()
    else:
        centers = trainer.blob_centers(8, 4, rng, 2.0)
        data = trainer.gaussian_blobs(cfg.blob_samples, 8, 4, rng, centers=centers)
    train, test = trainer.split(data, cfg.test_fraction, rng)
    if cfg.standardize:
        train, test = trainer.standardize(train, test)
    if cfg.random_features:
        fmap = trainer.random_features(cfg.random_features, train.n_features, rng)
        train, test = fmap(train), fmap(test)
    if cfg.partition == "iid":
        shards = trainer.partition_iid(train, cfg.clients, rng)
    else:
        shards = trainer.partition_label_shards(train, cfg.clients, rng, cfg.shards_per_client)
    template = trainer.init_model(trainer.LOGREG, train.n_features, train.n_classes)
    return Workload(train, test, shards, template)


def task_ids(cfg: ScenarioConfig) -> list[str]:
    return [chr(ord("A") + i) for i in range(cfg.committees)]


def schedule(cfg: ScenarioConfig) -> list[list[int]]:
    """Client indices active in each round (1-based rounds -> list index r-1)."""
    rng = np.random.default_rng([cfg.data_seed, 7])
    first_late = cfg.clients - cfg.late_joiners
    out = []
    for r in range(1, cfg.rounds + 1):
        active = [i for i in range(cfg.clients) if i < first_late or r >= cfg.join_round]
        if cfg.skip_prob:
            keep = rng.random(len(active)) >= cfg.skip_prob
            active = [i for i, k in zip(active, keep) if k]
        out.append(active)
    return out


def _dp_record(cfg: ScenarioConfig, sizes, round_: int) -> dict | None:
    if cfg.dp is None:
        return None
    desc = dpmod.describe(cfg.dp.params(min(sizes), cfg.rounds))
    alpha = dpmod.alpha_bound(desc["sensitivity"], round_, cfg.dp.delta, cfg.dp.epsilon)
    return {"S_f": desc["sensitivity"], "sigma": desc["sigma"], "gamma": desc["gamma"], "alpha": alpha}


# engines ----------------------------------------------------------------------------

def _run_protocol(cfg: ScenarioConfig, work: Workload, report: RunReport) -> dict:
    ids = task_ids(cfg)
    crng = Rng(("scenario-crypto", cfg.crypto_seed))
    keys = generate_keys(cfg.committees, cfg.t, cfg.n, cfg.key_bits, crng.child("keys"))
    tasks = [TaskSpec(cid, work.template, cfg.lr) for cid in ids]
    dep = Deployment(crng.child("deployment"), tasks, keys, extensions=cfg.extensions,
                     storage_offload=cfg.storage_offload, round_blocks=cfg.round_blocks,
                     scale_bits=cfg.scale_bits, decoys=cfg.decoys)
    configs = {cid: dep.config_for(cid, cfg.dp_params, cfg.weighted) for cid in ids}
    plan = schedule(cfg)
    clients: dict[int, Client] = {}
    for r, active in enumerate(plan, start=1):
        regs_before = sum(1 for _ in dep.board.entries(REGISTRATION))
        for i in range(cfg.clients):
            joins = (i < cfg.clients - cfg.late_joiners and r == 1) or (i not in clients and r == cfg.join_round)
            if joins and i not in clients:
                clients[i] = dep.new_client(f"client-{i}", work.shards[i], ids[i % len(ids)], seal=False)
        dep.board.seal_block()
        registrations = sum(1 for _ in dep.board.entries(REGISTRATION)) - regs_before
        participants = [clients[i] for i in active]
        results = dep.run_round(participants, configs)
        rows = []
        for cid in ids:
            model = dep.owners[cid].model
            loss, acc = trainer.evaluate(model, work.test)
            res = results[cid]
            n_upd = sum(1 for m in dep.board.training_messages(r)
                        if dep.board.committee_key(cid).fingerprint in m.message.ag_fingerprints)
            rows.append(TaskRound(cid, n_upd, res.participants, res.aggregate_digest.hex(), loss, acc))
        report.rounds.append(RoundRecord(r, registrations, rows, _dp_record(cfg, [s.size for s in work.shards], r)))
    report.deployment = dep
    report.board_digest = dep.board.head_digest.hex()
    if cfg.verify:
        report.chain_ok = verify_chain(dep.board.blocks, dep.validator, dep.board.blobs).ok
    return {cid: dep.owners[cid].model for cid in ids}


def _run_reference(cfg: ScenarioConfig, work: Workload, report: RunReport) -> dict:
    """Same client update code and randomness, averaged in the clear."""
    ids = task_ids(cfg)
    crng = Rng(("scenario-crypto", cfg.crypto_seed)).child("deployment")
    models = {cid: work.template for cid in ids}
    clients = {i: Client(f"client-{i}", work.shards[i], crng.child("client", f"client-{i}"))
               for i in range(cfg.clients)}
    joined: set[int] = set()
    for r, active in enumerate(schedule(cfg), start=1):
        new = [i for i in range(cfg.clients)
               if i not in joined and ((i < cfg.clients - cfg.late_joiners) or r >= cfg.join_round)]
        joined |= set(new)
        rows = []
        for k, cid in enumerate(ids):
            mine = [clients[i] for i in active if i % len(ids) == k]
            tcfg = TrainingConfig(models[cid], cfg.dp_params, cfg.weighted)
            if mine:
                grads = [c.compute_update(models[cid], tcfg, r, len(mine)) for c in mine]
                count = sum(c.dataset.size for c in mine) if cfg.weighted else len(mine)
                avg = np.sum(grads, axis=0) / count
                models[cid] = trainer.apply_update(models[cid], avg, cfg.lr)
            loss, acc = trainer.evaluate(models[cid], work.test)
            rows.append(TaskRound(cid, len(mine), len(mine), "", loss, acc))
        report.rounds.append(RoundRecord(r, len(new), rows, _dp_record(cfg, [s.size for s in work.shards], r)))
    return models


def run_scenario(cfg: ScenarioConfig) -> RunReport:
    """Setup, ``cfg.rounds`` rounds, then comparisons against the baselines."""
    cfg.validate()
    work = build_workload(cfg)
    report = RunReport(cfg.to_dict(), cfg.engine, work.template.size)
    engine = _run_protocol if cfg.engine == "protocol" else _run_reference
    models = engine(cfg, work, report)
    final_acc = {}
    final_loss = {}
    for cid, model in models.items():
        final_loss[cid], final_acc[cid] = trainer.evaluate(model, work.test)
    report.final = {"accuracy": final_acc, "loss": final_loss,
                    "model_digest": {cid: hash_bytes(m.values.astype(">f8").tobytes()).hex() for cid, m in models.items()}}
    if cfg.clear_baseline:
        report.baseline = clear_baseline(cfg, work, models)
    if cfg.dp is not None and cfg.compare_dp:
        plain = run_scenario(replace(cfg, dp=None, compare_dp=False, clear_baseline=False, verify=False))
        dp_acc, nodp_acc = report.accuracy(), plain.accuracy()
        report.dp_comparison = {"dp_accuracy": dp_acc, "nodp_accuracy": nodp_acc,
                                "delta_points": 100.0 * (nodp_acc - dp_acc)}
    return report


def clear_baseline(cfg: ScenarioConfig, work: Workload, models: dict) -> dict:
    """Plain FedSGD over the same schedule; parameter gap reported only without DP."""
    ids = task_ids(cfg)
    plan = schedule(cfg)
    out = {"accuracy": {}, "max_abs_diff": {}}
    for k, cid in enumerate(ids):
        part = [[i for i in active if i % len(ids) == k] for active in plan]
        ref = trainer.fedsgd(work.template, work.shards, cfg.rounds, cfg.lr, part, cfg.weighted)
        out["accuracy"][cid] = trainer.evaluate(ref, work.test)[1]
        out["max_abs_diff"][cid] = float(np.max(np.abs(ref.values - models[cid].values))) if cfg.dp is None else None
    return out
