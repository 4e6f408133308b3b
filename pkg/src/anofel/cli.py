"""Command line: scenario runs, security games, board inspection, DP calibration."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import dp as dpmod
from .board import (
    BlobStore,
    blob_path,
    board_from_blocks,
    dump_state,
    load_log,
    load_raw_records,
    verify_chain,
)
from .errors import AnofelError
from .games import ANON_ADVERSARIES, DIND_ADVERSARIES, GameConfig, run_anon_game, run_dind_game
from .scenario import ScenarioConfig, run_scenario
from .zkrel import TransparentBackend

REPORT_DIR_ENV = "ANOFEL_REPORT_DIR"


def report_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get(REPORT_DIR_ENV) or "reports")


def bundled_scenarios() -> list[str]:
    root = resources.files("anofel") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def resolve_config(name: str) -> ScenarioConfig:
    path = Path(name)
    if path.exists():
        return ScenarioConfig.load(path)
    ref = resources.files("anofel") / "scenarios" / f"{name}.toml"
    if not ref.is_file():
        raise FileNotFoundError(f"no config file {name!r} and no bundled scenario of that name "
                                f"(bundled: {', '.join(bundled_scenarios())})")
    with resources.as_file(ref) as p:
        return ScenarioConfig.load(p)


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


# subcommands ------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = resolve_config(args.config)
    overrides = {}
    if args.rounds is not None:
        overrides["rounds"] = args.rounds
    if args.engine:
        overrides["engine"] = args.engine
    if args.seed is not None:
        overrides["crypto_seed"] = overrides["data_seed"] = args.seed
    if args.no_dp:
        overrides["dp"] = None
    if overrides:
        cfg = replace(cfg, **overrides)
        cfg.validate()
    report = run_scenario(cfg)
    paths = report.save(report_dir(args.out))
    for rec in report.rounds:
        parts = "  ".join(f"{t.committee_id}: n={t.participants} acc={t.accuracy:.4f}" for t in rec.tasks)
        print(f"round {rec.round:3d}  registrations={rec.registrations:2d}  {parts}")
    print(f"final accuracy: {report.final['accuracy']}")
    if report.baseline:
        print(f"clear baseline: {report.baseline}")
    if report.dp_comparison:
        d = report.dp_comparison
        print(f"DP vs non-DP: {d['dp_accuracy']:.4f} vs {d['nodp_accuracy']:.4f} "
              f"(delta {d['delta_points']:+.2f} points)")
    if report.chain_ok is not None:
        print(f"chain verified: {report.chain_ok}")
    print(f"report digest: {report.digest()}")
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0 if report.chain_ok in (None, True) else 1


def cmd_game(args) -> int:
    dp = None
    if args.game == "dind" and not args.no_dp:
        dp = dpmod.DPParams(args.epsilon, args.delta, args.clip, args.samples)
    cfg = GameConfig(seed=args.seed, key_bits=args.key_bits, background=args.background, samples=args.samples,
                     dp=dp, strict=not args.permissive, fixed_ag_order=args.fixed_ag_order,
                     leak_registration_sid=args.leak_registration_sid)
    if args.game == "anon":
        result = run_anon_game(args.trials, args.adversary, cfg)
    else:
        result = run_dind_game(args.trials, args.adversary, cfg)
    out = result.to_dict()
    _print_json(out)
    directory = report_dir(args.out)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"game-{args.game}-{args.adversary}.json"
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return 0


def _load_blobs(log: Path) -> BlobStore | None:
    bp = blob_path(log)
    return BlobStore.load(bp) if bp.exists() else None


def cmd_inspect(args) -> int:
    log = Path(args.log)
    blocks = load_log(log)
    board = board_from_blocks(blocks, _load_blobs(log))
    if args.sid is not None:
        if not 0 <= args.sid <= board.current_sid:
            print(f"sid {args.sid} out of range 0..{board.current_sid}", file=sys.stderr)
            return 2
        _print_json(dump_state(board, args.sid))
        return 0
    print(f"blocks: {len(blocks)}  head: {board.head_digest.hex()}")
    for block in blocks:
        kinds = {}
        for e in block.entries:
            kinds[e.kind_name] = kinds.get(e.kind_name, 0) + 1
        desc = ", ".join(f"{k} x{v}" for k, v in kinds.items()) or "(empty)"
        print(f"  sid {block.sid:4d}  {block.digest.hex()[:16]}  {desc}")
    return 0


def cmd_verify(args) -> int:
    log = Path(args.log)
    verifier = None
    key = Path(args.validator_key) if args.validator_key else log.with_name(log.name.replace(".board", ".validator.key"))
    if key.exists() and key != log:
        sk = bytes.fromhex(key.read_text().strip())
        from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey
        from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

        pk = X25519PrivateKey.from_private_bytes(sk).public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        verifier = TransparentBackend(pk, sk)
    report = verify_chain(load_raw_records(log), verifier, _load_blobs(log))
    if report.ok:
        proofs = "with proofs" if verifier else "without proofs (no validator key)"
        print(f"OK: {report.blocks} blocks verified {proofs}; head {report.head_digest.hex()}")
        return 0
    print(f"FAIL at sid {report.first_bad_sid}: {report.reason}", file=sys.stderr)
    return 1


def cmd_dp(args) -> int:
    params = dpmod.DPParams(args.epsilon, args.delta, args.clip, args.size, args.exposures, args.rounds)
    desc = dpmod.describe(params)
    if args.json:
        _print_json(desc)
        return 0
    print(f"S_f   = {desc['sensitivity']!r}")
    print(f"c     = {desc['c']:.10f}")
    print(f"sigma = {desc['sigma']:.10f}")
    print(f"gamma = {desc['gamma']:.10f}")
    print(f"alpha = {desc['alpha']:.10f}  (k = {args.rounds}, constant 1)")
    return 0


# parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anofel", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario config end to end")
    run.add_argument("config", help="path to a TOML config, or a bundled scenario name")
    run.add_argument("--rounds", type=int)
    run.add_argument("--engine", choices=["protocol", "reference"])
    run.add_argument("--seed", type=int, help="set both crypto and data seeds")
    run.add_argument("--no-dp", action="store_true")
    run.add_argument("--out", help=f"report directory (default ${REPORT_DIR_ENV} or ./reports)")
    run.set_defaults(func=cmd_run)

    game = sub.add_parser("game", help="run a security game")
    game.add_argument("game", choices=["anon", "dind"])
    game.add_argument("--adversary", default=None)
    game.add_argument("--trials", type=int, default=100)
    game.add_argument("--seed", type=int, default=0)
    game.add_argument("--key-bits", type=int, default=512)
    game.add_argument("--background", type=int, default=None)
    game.add_argument("--samples", type=int, default=100)
    game.add_argument("--epsilon", type=float, default=0.9)
    game.add_argument("--delta", type=float, default=1e-5)
    game.add_argument("--clip", type=float, default=1.0)
    game.add_argument("--no-dp", action="store_true")
    game.add_argument("--permissive", action="store_true", help="record rule violations instead of aborting")
    game.add_argument("--fixed-ag-order", action="store_true")
    game.add_argument("--leak-registration-sid", action="store_true")
    game.add_argument("--out")
    game.set_defaults(func=cmd_game)

    board = sub.add_parser("board", help="inspect or verify a saved board log")
    bsub = board.add_subparsers(dest="board_command", required=True)
    ins = bsub.add_parser("inspect")
    ins.add_argument("log")
    ins.add_argument("--sid", type=int)
    ins.set_defaults(func=cmd_inspect)
    ver = bsub.add_parser("verify-chain")
    ver.add_argument("log")
    ver.add_argument("--validator-key")
    ver.set_defaults(func=cmd_verify)

    dpc = sub.add_parser("dp", help="differential privacy calibration")
    dsub = dpc.add_subparsers(dest="dp_command", required=True)
    calc = dsub.add_parser("calc")
    calc.add_argument("--epsilon", type=float, default=0.9)
    calc.add_argument("--delta", type=float, default=1e-5)
    calc.add_argument("--clip", type=float, default=1.0)
    calc.add_argument("--size", type=int, default=100, help="local dataset size |D|")
    calc.add_argument("--exposures", type=int, default=1, help="T")
    calc.add_argument("--rounds", type=int, default=1, help="k, for the accuracy-loss scale")
    calc.add_argument("--json", action="store_true")
    calc.set_defaults(func=cmd_dp)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "game":
        if args.adversary is None:
            args.adversary = "transcript" if args.game == "anon" else "loss-threshold"
        table = ANON_ADVERSARIES if args.game == "anon" else DIND_ADVERSARIES
        if args.adversary not in table:
            print(f"unknown adversary {args.adversary!r}; choose from {sorted(table)}", file=sys.stderr)
            return 2
        if args.background is None:
            args.background = 2 if args.game == "anon" else 0
    try:
        return args.func(args)
    except (AnofelError, FileNotFoundError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
