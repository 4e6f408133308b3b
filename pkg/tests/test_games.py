import math

import pytest

from anofel import dp as dpmod
from anofel.errors import InvalidGame, ProtocolError
from anofel.games import (
    GameConfig,
    OracleCommand,
    PAFLOracle,
    anon_trial,
    challenge_bits,
    dind_threshold,
    run_anon_game,
    run_dind_game,
    two_world_diff,
    wilson_interval,
)
from anofel.rng import Rng

CFG = GameConfig()


def test_wilson_interval_contains_rate():
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi
    assert wilson_interval(0, 10)[0] == 0.0
    assert wilson_interval(10, 10)[1] == pytest.approx(1.0)


def test_balanced_bits():
    bits = challenge_bits(100, Rng("b"))
    assert sum(bits) == 50
    assert bits != sorted(bits)


def test_threshold_formula():
    gamma = dpmod.gamma_bound(0.9, 1e-5)
    assert dind_threshold(0.9, 1e-5, 500) == pytest.approx(gamma + 3 * math.sqrt(0.25 / 500))


def test_oracle_happy_path_and_access_rules():
    o = PAFLOracle(CFG, "happy")
    o.execute(OracleCommand("Setup"))
    a = o.execute(OracleCommand("Register"))
    o.execute(OracleCommand("BeginRound"))
    o.execute(OracleCommand("Train", a))
    with pytest.raises(ProtocolError):
        o.execute(OracleCommand("Access"))
    o.execute(OracleCommand("EndRound"))
    acc = o.execute(OracleCommand("Access"))
    assert acc.participants == CFG.background + 1
    assert acc.update is not None
    with pytest.raises(ProtocolError):
        o.access()
    with pytest.raises(ProtocolError):
        o.setup()


def test_corrupting_too_many_members_voids_game():
    o = PAFLOracle(CFG, "corrupt")
    o.setup()
    share = o.corrupt(("member", "A", 1))
    assert share.index == 1
    with pytest.raises(InvalidGame):
        o.corrupt(("member", "A", 2))
    with pytest.raises(ProtocolError):
        o.corrupt("validator")


def test_permissive_mode_records_violations():
    o = PAFLOracle(GameConfig(strict=False), "perm")
    o.setup()
    o.corrupt(("member", "A", 1))
    o.corrupt(("member", "A", 2))
    assert o.violations


def test_sandboxes_are_deterministic():
    logs = []
    for _ in range(2):
        _, oracle = anon_trial(CFG, 3, 1, "transcript")
        logs.append([b.to_bytes() for b in oracle.dep.board.blocks])
    assert logs[0] == logs[1]


def test_ignore_adversary_is_a_coin_flip():
    res = run_anon_game(20, "ignore", CFG)
    assert res.win_rate == 0.5


def test_transcript_adversary_finds_nothing():
    res = run_anon_game(40, "transcript", CFG)
    assert res.invalid_trials == 0
    assert res.interval[0] < 0.5 < res.interval[1]


def test_transcript_adversary_catches_a_leak():
    res = run_anon_game(20, "transcript", GameConfig(leak_registration_sid=True))
    assert res.win_rate > 0.9


def test_timing_adversary_catches_fixed_order():
    fixed = run_anon_game(40, "timing", GameConfig(fixed_ag_order=True))
    fresh = run_anon_game(40, "timing", CFG)
    assert fixed.win_rate > fresh.win_rate
    assert fixed.win_rate > 0.7
    assert fresh.interval[0] < 0.5 < fresh.interval[1] or fresh.win_rate <= 0.5


def test_single_honest_participant_is_invalid_when_strict():
    cfg = GameConfig(background=0)
    with pytest.raises(InvalidGame):
        run_anon_game(2, "aggdiff", cfg)


def test_single_honest_participant_is_trivially_broken_when_permissive():
    res = run_anon_game(20, "aggdiff", GameConfig(background=0, strict=False))
    assert res.win_rate > 0.9
    assert res.invalid_trials == 20


def test_two_world_diff_only_touches_hidden_fields():
    diff = two_world_diff(CFG, trial=1)
    assert diff.entries_compared > 10
    assert diff.differing_fields
    assert diff.ok, diff.structural


def test_dind_without_dp_is_broken():
    res = run_dind_game(20, "loss-threshold", GameConfig(background=0))
    assert res.invalid_trials == 0
    assert res.advantage > 0.4


def test_dind_transcript_only_learns_nothing():
    res = run_dind_game(20, "transcript-only", GameConfig(background=0, dp=dpmod.DPParams(0.9, 1e-5, 1.0, 100)))
    assert res.win_rate == 0.5 or res.interval[0] < 0.5 < res.interval[1]


def test_game_result_serializes():
    res = run_dind_game(4, "ignore", GameConfig(background=0))
    d = res.to_dict()
    assert d["trials"] == 4 and "advantage" in d
