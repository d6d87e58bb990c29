import json

import pytest
from hypothesis import given, strategies as st

from bahalt import attacks as A
from bahalt import core, protocols as P
from bahalt.adversary import AdversaryStrategy, abort_action, select_action
from bahalt.core import ConfigurationError, Execution, StrategyViolation, pack_public, unpack_public


def test_envelope_round_trip():
    p = pack_public(0xBEEF, 2, b"set", b"\x01")
    assert unpack_public(p) == (0xBEEF, b"set", b"\x01")
    assert core.coin_width(2**64) == 8
    assert core.coin_width(2) == 1
    with pytest.raises(ValueError):
        unpack_public(p[:3])


def test_honest_majority_examples():
    spec = P.one_round_majority(9)
    assert core.run_honest(spec, (0,) * 9).outputs == (0,) * 9
    assert set(core.run_honest(spec, (0,) * 3 + (1,) * 3 + (0,) * 3).outputs) == {0}
    assert set(core.run_honest(spec, (1,) * 6 + (0,) * 3).outputs) == {1}


def test_input_length_and_bits_checked():
    spec = P.one_round_majority(3)
    with pytest.raises(ConfigurationError):
        core.run_honest(spec, (0, 1))
    with pytest.raises(ConfigurationError):
        core.run_honest(spec, (0, 1, 2))


@given(st.integers(min_value=0, max_value=2**20), st.lists(st.integers(0, 1), min_size=7, max_size=7))
def test_runs_are_pure_functions_of_the_seed(seed, inputs):
    spec = P.micali_lite(7, 2, 3)
    a = core.run_honest(spec, inputs, seed)
    b = core.run_honest(spec, inputs, seed)
    assert a.to_jsonl() == b.to_jsonl()


def test_coins_come_from_declared_domains():
    spec = P.micali_lite(5, 1, 2)
    tr = core.run_honest(spec, (0, 1, 0, 1, 1), seed=4)
    for r, row in enumerate(tr.coins, start=1):
        assert all(0 <= c < spec.coin_domain(r) for c in row)


def test_public_payloads_carry_the_coins():
    spec = P.two_round_coin_majority(5, 1)
    tr = core.run_honest(spec, (0, 0, 0, 1, 1), seed=9)
    for rec in tr.rounds:
        for s in range(5):
            coin, _, _ = unpack_public(rec.multicast[s])
            assert coin == tr.coins[rec.round - 1][s]


def test_halting_beyond_budget_reads_as_abort_output():
    spec = P.micali_lite(4, 1, 3).truncated(1)
    tr = core.run_honest(spec, (0, 0, 0, 0), seed=1)
    assert tr.halt_round == (None,) * 4
    assert tr.outputs == (None,) * 4
    assert not core.halted_by(tr, 1, range(4))


def test_out_of_range_parties_rejected():
    tr = core.run_honest(P.one_round_majority(3), (0, 0, 0))
    with pytest.raises(ConfigurationError):
        core.outputs_of(tr, [3])
    with pytest.raises(ConfigurationError):
        core.halted_by(tr, 1, [-1])


def test_jsonl_has_header_and_one_line_per_round():
    tr = core.run_honest(P.micali_lite(4, 1, 2), (0, 1, 0, 1), seed=2)
    lines = tr.to_jsonl().splitlines()
    assert len(lines) == 1 + len(tr.rounds)
    assert json.loads(lines[0])["protocol"] == "micali-lite"


def test_messages_mark_silence_as_abort():
    spec = P.one_round_majority(3)
    adv = AdversaryStrategy(budget=1, initial={0}, chooser=lambda r, a: {0: [(None, abort_action())]})
    tr = core.run(spec, (1, 0, 0), adv)
    aborts = [m for m in tr.messages(1) if m.sender == 0]
    assert all(m.is_abort and m.payload == b"" for m in aborts)


def test_budget_is_enforced():
    spec = P.one_round_majority(3)
    with pytest.raises(ConfigurationError):
        core.run(spec, (0, 0, 0), AdversaryStrategy(budget=1, initial={0, 1}))
    grab = AdversaryStrategy(budget=1, initial={0}, adaptive=lambda r, a: {1})
    with pytest.raises(ConfigurationError):
        core.run(P.micali_lite(3, 1, 2), (0, 0, 0), grab)


def test_claiming_an_undelivered_payload_is_refused():
    spec = P.micali_lite(4, 1, 2)

    def chooser(r, adv):
        if r == 1:
            return {}
        inbox = adv.inbox(0)
        fake = list(inbox[0])
        fake[1] = pack_public(123, 8, b"", b"\x01")
        return {0: [(None, select_action(0, (tuple(fake),) + inbox[1:]))]}

    adv = AdversaryStrategy(budget=1, initial={0}, chooser=chooser)
    with pytest.raises(StrategyViolation):
        core.run(spec, (0, 1, 0, 1), adv)


def test_rushing_gate():
    spec = P.one_round_majority(3)
    seen = {}

    def peek(r, adv):
        try:
            seen["got"] = adv.delivered(0, r, 1)
        except PermissionError:
            seen["got"] = "hidden"
        return {}

    core.run(spec, (0, 1, 0), AdversaryStrategy(budget=1, initial={0}, chooser=peek))
    assert seen["got"] == "hidden"
    core.run(spec, (0, 1, 0), AdversaryStrategy(budget=1, initial={0}, chooser=peek, rushing=True))
    assert seen["got"] == (b"\x01",)


def test_private_coins_stay_private():
    spec = P.beacon_protocol(4, 1, 2)

    def chooser(r, adv):
        with pytest.raises(PermissionError):
            adv.public_coins(r)
        with pytest.raises(PermissionError):
            adv.coins(1)
        return {}

    core.run(spec, (0, 0, 1, 1), AdversaryStrategy(budget=1, initial={0}, chooser=chooser))


@given(st.integers(0, 10_000))
def test_non_rushing_messages_ignore_current_honest_coins(seed):
    """Resampling honest round-two coins leaves corrupted round-two payloads alone."""
    spec = P.two_round_coin_majority(9, 3)
    geom = A.attack_geometry(9, 3, A.QUARTER, A.SECOND_ROUND_ARB)
    adv = A.second_round_static_attack(spec, geom)
    base = Execution(spec, geom.v0, adv, seed)
    base.step()
    coins2 = [c for c in base.fork()._sample_coins(2)]
    other = [1 - c if i not in base.corrupted else c for i, c in enumerate(coins2)]
    runs = []
    for cs in (coins2, other):
        x = base.fork()
        x.coin_override[2] = tuple(cs)
        x.record = True
        x.records = []
        x.step()
        rec = x.records[-1]
        runs.append({c: [rec.delivered(c, j) for j in range(9)] for c in sorted(x.corrupted)})
    assert runs[0] == runs[1]


def test_fork_is_independent():
    spec = P.micali_lite(4, 1, 3)
    x = Execution(spec, (0, 1, 0, 1), None, 3)
    x.step()
    y = x.fork()
    y.step()
    assert x.round == 1 and y.round == 2
    x.step()
    assert x.inbox == y.inbox


def test_crash_coins_drop_the_party():
    spec = P.two_round_coin_majority(5, 1)
    tr = core.run(spec, (0,) * 5, None, 0, coins={2: (None, 0, 1, 0, 1)})
    assert 0 in tr.dropped and 0 not in tr.honest
