import json

import pytest
from hypothesis import given, strategies as st

from bahalt import attacks as A
from bahalt import core, protocols as P
from bahalt.adversary import (
    AdversaryStrategy,
    abort_action,
    check_message,
    select_action,
    split_honest,
    validate_locally_consistent,
)
from bahalt.core import ConfigurationError


def test_action_constructors():
    assert abort_action().kind == "abort"
    a = select_action(1, ((b"\x00", None),))
    assert (a.kind, a.claimed_input) == ("select", 1)
    with pytest.raises(ConfigurationError):
        select_action(2, ())
    with pytest.raises(ConfigurationError):
        select_action(0, ([b"\x00"],))


@given(st.sets(st.integers(0, 40)), st.integers())
def test_split_partitions(who, seed):
    h0, h1 = split_honest(who, seed)
    assert h0 | h1 == frozenset(who) and not h0 & h1


def test_split_empty():
    assert split_honest([], 1) == (frozenset(), frozenset())


def test_split_is_roughly_fair():
    m, trials = 6, 4000
    empty = sum(not split_honest(range(m), s)[0] for s in range(trials))
    assert abs(empty / trials - 2**-m) < 0.01


def test_initial_set_over_budget_rejected():
    with pytest.raises(ConfigurationError):
        AdversaryStrategy(budget=1, initial={0, 1}).initial_corruptions(0, 5)


def test_first_round_trace_validates():
    spec = P.one_round_majority(9)
    geom = A.attack_geometry(9, 3, A.THIRD, A.FIRST_ROUND)
    adv = A.first_round_attack(spec, geom)
    for seed in range(30):
        rep = validate_locally_consistent(core.run(spec, geom.v0, adv, seed), spec, adv)
        assert rep.ok, rep.violations
    assert json.loads(rep.to_json()) == {"ok": True, "violations": []}


def test_forged_payload_is_reported():
    spec = P.two_round_coin_majority(5, 1)
    adv = AdversaryStrategy(budget=1, initial={0})
    tr = core.run(spec, (0, 0, 0, 1, 1), adv, 1)
    rec = tr.rounds[1]
    genuine = rec.multicast[0]
    forged = genuine[:-1] + bytes([(genuine[-1] + 1) % 3])
    assert check_message(tr, spec, 2, 0, 1, genuine) is None
    assert check_message(tr, spec, 2, 0, 1, forged) is not None
    rec.multicast = (forged,) + rec.multicast[1:]
    rep = validate_locally_consistent(tr, spec, adv)
    assert not rep.ok and rep.violations[0][:2] == (2, 0)


def test_late_corruption_flagged_for_static_strategy():
    spec = P.micali_lite(4, 1, 2)
    adv = AdversaryStrategy(budget=1, initial={0})
    tr = core.run(spec, (0, 1, 0, 1), adv, 2)
    tr.corruption_log = (2, None, None, None)
    assert not validate_locally_consistent(tr, spec, adv).ok


def test_tampered_coin_flagged():
    spec = P.micali_lite(4, 1, 2)
    adv = AdversaryStrategy(budget=1, initial={0})
    tr = core.run(spec, (0, 1, 0, 1), adv, 2)
    tr.coins = ((tr.coins[0][0] ^ 1,) + tr.coins[0][1:],) + tr.coins[1:]
    rep = validate_locally_consistent(tr, spec, adv)
    assert any("coin" in v[3] for v in rep.violations)


def test_opposite_input_is_locally_consistent():
    spec = P.one_round_majority(3)
    adv = AdversaryStrategy(budget=1, initial={0}, chooser=lambda r, a: {0: [(None, select_action(1, ()))]})
    tr = core.run(spec, (0, 0, 0), adv)
    assert validate_locally_consistent(tr, spec, adv).ok
