import itertools
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from bahalt import attacks as A
from bahalt import conjecture as C
from bahalt import core, protocols as P
from bahalt.core import ConfigurationError, Execution

vectors = st.lists(st.sampled_from([0, 1, 2]), min_size=1, max_size=8)


@given(vectors, st.data())
def test_mask_algebra(x, data):
    idx = st.sets(st.integers(0, len(x) - 1))
    S, T = data.draw(idx), data.draw(idx)
    assert C.mask(C.mask(x, S), T) == C.mask(x, S | T)
    assert C.mask(x, S) == C.mask(C.mask(x, S), S)
    assert C.mask(x, ()) == tuple(x)
    assert all(v is C.BOT for v in C.mask(x, range(len(x))))


def test_mask_index_out_of_range():
    with pytest.raises(ConfigurationError):
        C.mask((0, 1), {2})


def test_full_and_empty_families():
    s = Fraction(1, 3)
    assert C.conclusion_probability(C.full_sets(4), s) == 1
    assert C.conclusion_probability(C.empty_sets(4), s) == 0
    v = C.hypothesis_holds(C.full_sets(4), s, 1, 0)
    assert v.holds and v.hypothesis_level == (1, 1)
    assert not C.hypothesis_holds(C.empty_sets(4), s, Fraction(1, 100), Fraction(1, 2)).holds


@pytest.mark.parametrize("k", [1, 2, 3])
def test_prefix_hypothesis_level(k):
    sigma = Fraction(1, 5)
    v = C.hypothesis_holds(C.prefix_sets(6, k), sigma, Fraction(1, 2**k), Fraction(1, 2))
    assert v.hypothesis_level == ((1 - sigma) ** k,) * 2


def test_ball_of_radius_zero():
    pair = C.ball_sets(5, 0)
    v = C.evaluate(pair, Fraction(1, 4), Fraction(1, 32), Fraction(1, 2))
    assert v.hypothesis_level == (Fraction(3, 4) ** 5,) * 2
    assert v.conclusion_prob == 0


def test_family_parameter_checks():
    with pytest.raises(ConfigurationError):
        C.ball_sets(4, 2)
    with pytest.raises(ConfigurationError):
        C.prefix_sets(3, 4)
    with pytest.raises(ConfigurationError):
        C.explicit_sets(2, [(0, 5)], [])
    with pytest.raises(ConfigurationError):
        C.conclusion_probability(C.prefix_sets(30, 2), Fraction(1, 2))


def test_prefix_families_never_meet():
    pair = C.prefix_sets(4, 2)
    for r in itertools.product((0, 1, C.BOT), repeat=4):
        assert not (pair.member(0, r) and pair.member(1, r))


def _bridge():
    # (1,0,0) and (0,0,0) both land on the shared vector once index 0 is masked
    shared = (C.BOT, 0, 0)
    return C.explicit_sets(3, [(0, 0, 0), (1, 0, 0), shared], [shared], name="bridge")


def test_explicit_family_exact_value():
    assert C.conclusion_probability(_bridge(), Fraction(1, 2)) == Fraction(2, 8) * Fraction(1, 8)


def test_monte_carlo_agrees_with_enumeration():
    pair = _bridge()
    exact = C.conclusion_probability(pair, Fraction(1, 2))
    est = C.conclusion_probability(pair, Fraction(1, 2), C.MONTE_CARLO, trials=4000, seed=7)
    assert est.covers(exact)
    mc = C.hypothesis_holds(C.prefix_sets(6, 1), Fraction(1, 5), Fraction(1, 4), Fraction(1, 2), C.MONTE_CARLO, seed=3)
    assert all(lv.covers(Fraction(4, 5)) for lv in mc.hypothesis_level)


def test_unknown_mode():
    with pytest.raises(ConfigurationError):
        C.conclusion_probability(C.full_sets(2), Fraction(1, 2), "guess")


def test_verdict_json_keeps_exact_values():
    body = C.evaluate(_bridge(), Fraction(1, 2), Fraction(1, 8), Fraction(1, 2)).to_json()
    assert body["conclusion_prob"]["exact"] == "1/32"
    assert body["family"] == "bridge"


def test_search_reports_only_double_wins():
    found = C.search_counterexamples([C.prefix_sets(6, 1)], [Fraction(1, 10)], [Fraction(1, 2)], [Fraction(1, 5)])
    assert [(c.family, c.conclusion) for c in found] == [("prefix", 0)]
    assert C.search_counterexamples([C.full_sets(3)], [Fraction(1, 2)], [Fraction(1, 2)], [Fraction(1, 5)]) == []
    with pytest.raises(ConfigurationError):
        C.search_counterexamples([C.full_sets(3)], [Fraction(1, 2)], [Fraction(1, 2)], [])


def _coin_majority_geometry():
    spec = P.two_round_coin_majority(9, 3)
    return spec, A.attack_geometry(9, 3, A.QUARTER, A.SECOND_ROUND_PR)


def _engine_oracle(spec, geom, d, r):
    """Replay face ``d`` with the full engine and read off the common output."""
    cell = geom.cells[d - 1] if d >= 1 else frozenset()
    tape = tuple(r)
    x = Execution(spec, geom.v0, A.pivot_variant(spec, geom, d), 0, coins={1: (0,) * 9, 2: tape}, record=False)
    tr = x.run()
    left = [i for i in range(9) if i not in geom.P | cell and tape[i] is not None]
    if not left or not core.halted_by(tr, 2, left):
        return None
    outs = {tr.outputs[i] for i in left}
    return outs.pop() if len(outs) == 1 else None


@given(st.lists(st.sampled_from([0, 1, C.BOT]), min_size=9, max_size=9), st.integers(0, 7))
def test_induced_sets_match_engine(r, d):
    spec, geom = _coin_majority_geometry()
    r = tuple(r)
    want = _engine_oracle(spec, geom, d, r)
    for b in (0, 1):
        assert C.protocol_induced_sets(spec, geom, None, d, b)(r) == (want == b)


def test_induced_sets_all_masked_is_in_neither():
    spec, geom = _coin_majority_geometry()
    pair = C.protocol_induced_pair(spec, geom, None, 3)
    blank = (C.BOT,) * 9
    assert not pair.member(0, blank) and not pair.member(1, blank)


def test_induced_families_are_disjoint():
    spec, geom = _coin_majority_geometry()
    pair = C.protocol_induced_pair(spec, geom, None, 4)
    for r in itertools.islice(itertools.product((0, 1, C.BOT), repeat=9), 0, None, 7):
        assert not (pair.member(0, r) and pair.member(1, r))


def test_induced_sets_need_public_coins():
    spec = P.beacon_protocol(9, 3)
    geom = A.attack_geometry(9, 3, A.QUARTER, A.SECOND_ROUND_PR)
    with pytest.raises(ConfigurationError):
        C.protocol_induced_sets(spec, geom, None, 1, 0)
