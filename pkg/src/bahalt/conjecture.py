"""Small-scale laboratory for the masking conjecture.

A vector over an alphabet is *masked* on a set ``S`` by replacing the entries
indexed by ``S`` with :data:`BOT`.  For a pair of families ``A_0, A_1`` the
hypothesis asks that, for most ``S`` drawn with independent inclusion
probability ``sigma``, a uniform ``r`` lands in ``A_b`` both before and
after masking with probability at least ``lam``.  The conclusion asks how
often the pair ``{r, mask(r, S)}`` meets both families.

Exhaustive evaluation enumerates every ``(S, r)`` once per family pair and
keeps counts per ``|S|``; any ``sigma`` then costs one weighted sum.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence, Union

from . import rand
from .core import ConfigurationError, ProtocolSpec, SetupBundle
from .stats import DEFAULT_CONFIDENCE, Estimate

BOT = None  # the masked symbol
EXHAUSTIVE, MONTE_CARLO = "exhaustive", "monte-carlo"
EXHAUSTIVE_LIMIT_BITS = 24

Predicate = Callable[[tuple], bool]


def mask(x: Sequence, S: Iterable[int]) -> tuple:
    """``x`` with every index in ``S`` replaced by ``BOT``."""
    x = tuple(x)
    S = set(S)
    if any(not 0 <= i < len(x) for i in S):
        raise ConfigurationError("mask index out of range")
    return tuple(BOT if i in S else v for i, v in enumerate(x))


@dataclass(frozen=True)
class SetFamilyPair:
    """Two membership predicates over ``(alphabet + BOT)^n``."""

    A0: Predicate
    A1: Predicate
    n: int
    alphabet: tuple
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False, hash=False)

    def member(self, b: int, x: tuple) -> bool:
        return bool((self.A1 if b else self.A0)(x))

    @property
    def exhaustive_ok(self) -> bool:
        return self.n * math.log2(len(self.alphabet) + 1) <= EXHAUSTIVE_LIMIT_BITS


def _check_alphabet(alphabet) -> tuple:
    alphabet = tuple(alphabet)
    if len(set(alphabet)) != len(alphabet) or not alphabet:
        raise ConfigurationError("alphabet must be a non-empty list of distinct symbols")
    if BOT in alphabet:
        raise ConfigurationError("the masked symbol cannot be part of the alphabet")
    return alphabet


def prefix_sets(n: int, k: int, alphabet=(0, 1)) -> SetFamilyPair:
    """``A_b``: vectors whose first ``k`` entries all equal ``b``."""
    alphabet = _check_alphabet(alphabet)
    if not 0 <= k <= n:
        raise ConfigurationError("need 0 <= k <= n")
    if not {0, 1} <= set(alphabet):
        raise ConfigurationError("prefix families need 0 and 1 in the alphabet")
    pre0, pre1 = (0,) * k, (1,) * k
    return SetFamilyPair(
        lambda x: x[:k] == pre0, lambda x: x[:k] == pre1, n, alphabet, "prefix", {"k": k}
    )


def ball_sets(n: int, radius: int, alphabet=(0, 1)) -> SetFamilyPair:
    """``A_b``: vectors with at most ``radius`` entries different from ``b``.

    A masked entry counts as different from both centres.
    """
    alphabet = _check_alphabet(alphabet)
    if not 0 <= 2 * radius < n:
        raise ConfigurationError("need 0 <= radius < n/2")
    if not {0, 1} <= set(alphabet):
        raise ConfigurationError("ball families need 0 and 1 in the alphabet")

    def ball(b):
        return lambda x: sum(1 for v in x if v != b) <= radius

    return SetFamilyPair(ball(0), ball(1), n, alphabet, "ball", {"radius": radius})


def explicit_sets(n: int, A0: Iterable[tuple], A1: Iterable[tuple], alphabet=(0, 1), name: str = "explicit") -> SetFamilyPair:
    """Families given as enumerated collections of (possibly masked) vectors."""
    alphabet = _check_alphabet(alphabet)
    s0, s1 = frozenset(map(tuple, A0)), frozenset(map(tuple, A1))
    for x in s0 | s1:
        if len(x) != n or any(v is not BOT and v not in alphabet for v in x):
            raise ConfigurationError(f"{x!r} is not a vector over the alphabet")
    return SetFamilyPair(s0.__contains__, s1.__contains__, n, alphabet, name)


def full_sets(n: int, alphabet=(0, 1)) -> SetFamilyPair:
    everything = lambda x: True  # noqa: E731
    return SetFamilyPair(everything, everything, n, _check_alphabet(alphabet), "full")


def empty_sets(n: int, alphabet=(0, 1)) -> SetFamilyPair:
    nothing = lambda x: False  # noqa: E731
    return SetFamilyPair(nothing, nothing, n, _check_alphabet(alphabet), "empty")


# ------------------------------------------------------------ evaluation


def _sigma(sigma) -> Fraction:
    s = sigma if isinstance(sigma, Fraction) else Fraction(str(sigma))
    if not 0 <= s <= 1:
        raise ConfigurationError("sigma must lie in [0, 1]")
    return s


def _call(pred: Predicate, x: tuple) -> bool:
    try:
        return bool(pred(x))
    except Exception as exc:  # surfaced with the offending vector
        raise ConfigurationError(f"predicate failed on {x!r}: {exc}") from exc


@dataclass(frozen=True)
class _Table:
    """Per abort set: its size, both inner hit counts and the conclusion count."""

    n: int
    space: int  # |alphabet|^n
    rows: tuple  # (|S|, inner0, inner1, touched_both)


_TABLES: dict = {}


def _table(pair: SetFamilyPair) -> _Table:
    key = id(pair)
    hit = _TABLES.get(key)
    if hit is not None and hit[0] is pair:
        return hit[1]
    if not pair.exhaustive_ok:
        raise ConfigurationError(
            f"n={pair.n} with {len(pair.alphabet)} symbols is beyond the exhaustive limit; use monte-carlo"
        )
    n = pair.n
    tapes = list(itertools.product(pair.alphabet, repeat=n))
    plain = [(_call(pair.A0, r), _call(pair.A1, r)) for r in tapes]
    seen: dict = {}

    def masked(x):
        got = seen.get(x)
        if got is None:
            got = seen[x] = (_call(pair.A0, x), _call(pair.A1, x))
        return got

    rows = []
    for bits in range(1 << n):
        S = [i for i in range(n) if bits >> i & 1]
        i0 = i1 = both = 0
        for r, (p0, p1) in zip(tapes, plain):
            if S:
                lst = list(r)
                for i in S:
                    lst[i] = BOT
                m0, m1 = masked(tuple(lst))
            else:
                m0, m1 = p0, p1
            i0 += p0 and m0
            i1 += p1 and m1
            both += (p0 or m0) and (p1 or m1)
        rows.append((len(S), i0, i1, both))
    table = _Table(n, len(tapes), tuple(rows))
    _TABLES[key] = (pair, table)
    return table


def _weight(size: int, n: int, s: Fraction) -> Fraction:
    return s**size * (1 - s) ** (n - size)


@dataclass
class ConjectureVerdict:
    hypothesis_ok: tuple  # per b
    hypothesis_level: tuple  # per b: probability over S that the inner probability reaches lam
    conclusion_prob: Union[Fraction, Estimate, None]
    mode: str
    sigma: Fraction
    lam: Fraction
    delta: Fraction
    family: str = ""

    @property
    def holds(self) -> bool:
        return all(self.hypothesis_ok)

    def to_json(self) -> dict:
        def num(x):
            if isinstance(x, Fraction):
                return {"exact": f"{x.numerator}/{x.denominator}", "value": float(x)}
            if isinstance(x, Estimate):
                return {"value": x.point, "ci_radius": x.ci_radius, "trials": x.trials}
            return x

        return {
            "family": self.family,
            "mode": self.mode,
            "sigma": str(self.sigma),
            "lambda": str(self.lam),
            "delta": str(self.delta),
            "hypothesis_ok": list(self.hypothesis_ok),
            "hypothesis_level": [num(x) for x in self.hypothesis_level],
            "conclusion_prob": num(self.conclusion_prob),
        }


def _uniform(rng, alphabet, n) -> tuple:
    return tuple(alphabet[rng.randrange(len(alphabet))] for _ in range(n))


def _draw_set(rng, n, s: float) -> list:
    return [i for i in range(n) if rng.random() < s]


def hypothesis_holds(
    pair: SetFamilyPair,
    sigma,
    lam,
    delta,
    mode: str = EXHAUSTIVE,
    trials: int = 200,
    inner_trials: int = 200,
    seed=0,
    confidence: float = DEFAULT_CONFIDENCE,
) -> ConjectureVerdict:
    """Evaluate the hypothesis for both ``b``; the conclusion slot is left empty."""
    s, lam, delta = _sigma(sigma), Fraction(str(lam)), Fraction(str(delta))
    if mode == EXHAUSTIVE:
        tab = _table(pair)
        levels = []
        for b in (0, 1):
            need = lam * tab.space
            levels.append(sum((_weight(size, tab.n, s) for size, *inner, _ in tab.rows if inner[b] >= need), Fraction(0)))
    elif mode == MONTE_CARLO:
        rng = rand.stream(seed, "hypothesis")
        hits = [0, 0]
        for _ in range(trials):
            S = _draw_set(rng, pair.n, float(s))
            inner = [0, 0]
            for _ in range(inner_trials):
                r = _uniform(rng, pair.alphabet, pair.n)
                m = mask(r, S)
                for b in (0, 1):
                    inner[b] += pair.member(b, r) and pair.member(b, m)
            for b in (0, 1):
                hits[b] += inner[b] >= float(lam) * inner_trials
        levels = [Estimate.of(h, trials, confidence) for h in hits]
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    ok = tuple((lv if isinstance(lv, Fraction) else Fraction(lv.successes, lv.trials)) >= 1 - delta for lv in levels)
    return ConjectureVerdict(ok, tuple(levels), None, mode, s, lam, delta, pair.name)


def conclusion_probability(
    pair: SetFamilyPair, sigma, mode: str = EXHAUSTIVE, trials: int = 2000, seed=0, confidence: float = DEFAULT_CONFIDENCE
) -> Union[Fraction, Estimate]:
    """Probability that ``{r, mask(r, S)}`` meets both families.

    Exact (a :class:`~fractions.Fraction`) in exhaustive mode, an
    :class:`~bahalt.stats.Estimate` otherwise.
    """
    s = _sigma(sigma)
    if mode == EXHAUSTIVE:
        tab = _table(pair)
        total = sum((_weight(size, tab.n, s) * both for size, _, _, both in tab.rows), Fraction(0))
        return total / tab.space
    if mode != MONTE_CARLO:
        raise ConfigurationError(f"unknown mode {mode!r}")
    if trials < 1:
        raise ConfigurationError("trials must be at least 1")
    rng = rand.stream(seed, "conclusion")
    hits = 0
    for _ in range(trials):
        r = _uniform(rng, pair.alphabet, pair.n)
        m = mask(r, _draw_set(rng, pair.n, float(s)))
        hits += (pair.member(0, r) or pair.member(0, m)) and (pair.member(1, r) or pair.member(1, m))
    return Estimate.of(hits, trials, confidence)


def evaluate(pair: SetFamilyPair, sigma, lam, delta, mode: str = EXHAUSTIVE, **kw) -> ConjectureVerdict:
    """Hypothesis and conclusion together."""
    v = hypothesis_holds(pair, sigma, lam, delta, mode, seed=kw.get("seed", 0))
    v.conclusion_prob = conclusion_probability(pair, sigma, mode, **kw)
    return v


@dataclass(frozen=True)
class Counterexample:
    family: str
    params: tuple
    sigma: Fraction
    lam: Fraction
    conclusion: Fraction


def search_counterexamples(pairs: Iterable[SetFamilyPair], sigmas, lams, deltas) -> list:
    """Exhaustive sweep for points that defeat every tested ``delta``.

    A point ``(pair, sigma, lam)`` is reported when, for each ``delta`` in
    ``deltas``, the hypothesis holds and the conclusion probability is
    below ``delta``.  Nothing found is evidence, not proof.
    """
    deltas = sorted(Fraction(str(d)) for d in deltas)
    if not deltas:
        raise ConfigurationError("need at least one delta")
    found = []
    for pair in pairs:
        for s in sigmas:
            c = conclusion_probability(pair, s)
            for lam in lams:
                if all(hypothesis_holds(pair, s, lam, d).holds and c < d for d in deltas):
                    found.append(Counterexample(pair.name, tuple(sorted(pair.params.items())), _sigma(s), Fraction(str(lam)), c))
    return found


# ------------------------------------------------------- protocol families


def protocol_induced_sets(
    spec: ProtocolSpec, geom, f: Optional[SetupBundle], d: int, b: int, pair: int = 0, coins1: Optional[Sequence[int]] = None
) -> Predicate:
    """Round-two tapes on which face ``d`` ends with everyone left outputting ``b``.

    A masked coin means its owner aborts in round two.  The parties that
    must halt are those outside the pivots, the cell ``L_d`` and the masked
    owners; if none are left the predicate is false.
    """
    from .attacks import FaceSimulator, _faces

    if not spec.public_randomness:
        raise ConfigurationError("protocol-induced sets need a public-randomness protocol")
    if b not in (0, 1):
        raise ConfigurationError("b must be a bit")
    if coins1 is None:
        if spec.coin_domain(1) > 1:
            raise ConfigurationError("this protocol flips coins in round one; pass coins1")
        coins1 = (0,) * spec.n
    faces = _faces(geom, pair)
    if not 0 <= d <= faces.h:
        raise ConfigurationError(f"d must lie in 0..{faces.h}")
    sim = FaceSimulator(spec, geom, pair, f, tuple(coins1))
    cell = faces.cell(d) if d >= 1 else frozenset()

    def member(r: tuple) -> bool:
        if len(r) != spec.n:
            return False
        E = frozenset(i for i, c in enumerate(r) if c is BOT)
        tape = tuple(0 if c is BOT else c for c in r)
        return sim.outcome(d, E, tape, exclude=cell) == b

    return member


def protocol_induced_pair(spec: ProtocolSpec, geom, f: Optional[SetupBundle], d: int, pair: int = 0, coins1=None) -> SetFamilyPair:
    size = spec.coin_domain(2)
    if size > 16:
        raise ConfigurationError("round-two coin alphabet too large to enumerate")
    return SetFamilyPair(
        protocol_induced_sets(spec, geom, f, d, 0, pair, coins1),
        protocol_induced_sets(spec, geom, f, d, 1, pair, coins1),
        spec.n,
        tuple(range(size)),
        f"induced-{spec.name}-d{d}",
        {"d": d},
    )
