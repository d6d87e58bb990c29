"""Constructive adversaries against fast halting, and the geometry they share.

Vocabulary used throughout:

* a *pivot pair* is two input vectors ``v`` and ``v'`` that differ exactly on
  the pivot set ``P``;
* the non-pivots are cut into cells ``L_1..L_h`` of size ``ell`` (the last
  one may be smaller);
* the *face* ``d`` is the execution in which pivots show the flipped input
  to cells ``1..d``, the real input to the remaining cells and nothing to
  one another, then go silent.  Face ``0`` is an honest run on ``v`` and
  face ``h`` an honest run on ``v'``;
* an *abort set* ``S`` is a random set of parties that go silent from
  round two on.

Cells are numbered from 1 in the comments and stored 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from fractions import Fraction
from typing import Optional, Sequence

from . import rand
from .adversary import AdversaryStrategy, abort_action, select_action, split_honest
from .core import ConfigurationError, Execution, ProtocolSpec, RoundRecord, SetupBundle, View

FIRST_ROUND, SECOND_ROUND_ARB, SECOND_ROUND_PR = "first-round", "second-round-arb", "second-round-pr"
STAGES = (FIRST_ROUND, SECOND_ROUND_ARB, SECOND_ROUND_PR)
THIRD, QUARTER = "third", "quarter"
DEFAULT_C = 64


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


# ---------------------------------------------------------------- geometry


@dataclass(frozen=True)
class PivotPair:
    v: tuple
    v_prime: tuple
    pivots: frozenset
    cells: tuple = ()  # tuple of frozensets, L_1..L_h

    def cell_index(self) -> dict:
        """Party -> 1-based cell number."""
        return {p: i for i, cell in enumerate(self.cells, start=1) for p in cell}


@dataclass(frozen=True)
class AttackGeometry:
    n: int
    t: int
    regime: str
    stage: str
    k: int
    ell: Optional[int]
    h: Optional[int]
    w: Optional[int]
    pairs: tuple
    eps_t: Optional[Fraction] = None
    abort_cap: int = 0
    notes: tuple = ()

    @property
    def P(self) -> frozenset:
        return self.pairs[0].pivots

    @property
    def cells(self) -> tuple:
        return self.pairs[0].cells

    @property
    def v0(self) -> tuple:
        return self.pairs[0].v

    @property
    def v1(self) -> tuple:
        return self.pairs[-1].v if self.regime == QUARTER else self.pairs[0].v_prime

    @property
    def v_star(self) -> Optional[tuple]:
        return self.pairs[0].v_prime if self.regime == QUARTER else None

    @property
    def err(self) -> Fraction:
        return Fraction(1, 2 ** (self.n - self.t))


def _third_vectors(n: int, k: int):
    up, down = ceil_div(n - k, 2), (n - k) // 2
    v0 = (0,) * k + (1,) * up + (0,) * down
    v1 = (1,) * k + (1,) * up + (0,) * down
    return [(v0, v1, frozenset(range(k)))]


def _quarter_vectors(n: int, k: int):
    if 3 * k > n:
        raise ConfigurationError(f"quarter vectors need 3k <= n (k={k}, n={n})")
    rest = (1,) * (n - 3 * k)
    v0 = (0,) * (3 * k) + rest
    v1 = (1,) * (2 * k) + (0,) * k + rest
    vs = (1,) * k + (0,) * (2 * k) + rest
    return [(v0, vs, frozenset(range(k))), (v1, vs, frozenset(range(k, 2 * k)))]


def _cells(n: int, pivots: frozenset, ell: int) -> tuple:
    rest = [i for i in range(n) if i not in pivots]
    return tuple(frozenset(rest[i : i + ell]) for i in range(0, len(rest), ell))


def default_regime(n: int, t: int) -> str:
    if 3 * t >= n:
        return THIRD
    if 4 * t >= n:
        return QUARTER
    raise ConfigurationError(f"t={t} is below n/4 for n={n}; no attack applies")


def closed_form_w(n: int, t: int) -> Optional[int]:
    """``ceil((n - ceil(n/4)) / floor(t - n/4)) + 1``, or ``None`` when the floor is 0."""
    fl = math.floor(Fraction(t) - Fraction(n, 4))
    if fl <= 0:
        return None
    return ceil_div(n - ceil_div(n, 4), fl) + 1


def attack_geometry(n: int, t: int, regime: Optional[str] = None, stage: str = FIRST_ROUND, eps_t=None) -> AttackGeometry:
    """Pivot sets, cells and extremal inputs for one attack stage.

    When the nominal pivot size leaves no room for a cell (``t - k < 1``
    for the arbitrary-protocol stage, or ``t - k < 1`` for the
    public-randomness stage) the smallest pivot size that still keeps
    both extremal inputs within distance ``t`` of unanimity is used
    instead, and ``notes`` says so.
    """
    if not 1 <= t < n:
        raise ConfigurationError("need 1 <= t < n")
    regime = regime or default_regime(n, t)
    if regime not in (THIRD, QUARTER):
        raise ConfigurationError(f"unknown regime {regime!r}")
    if regime == THIRD and 3 * t < n:
        raise ConfigurationError(f"third regime needs t >= n/3 (n={n}, t={t})")
    if 4 * t < n:
        raise ConfigurationError(f"t={t} is below n/4 for n={n}")
    notes = []
    if stage == FIRST_ROUND:
        k = t
        shapes = _third_vectors(n, k) if regime == THIRD else _quarter_vectors(n, k)
        pairs = tuple(PivotPair(v, vp, P) for v, vp, P in shapes)
        return AttackGeometry(n, t, regime, stage, k, None, None, None, pairs)

    if stage == SECOND_ROUND_ARB:
        k = ceil_div(n, 4)
        if t - k < 1:
            k = ceil_div(n - t, 3)
            notes.append(f"t - ceil(n/4) < 1; pivot size lowered to ceil((n-t)/3) = {k}")
        if t - k < 1 or 3 * k > n:
            raise ConfigurationError(f"no feasible second-round geometry for n={n}, t={t}")
        ell = t - k
        h = ceil_div(n - k, ell)
        w = closed_form_w(n, t)
        if w is None:
            w = h + 1
            notes.append("bound parameter w taken as h+1 since floor(t - n/4) = 0")
        elif w != h + 1:
            notes.append(f"cells give h+1={h + 1}; the bound uses w={w}")
        shapes = _quarter_vectors(n, k)
        pairs = tuple(PivotPair(v, vp, P, _cells(n, P, ell)) for v, vp, P in shapes)
        return AttackGeometry(n, t, regime, stage, k, ell, h, w, pairs, notes=tuple(notes))

    if stage != SECOND_ROUND_PR:
        raise ConfigurationError(f"unknown stage {stage!r}")
    base = Fraction(1, 3) if regime == THIRD else Fraction(1, 4)
    eps = _frac(eps_t) if eps_t is not None else Fraction(t, n) - base
    if eps <= 0 or Fraction(t) < (base + eps) * n:
        raise ConfigurationError(f"need t >= ({base} + eps_t) n with eps_t > 0; got t={t}, eps_t={eps}")
    k = math.ceil(t - eps * n)
    if t - k < 1:
        k_min = max(1, n - 2 * t) if regime == THIRD else max(1, ceil_div(n - t, 3))
        notes.append(f"t - ceil(t - eps_t n) < 1; pivot size lowered to {k_min}")
        k = k_min
    if t - k < 1:
        raise ConfigurationError(f"no feasible public-randomness geometry for n={n}, t={t}")
    ell = (t - k) // 2
    if ell < 1:
        ell = 1
        notes.append("floor((t-k)/2) = 0; cells of size 1 used")
    h = ceil_div(n - k, ell)
    sigma = eps / 4
    cap = min(math.floor(2 * sigma * n), t - k - ell)
    if cap < math.floor(2 * sigma * n):
        notes.append(f"abort sets capped at {cap} to respect t")
    shapes = _third_vectors(n, k) if regime == THIRD else _quarter_vectors(n, k)
    pairs = tuple(PivotPair(v, vp, P, _cells(n, P, ell)) for v, vp, P in shapes)
    return AttackGeometry(n, t, regime, stage, k, ell, h, None, pairs, eps_t=eps, abort_cap=cap, notes=tuple(notes))


# ------------------------------------------------------------- abort sets


@dataclass(frozen=True)
class AbortSet:
    members: frozenset
    sigma: Fraction
    cap: int


def _draw_members(rng, n: int, sigma: float, cap: int) -> frozenset:
    while True:
        members = frozenset(i for i in range(n) if rng.random() < sigma)
        if len(members) <= cap:
            return members


def sample_abort_set(n: int, sigma, seed, cap: Optional[int] = None) -> AbortSet:
    """Independent Bernoulli(sigma) membership, resampled until ``|S| <= cap``.

    ``cap`` defaults to ``floor(2 sigma n)``.
    """
    sigma = _frac(sigma)
    if not 0 <= sigma < 1:
        raise ConfigurationError("sigma must lie in [0, 1)")
    if cap is None:
        cap = math.floor(2 * sigma * n)
    if cap < 0:
        raise ConfigurationError("cap must be non-negative")
    return AbortSet(_draw_members(rand.stream(seed, "abort-set"), n, float(sigma), cap), sigma, cap)


def loop_bound(lam, delta) -> int:
    return math.ceil(1 / (_frac(lam) * _frac(delta)))


def estimation_samples(h: int, lam, C: float = DEFAULT_C) -> int:
    return math.ceil(C * math.log(h / float(lam)))


# ------------------------------------------------------------ face logic


@lru_cache(maxsize=256)
def _faces(geom: AttackGeometry, pair: int) -> "_Faces":
    return _Faces(geom, pair)


class _Faces:
    """What pivots and cell members say in each face, for one pivot pair."""

    def __init__(self, geom: AttackGeometry, pair: int):
        if geom.h is None:
            raise ConfigurationError("this attack needs a second-round geometry")
        self.geom = geom
        self.pp = geom.pairs[pair]
        self.v = self.pp.v
        self.P = self.pp.pivots
        self.h = geom.h
        self.cell_of = self.pp.cell_index()
        self._plans: dict = {}

    def cell(self, d: int) -> frozenset:
        """``L_d`` for ``1 <= d <= h``."""
        return self.pp.cells[d - 1]

    def low(self, d: int) -> frozenset:
        return frozenset().union(*self.pp.cells[:d]) if d else frozenset()

    def bit(self, pivot: int, receiver: int, e: int) -> Optional[int]:
        """Input a pivot uses toward ``receiver`` in face ``e``; ``None`` for silence."""
        vi = self.v[pivot]
        if e == 0:
            return vi
        if e == self.h:
            return 1 - vi
        if receiver in self.P:
            return None
        return 1 - vi if self.cell_of[receiver] <= e else vi

    def round1_plan(self, p: int, faces: Sequence[int]) -> list:
        """Round-one plan for pivot ``p`` that is consistent with every face listed."""
        key = (p, tuple(faces))
        if key in self._plans:
            return self._plans[key]
        vi = self.v[p]
        keep, flip = select_action(vi, ()), select_action(1 - vi, ())
        groups: dict = {}
        for j in range(self.geom.n):
            bits = sorted({b for e in faces if (b := self.bit(p, j, e)) is not None})
            groups.setdefault(tuple(bits), []).append(j)
        plan = []
        for bits, members in groups.items():
            acts = tuple(keep if b == vi else flip for b in bits) or (abort_action(),)
            plan.append((frozenset(members), acts))
        self._plans[key] = plan
        return plan

    def inbox(self, adv, c: int, e: int) -> tuple:
        """Round-one inbox corrupted ``c`` would hold in face ``e``, later rounds genuine."""
        genuine = adv.inbox(c)
        row = list(genuine[0])
        for s in self.P:
            b = self.bit(s, c, e)
            row[s] = None if b is None else adv.payload(s, c, b, (), round=1)
        return (tuple(row),) + genuine[1:]

    def act(self, adv, c: int, e: int, silent: frozenset = frozenset()):
        """Action of corrupted ``c`` toward honest parties from round two on in face ``e``."""
        if c in silent:
            return abort_action()
        if c in self.P:
            if e == 0:
                return select_action(self.v[c], self.inbox(adv, c, e))
            if e == self.h:
                return select_action(1 - self.v[c], self.inbox(adv, c, e))
            return abort_action()
        return select_action(self.v[c], self.inbox(adv, c, e))


def _budget(geom: AttackGeometry, size, what: str) -> None:
    size = size if isinstance(size, int) else len(size)
    if size > geom.t:
        raise ConfigurationError(f"{what} may corrupt {size} parties, budget is {geom.t}")


# ---------------------------------------------------------- first round


def first_round_attack(spec: ProtocolSpec, geom: AttackGeometry, rushing: bool = False, pair: int = 0) -> AdversaryStrategy:
    """Show ``v`` to a random half of the honest parties and ``v'`` to the rest, then go silent.

    The rushing variant, for public-randomness protocols, first replays both
    honest executions with the coins and setup it has just seen.  If one of
    them leaves some honest party running it plays that one to everybody;
    if the two disagree it splits; otherwise it plays ``v``.
    """
    pp = geom.pairs[pair]
    P, v, vp = pp.pivots, pp.v, pp.v_prime
    _budget(geom, P, "first_round_attack")
    if rushing and not spec.public_randomness:
        raise ConfigurationError("the rushing variant needs a public-randomness protocol")
    honest = frozenset(range(geom.n)) - P

    def decide(adv) -> str:
        if not rushing:
            return "split"
        coins1 = adv.public_coins(1)
        f = adv.public_setup()
        outcome = {}
        for name, vec in (("v", v), ("v'", vp)):
            x = Execution(spec, vec, None, 0, setup=f, coins={1: coins1}, record=False)
            x.step()
            outs = [x.outputs[i] if x.halt_round[i] == 1 else None for i in sorted(honest)]
            if any(o is None for o in outs):
                return name
            outcome[name] = outs
        return "split" if outcome["v"] != outcome["v'"] else "v"

    def chooser(r, adv):
        if r > 1:
            return {c: [(None, abort_action())] for c in adv.corrupted}
        mode = decide(adv)
        half0, half1 = split_honest(honest, rand.derive(adv.seed, "split"))
        plan = {}
        for p in P:
            keep, other = select_action(v[p], ()), select_action(vp[p], ())
            if mode == "split":
                plan[p] = [(half1, other), (None, keep)]
            else:
                plan[p] = [(None, keep if mode == "v" else other)]
        return plan

    return AdversaryStrategy(
        budget=geom.t, initial=P, rushing=rushing, chooser=chooser, name="first-round", target_inputs=v
    )


# --------------------------------------------------- pivot protocol family


def _pivot_chooser(faces: _Faces, d_of, S: frozenset = frozenset()):
    def chooser(r, adv):
        d = d_of(adv)
        plan = {}
        if r == 1:
            for p in faces.P:
                plan[p] = faces.round1_plan(p, (d,))
            return plan
        for c in adv.corrupted:
            if c in S:
                plan[c] = [(None, abort_action())]
            elif c in faces.P:
                if d in (0, faces.h):
                    bit = faces.v[c] if d == 0 else 1 - faces.v[c]
                    plan[c] = [(None, select_action(bit, adv.inbox(c)))]
                else:
                    plan[c] = [(None, abort_action())]
        return plan

    return chooser


def pivot_variant(spec: ProtocolSpec, geom: AttackGeometry, d: int, S=frozenset(), pair: int = 0) -> AdversaryStrategy:
    """The pivot protocol with parameter ``d``, parties in ``S`` going silent from round two."""
    faces = _faces(geom, pair)
    if not 0 <= d <= faces.h:
        raise ConfigurationError(f"d must lie in 0..{faces.h}")
    S = frozenset(getattr(S, "members", S))
    corrupt = faces.P | S
    _budget(geom, corrupt, "pivot_variant")
    return AdversaryStrategy(
        budget=geom.t,
        initial=corrupt,
        chooser=_pivot_chooser(faces, lambda adv: d, S),
        name=f"pivot-d{d}",
        target_inputs=faces.v,
        info={"d": d, "S": S},
    )


def random_pivot_attack(spec: ProtocolSpec, geom: AttackGeometry, pair: int = 0) -> AdversaryStrategy:
    """Pivot protocol with ``d`` drawn uniformly from ``0..h`` at the start of each run."""
    faces = _faces(geom, pair)
    _budget(geom, faces.P, "random_pivot_attack")

    def d_of(adv):
        return rand.uniform_below(faces.h + 1, adv.seed, "d")

    return AdversaryStrategy(
        budget=geom.t, initial=faces.P, chooser=_pivot_chooser(faces, d_of), name="pivot-random-d", target_inputs=faces.v
    )


def static_attack_d(seed, h: int) -> int:
    """The cell index drawn by :func:`second_round_static_attack` for an adversary seed."""
    return rand.uniform_below(h, seed, "d")


def second_round_static_attack(spec: ProtocolSpec, geom: AttackGeometry, pair: int = 0) -> AdversaryStrategy:
    """Corrupt the pivots and ``L_{d+1}`` and show faces ``d`` and ``d+1`` to two random halves.

    ``d`` is uniform over ``0..h-1``.  In round one the pivots hand
    ``L_{d+1}`` both versions of their message, so its members can later
    speak consistently with either face.
    """
    faces = _faces(geom, pair)
    h = faces.h
    biggest = max(len(c) for c in faces.pp.cells)
    _budget(geom, len(faces.P) + biggest, "second_round_static_attack")

    def initial(seed, n):
        d = static_attack_d(seed, h)
        return faces.P | faces.cell(d + 1)

    def chooser(r, adv):
        d = static_attack_d(adv.seed, h)
        if r == 1:
            return {p: faces.round1_plan(p, (d, d + 1)) for p in faces.P}
        if r > 2:
            return {c: [(None, abort_action())] for c in adv.corrupted}
        honest = frozenset(range(geom.n)) - adv.corrupted
        half0, half1 = split_honest(honest, rand.derive(adv.seed, "split"))
        return {
            c: [(half0, faces.act(adv, c, d)), (half1, faces.act(adv, c, d + 1)), (None, abort_action())]
            for c in adv.corrupted
        }

    return AdversaryStrategy(
        budget=geom.t, initial=initial, chooser=chooser, name="second-round-static", target_inputs=faces.v
    )


# ------------------------------------------------ public-randomness attacks


class _FaceDeliveries:
    """Round-one deliveries of one pivot in a face, computed on demand per receiver."""

    def __init__(self, faces: "_Faces", e: int, p: int, keep: bytes, flip: bytes):
        self.faces, self.e, self.p, self.keep, self.flip = faces, e, p, keep, flip

    def first(self, j: int):
        b = self.faces.bit(self.p, j, self.e)
        if b is None:
            return None
        return self.keep if b == self.faces.v[self.p] else self.flip

    def get(self, j: int, default=()):
        pay = self.first(j)
        return default if pay is None else (pay,)

    def items(self):
        return [(j, self.get(j)) for j in range(self.faces.geom.n) if self.first(j) is not None]


class FaceSimulator:
    """Replays faces of the pivot protocol from a fixed setup and round-one coins.

    ``outcome(e, S, tape)`` runs face ``e`` with round-two coins ``tape``,
    the members of ``S`` silenced, and returns the common round-two output
    of every party outside ``P``, ``S`` and ``exclude``, or ``None`` if some
    of them did not halt with it.
    """

    def __init__(self, spec: ProtocolSpec, geom: AttackGeometry, pair: int, setup: Optional[SetupBundle], coins1: Sequence[int]):
        self.spec = spec.truncated(2) if spec.q > 2 else spec
        self.geom = geom
        self.pair = pair
        self.faces = _faces(geom, pair)
        self.setup = setup
        self.coins1 = tuple(coins1)
        self._snap: dict = {}
        self._memo: dict = {}

    def _round1_payloads(self):
        """Honest round-one payloads on ``v`` plus each pivot's flipped payload."""
        if not hasattr(self, "_keep"):
            spec, v, f = self.spec, self.faces.v, self.setup
            setup = f.per_party if f is not None else (b"",) * self.geom.n
            rcv = None if spec.multicast else 0
            if not spec.multicast:
                raise ConfigurationError("face replay assumes a multicast protocol")
            self._keep = tuple(
                spec.next_msg(i, rcv, 1, View(i, v[i], setup[i], (self.coins1[i],), ())) for i in range(self.geom.n)
            )
            self._flip = {
                p: spec.next_msg(p, rcv, 1, View(p, 1 - v[p], setup[p], (self.coins1[p],), ())) for p in self.faces.P
            }
        return self._keep, self._flip

    def _after_round1(self, e: int) -> Execution:
        """State after round one of face ``e``, built without re-running round one."""
        x = self._snap.get(e)
        if x is not None:
            return x
        faces, n = self.faces, self.geom.n
        keep, flip = self._round1_payloads()
        strat = pivot_variant(self.spec, self.geom, e, pair=self.pair)
        x = Execution(self.spec, faces.v, strat, 0, setup=self.setup, coins={1: self.coins1}, record=False)
        base = list(keep)
        for p in faces.P:
            base[p] = None
        special = {p: _FaceDeliveries(faces, e, p, keep[p], flip[p]) for p in faces.P}
        rec = RoundRecord(1, tuple(base), special)
        rows: dict = {}
        for j in range(n):
            key = tuple(special[p].first(j) for p in sorted(faces.P))
            row = rows.get(key)
            if row is None:
                lst = base.copy()
                for p, pay in zip(sorted(faces.P), key):
                    lst[p] = pay
                row = rows[key] = tuple(lst)
            x.inbox[j] = (row,)
        x.coins.append(self.coins1)
        x._pc = [(c,) for c in self.coins1]
        x.dropped.update(i for i, c in enumerate(self.coins1) if c is None)
        x._rows.append(rec)
        x.round = 1
        for i in range(n):
            if i in x.corrupted or not x.active(i):
                continue
            out = self.spec.output_fn(i, x.honest_view(i))
            if out is not None:
                x.halt_round[i], x.outputs[i] = 1, int(out)
        self._snap[e] = x
        return x

    def outcome(self, e: int, S: frozenset, tape: tuple, exclude: frozenset = frozenset()) -> Optional[int]:
        key = (e, S, tape, exclude)
        if key in self._memo:
            return self._memo[key]
        x = self._after_round1(e).fork()
        x.coin_override[2] = tuple(None if i in S else c for i, c in enumerate(tape))
        x.step()
        skip = self.faces.P | S | exclude
        vals = set()
        out = None
        for i in range(self.geom.n):
            if i in skip:
                continue
            if x.halt_round[i] is None or x.halt_round[i] > 2:
                break
            vals.add(x.outputs[i])
        else:
            # nobody left to halt counts as not halting
            out = vals.pop() if len(vals) == 1 else None
        self._memo[key] = out
        return out


def _tape(spec: ProtocolSpec, rng, n: int) -> tuple:
    size = spec.coin_domain(2)
    return tuple(rng.randrange(size) if size > 1 else 0 for _ in range(n))


def pr_halting_attack(
    spec: ProtocolSpec,
    geom: AttackGeometry,
    sigma=None,
    lam=Fraction(1, 10),
    delta=Fraction(1, 20),
    pair: int = 0,
    C: float = DEFAULT_C,
) -> AdversaryStrategy:
    """Adaptive rushing attack that looks for a face boundary where halting is rare.

    After seeing the setup and round-one coins it repeatedly samples an
    abort set and estimates, for every ``i``, how often faces ``i`` and
    ``i+1`` both halt with one common value with and without the abort set.
    It settles on the first ``d`` whose estimate drops below ``2 lam`` (or
    the best one seen once the loop budget runs out), corrupts the abort set
    and ``L_{d+1}`` and, in round two, plays whichever nearby face breaks
    halting on the revealed coins.
    """
    if not spec.public_randomness:
        raise ConfigurationError("pr_halting_attack needs a public-randomness protocol")
    if spec.q < 2:
        raise ConfigurationError("pr_halting_attack targets round-two halting")
    faces = _faces(geom, pair)
    h, n = faces.h, geom.n
    sigma = geom.eps_t / 4 if sigma is None else _frac(sigma)
    loops = loop_bound(lam, delta)
    random_tapes = spec.coin_domain(2) > 1
    m = estimation_samples(h, lam, C) if random_tapes else 1  # a fixed tape needs one look
    biggest = max(len(c) for c in faces.pp.cells)
    _budget(geom, len(faces.P) + biggest + geom.abort_cap, "pr_halting_attack")

    threshold = 2 * _frac(lam) * m  # break when hits < 2 lam m

    def plan_round1(adv):
        sim = FaceSimulator(spec, geom, pair, adv.public_setup(), adv.public_coins(1))
        rng = adv.rng("estimate")
        empty = frozenset()
        seen: dict = {}
        best = None
        for _ in range(loops):
            S = _draw_members(rng, n, float(sigma), geom.abort_cap)
            if S in seen and not random_tapes:
                d, hits_d = seen[S]
            else:
                tapes = [_tape(spec, rng, n) for _ in range(m)]
                d, hits_d = None, None
                for i in range(h):
                    hits = 0
                    for tp in tapes:
                        c = sim.outcome(i, S, tp)
                        if c is not None and c == sim.outcome(i, empty, tp) == sim.outcome(i + 1, S, tp) == sim.outcome(i + 1, empty, tp):
                            hits += 1
                    if hits_d is None or hits < hits_d:
                        d, hits_d = i, hits
                    if hits == 0:
                        break  # nothing can beat zero and ties go to the smaller index
                seen[S] = (d, hits_d)
            if best is None or hits_d < best[1]:
                best = (d, hits_d, S)
            if hits_d < threshold:
                best = (d, hits_d, S)
                break
            if geom.abort_cap == 0 and not random_tapes:
                break  # every further pass would repeat this one exactly
        d, hits_d, S = best
        adv.memo.update(d=d, S=S, xi=Fraction(hits_d, m), sim=sim)

    def adaptive(r, adv):
        if r != 2:
            return ()
        return adv.memo["S"] | faces.cell(adv.memo["d"] + 1)

    def chooser(r, adv):
        if r == 1:
            plan_round1(adv)
            d = adv.memo["d"]
            return {p: faces.round1_plan(p, (d, d + 1)) for p in faces.P}
        if r > 2:
            return {c: [(None, abort_action())] for c in adv.corrupted}
        d, S, sim = adv.memo["d"], adv.memo["S"], adv.memo["sim"]
        tape = tuple(adv.public_coins(2))
        empty = frozenset()
        face, silent = d, empty
        broken = [a for a in (0, 1) if sim.outcome(d + a, empty, tape) is None]
        if broken:
            face = d + broken[0]
        else:
            a = next((a for a in (0, 1) if sim.outcome(d + a, S, tape) is None), 0)
            face, silent = d + a, S
        adv.memo["face"] = (face, silent)
        return {c: [(None, faces.act(adv, c, face, silent))] for c in adv.corrupted}

    return AdversaryStrategy(
        budget=geom.t,
        initial=faces.P,
        adaptive=adaptive,
        rushing=True,
        chooser=chooser,
        name="pr-halting",
        target_inputs=faces.v,
        info={"loops": loops, "samples": m, "sigma": sigma},
    )


def _agreement_event(sim: FaceSimulator, d: int, S: frozenset, tape: tuple, cell: frozenset) -> bool:
    """Both outputs reachable on this tape, each with or without the abort set."""
    got = {sim.outcome(d, S2, tape, exclude=cell) for S2 in (frozenset(), S)}
    return {0, 1} <= got


def agreement_scores(spec, geom, sigma, pair=0, samples=100, seed=0) -> list:
    """Estimated probability, per ``d`` in ``1..h-1``, that one tape admits both outputs."""
    faces = _faces(geom, pair)
    n = geom.n
    rng = rand.stream(seed, "agreement-scores")
    scores = []
    draws = []
    for _ in range(samples):
        f = spec.setup_sampler(rng, n) if spec.setup_sampler else None
        coins1 = tuple(rng.randrange(spec.coin_domain(1)) if spec.coin_domain(1) > 1 else 0 for _ in range(n))
        S = frozenset(i for i in range(n) if rng.random() < float(sigma))
        draws.append((FaceSimulator(spec, geom, pair, f, coins1), S, _tape(spec, rng, n)))
    for d in range(1, faces.h):
        hits = sum(_agreement_event(sim, d, S, tp, faces.cell(d)) for sim, S, tp in draws)
        scores.append(Fraction(hits, samples))
    return scores


def pr_agreement_attack(
    spec: ProtocolSpec,
    geom: AttackGeometry,
    sigma=None,
    pair: int = 0,
    alpha=Fraction(1, 10),
    C: float = DEFAULT_C,
    samples: Optional[int] = None,
    seed=0,
    d: Optional[int] = None,
) -> AdversaryStrategy:
    """Pivot face ``d`` in round one, then an abort set that is silent toward one random half only.

    ``d`` maximises the estimated chance that one tape admits both outputs.
    That estimate averages over setups, so it is computed once here from
    ``seed`` rather than inside every run; pass ``d`` to skip it.
    """
    if not spec.public_randomness:
        raise ConfigurationError("pr_agreement_attack needs a public-randomness protocol")
    faces = _faces(geom, pair)
    h, n = faces.h, geom.n
    if h < 2:
        raise ConfigurationError("pr_agreement_attack needs at least two cells")
    sigma = geom.eps_t / 4 if sigma is None else _frac(sigma)
    if d is None:
        m = samples or math.ceil(C * math.log(h / float(alpha)) / float(alpha))
        scores = agreement_scores(spec, geom, sigma, pair, m, seed)
        d = 1 + max(range(len(scores)), key=lambda i: (scores[i], -i))
    if not 1 <= d <= h - 1:
        raise ConfigurationError(f"d must lie in 1..{h - 1}")
    cell = faces.cell(d)
    _budget(geom, len(faces.P | cell) + geom.abort_cap, "pr_agreement_attack")

    def abort_set(seed_):
        return sample_abort_set(n, sigma, rand.derive(seed_, "S"), geom.abort_cap).members

    def initial(seed_, n_):
        return faces.P | cell | abort_set(seed_)

    def chooser(r, adv):
        if r == 1:
            return {p: faces.round1_plan(p, (d,)) for p in faces.P}
        if r > 2:
            return {c: [(None, abort_action())] for c in adv.corrupted}
        S = abort_set(adv.seed)
        rng = adv.rng("faces")
        S0 = S if rng.getrandbits(1) else frozenset()
        S1 = S if rng.getrandbits(1) else frozenset()
        honest = frozenset(range(n)) - adv.corrupted
        half0, half1 = split_honest(honest, rand.derive(adv.seed, "split"))
        plan = {}
        for c in adv.corrupted:
            if c in faces.P:
                plan[c] = [(None, abort_action())]
                continue
            honest_act = select_action(adv.inputs[c], adv.inbox(c))
            a0 = abort_action() if c in S0 else honest_act
            a1 = abort_action() if c in S1 else honest_act
            plan[c] = [(half0, a0), (half1, a1), (None, abort_action())]
        return plan

    return AdversaryStrategy(
        budget=geom.t,
        initial=initial,
        rushing=True,
        chooser=chooser,
        name="pr-agreement",
        target_inputs=faces.v,
        info={"d": d},
    )


# ------------------------------------------------------------ leader attack


def withhold_leader_attack(spec: ProtocolSpec, corrupt: Sequence[int], coin_rounds: Optional[Sequence[int]] = None) -> AdversaryStrategy:
    """In each coin round, a corrupted holder of the smallest string hides it from half the honest parties."""
    corrupt = frozenset(corrupt)
    if coin_rounds is None:
        coin_rounds = [r for r in range(1, spec.q + 1) if spec.coin_domain(r) > 1]
    coin_rounds = frozenset(coin_rounds)

    def chooser(r, adv):
        if r not in coin_rounds:
            return {}
        coins = adv.public_coins(r)
        leader = min((c, i) for i, c in enumerate(coins) if c is not None)[1]
        if leader not in adv.corrupted:
            return {}
        honest = frozenset(range(adv.n)) - adv.corrupted
        _, half1 = split_honest(honest, rand.derive(adv.seed, "split", r))
        act = select_action(adv.inputs[leader], adv.inbox(leader))
        adv.memo.setdefault("hidden", []).append(r)
        return {leader: [(half1, abort_action()), (None, act)]}

    return AdversaryStrategy(
        budget=len(corrupt), initial=corrupt, rushing=True, chooser=chooser, name="withhold-leader"
    )
