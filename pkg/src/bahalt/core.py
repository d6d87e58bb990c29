"""Protocols, views, traces and the synchronous round engine.

Parties are numbered ``0..n-1``.  A payload is a ``bytes`` object and a
missing message is ``None``.  Coins are integers drawn from the per-round
domain declared by the protocol; a domain of size 1 means the round uses no
randomness and the coin is recorded as ``0``.  A coin of ``None`` (only
possible through an explicit override) makes the party crash: it sends
nothing from that round on and never outputs.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from . import rand

Payload = Optional[bytes]
Inbox = tuple  # tuple over completed rounds of length-n tuples of Payload


class ConfigurationError(ValueError):
    """Raised for inputs that do not fit the protocol or the parameters."""


class StrategyViolation(RuntimeError):
    """An adversary tried an action outside the locally consistent model."""

    def __init__(self, round: int, sender: int, receiver: Optional[int], reason: str):
        self.round, self.sender, self.receiver, self.reason = round, sender, receiver, reason
        super().__init__(f"round {round}, party {sender} -> {receiver}: {reason}")


# ---------------------------------------------------------------- payloads


def pack_public(coin: int, width: int, setup: bytes, body: bytes) -> bytes:
    """Envelope for public-randomness payloads: the coin and setup are readable by anyone.

    Layout: one byte coin width, the coin (big endian), two bytes setup
    length, the setup string, then the body.  The body sits at the end so a
    single-byte body can be read as ``payload[-1]``.
    """
    if len(setup) > 0xFFFF:
        raise ConfigurationError("setup string too long for the envelope")
    return bytes([width]) + coin.to_bytes(width, "big") + len(setup).to_bytes(2, "big") + setup + body


def unpack_public(payload: bytes) -> tuple[int, bytes, bytes]:
    """Inverse of :func:`pack_public`; raises ``ValueError`` on malformed input."""
    if len(payload) < 3:
        raise ValueError("payload shorter than an envelope header")
    w = payload[0]
    if len(payload) < 3 + w:
        raise ValueError("truncated coin field")
    coin = int.from_bytes(payload[1 : 1 + w], "big")
    slen = int.from_bytes(payload[1 + w : 3 + w], "big")
    start = 3 + w
    if len(payload) < start + slen:
        raise ValueError("truncated setup field")
    return coin, payload[start : start + slen], payload[start + slen :]


def coin_width(size: int) -> int:
    return 0 if size <= 1 else ((size - 1).bit_length() + 7) // 8


# ------------------------------------------------------------------ types


@dataclass(frozen=True)
class SetupBundle:
    per_party: tuple[bytes, ...]
    source: str = "none"


@dataclass(frozen=True)
class Message:
    round: int
    sender: int
    receiver: int
    payload: bytes = b""
    is_abort: bool = False


class View:
    """What a party knows when it computes a message or an output.

    ``coins`` runs through the current round.  ``inbox[j]`` holds the
    accepted payloads of round ``j + 1`` indexed by sender.
    """

    __slots__ = ("party", "input_bit", "setup", "coins", "inbox")

    def __init__(self, party: int, input_bit: int, setup: bytes, coins: tuple, inbox: Inbox):
        self.party = party
        self.input_bit = input_bit
        self.setup = setup
        self.coins = coins
        self.inbox = inbox

    @property
    def round(self) -> int:
        return len(self.coins)


@dataclass(frozen=True)
class ProtocolSpec:
    """A synchronous protocol given by its next-message and output functions.

    ``next_msg(sender, receiver, round, view)`` receives ``receiver=None``
    when ``multicast`` is set, since the payload then cannot depend on it.
    ``output_fn(party, view)`` runs after each round and returns a bit to halt
    or ``None`` to continue.
    """

    name: str
    n: int
    q: int
    next_msg: Callable[[int, Optional[int], int, View], bytes]
    output_fn: Callable[[int, View], Optional[int]]
    coin_domains: tuple[int, ...] = ()
    setup_sampler: Optional[Callable[[random.Random, int], SetupBundle]] = None
    public_randomness: bool = False
    multicast: bool = True
    well_formed: Optional[Callable[[int, bytes], bool]] = None
    params: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def coin_domain(self, r: int) -> int:
        return self.coin_domains[r - 1] if r <= len(self.coin_domains) else 1

    def truncated(self, q: int) -> "ProtocolSpec":
        """Same protocol, audited against a different round budget."""
        if q < 1:
            raise ConfigurationError("q must be at least 1")
        return replace(self, q=q)


@dataclass
class RoundRecord:
    """Everything sent in one round.

    ``multicast[s]`` is the single payload ``s`` sent to every party, or
    ``None``.  Senders whose behaviour depends on the receiver appear in
    ``special`` instead, mapping receiver to the tuple of payloads it got
    (empty tuple for nothing).  ``plans`` keeps the adversary's claimed
    witnesses for corrupted senders as ``(receivers, actions)`` pairs.
    """

    round: int
    multicast: tuple
    special: dict
    plans: dict = field(default_factory=dict)

    def delivered(self, sender: int, receiver: int) -> tuple:
        d = self.special.get(sender)
        if d is not None:
            return d.get(receiver, ())
        p = self.multicast[sender]
        return () if p is None else (p,)


@dataclass
class ExecutionTrace:
    spec_name: str
    n: int
    q: int
    seed: Any
    inputs: tuple[int, ...]
    setup: Optional[SetupBundle]
    coins: tuple  # per round, per party
    rounds: list  # RoundRecord per simulated round
    halt_round: tuple  # per party: round or None (never halted)
    outputs: tuple  # per party: bit or None
    corruption_log: tuple  # per party: round it was corrupted (0 = before setup) or None
    dropped: frozenset = frozenset()

    @property
    def corrupted(self) -> frozenset:
        return frozenset(i for i, c in enumerate(self.corruption_log) if c is not None)

    @property
    def honest(self) -> frozenset:
        bad = self.corrupted | self.dropped
        return frozenset(i for i in range(self.n) if i not in bad)

    def messages(self, round: int) -> list[Message]:
        rec = self.rounds[round - 1]
        out = []
        for s in range(self.n):
            for j in range(self.n):
                ps = rec.delivered(s, j)
                if not ps:
                    out.append(Message(round, s, j, b"", True))
                for p in ps:
                    out.append(Message(round, s, j, p, False))
        return out

    def to_jsonl(self) -> str:
        """One JSON record for the header and one per simulated round."""
        lines = [
            json.dumps(
                {
                    "protocol": self.spec_name,
                    "n": self.n,
                    "q": self.q,
                    "seed": str(self.seed),
                    "inputs": list(self.inputs),
                    "setup": None if self.setup is None else [s.hex() for s in self.setup.per_party],
                    "corruption_log": list(self.corruption_log),
                    "dropped": sorted(self.dropped),
                },
                sort_keys=True,
            )
        ]
        for rec in self.rounds:
            sent = []
            for s in range(self.n):
                if s in rec.special:
                    for j, ps in sorted(rec.special[s].items()):
                        sent.append({"from": s, "to": j, "payloads": [p.hex() for p in ps]})
                elif rec.multicast[s] is not None:
                    sent.append({"from": s, "to": "all", "payloads": [rec.multicast[s].hex()]})
            halted = [i for i, h in enumerate(self.halt_round) if h == rec.round]
            lines.append(
                json.dumps(
                    {"round": rec.round, "coins": list(self.coins[rec.round - 1]), "messages": sent, "halted": halted},
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + "\n"


def outputs_of(trace: ExecutionTrace, who: Iterable[int]) -> tuple:
    """Outputs of the listed parties, ``None`` standing for the abort output."""
    who = sorted(set(who))
    for i in who:
        if not 0 <= i < trace.n:
            raise ConfigurationError(f"party {i} out of range for n={trace.n}")
    return tuple(trace.outputs[i] for i in who)


def halted_by(trace: ExecutionTrace, round: int, who: Iterable[int]) -> bool:
    for i in who:
        if not 0 <= i < trace.n:
            raise ConfigurationError(f"party {i} out of range for n={trace.n}")
        h = trace.halt_round[i]
        if h is None or h > round:
            return False
    return True


# ----------------------------------------------------------------- engine


def _check_inputs(spec: ProtocolSpec, inputs: Sequence[int]) -> tuple[int, ...]:
    if len(inputs) != spec.n:
        raise ConfigurationError(f"{spec.name} expects {spec.n} inputs, got {len(inputs)}")
    out = tuple(int(b) for b in inputs)
    if any(b not in (0, 1) for b in out):
        raise ConfigurationError("inputs must be bits")
    return out


class Execution:
    """A single execution that can be advanced one round at a time.

    Adversaries use :meth:`fork` together with coin overrides to rehearse
    continuations of the current state; that is how the estimation attacks
    look ahead without touching the real run.
    """

    def __init__(
        self,
        spec: ProtocolSpec,
        inputs: Sequence[int],
        adversary=None,
        seed: Any = 0,
        *,
        setup: Optional[SetupBundle] = None,
        coins: Optional[Mapping[int, Sequence[Optional[int]]]] = None,
        record: bool = True,
    ):
        self.spec = spec
        self.n = n = spec.n
        self.inputs = _check_inputs(spec, inputs)
        self.adversary = adversary
        self.seed = seed
        self.record = record
        self.coin_override = dict(coins or {})
        self.round = 0
        self.corrupted: set[int] = set()
        self.corruption_log: list = [None] * n
        self.memo: dict = {}
        self.adv_seed = rand.derive(seed, "adversary")
        if adversary is not None:
            first = adversary.initial_corruptions(self.adv_seed, n)
            self._corrupt(first, 0)
        if setup is None and spec.setup_sampler is not None:
            setup = spec.setup_sampler(rand.stream(seed, "setup"), n)
        if setup is not None and len(setup.per_party) != n:
            raise ConfigurationError("setup bundle length differs from n")
        self.setup = setup
        self.setup_strings = setup.per_party if setup is not None else (b"",) * n
        self.coins: list[tuple] = []
        self.inbox: list[tuple] = [()] * n
        self._pc: list[tuple] = [()] * n  # coins per party so far
        self.records: list[RoundRecord] = []
        self._rows: list = []  # per round: the RoundRecord, kept even without recording
        self.halt_round: list = [None] * n
        self.outputs: list = [None] * n
        self.dropped: set[int] = set()

    # -- bookkeeping
    def _corrupt(self, parties: Iterable[int], r: int) -> None:
        new = {int(p) for p in parties} - self.corrupted
        for p in new:
            if not 0 <= p < self.n:
                raise ConfigurationError(f"cannot corrupt party {p}")
        if len(self.corrupted) + len(new) > self.adversary.budget:
            raise ConfigurationError(
                f"corruption budget {self.adversary.budget} exceeded in round {r}"
            )
        for p in new:
            self.corrupted.add(p)
            self.corruption_log[p] = r

    def fork(self) -> "Execution":
        """Independent copy sharing immutable history."""
        x = Execution.__new__(Execution)
        x.__dict__.update(self.__dict__)
        x.coin_override = dict(self.coin_override)
        x.corrupted = set(self.corrupted)
        x.corruption_log = list(self.corruption_log)
        x.memo = dict(self.memo)
        x.coins = list(self.coins)
        x.inbox = list(self.inbox)
        x._pc = list(self._pc)
        x.records = list(self.records)
        x._rows = list(self._rows)
        x.halt_round = list(self.halt_round)
        x.outputs = list(self.outputs)
        x.dropped = set(self.dropped)
        return x

    def active(self, i: int) -> bool:
        return i not in self.dropped and self.halt_round[i] is None

    def coins_of(self, i: int) -> tuple:
        return self._pc[i]

    def delivered(self, r: int, sender: int, receiver: int) -> tuple:
        return self._rows[r - 1].delivered(sender, receiver)

    def honest_view(self, i: int) -> View:
        return View(i, self.inputs[i], self.setup_strings[i], self._pc[i], self.inbox[i])

    def _sample_coins(self, r: int) -> tuple:
        over = self.coin_override.get(r)
        if over is not None:
            if len(over) != self.n:
                raise ConfigurationError(f"coin override for round {r} has wrong length")
            return tuple(over)
        size = self.spec.coin_domain(r)
        if size <= 1:
            return (0,) * self.n
        return tuple(rand.uniform_below(size, self.seed, "coin", i, r) for i in range(self.n))

    def done(self) -> bool:
        if self.round >= self.spec.q:
            return True
        return all(not self.active(i) for i in range(self.n) if i not in self.corrupted)

    # -- one round
    def step(self) -> None:
        spec, n = self.spec, self.n
        r = self.round + 1
        adv = self.adversary
        if adv is not None and adv.adaptive is not None and r > 1:
            self._corrupt(adv.adaptive(r, AdversaryView(self, r, current=False)), r)
        coins_r = self._sample_coins(r)
        for i, c in enumerate(coins_r):
            if c is None:
                self.dropped.add(i)
        self.coins.append(coins_r)
        pc = self._pc
        for i in range(n):
            pc[i] = pc[i] + (coins_r[i],)

        multicast: list = [None] * n
        special: dict = {}
        plans: dict = {}
        for i in range(n):
            if i in self.corrupted or not self.active(i):
                continue
            view = self.honest_view(i)
            if spec.multicast:
                multicast[i] = spec.next_msg(i, None, r, view)
            else:
                special[i] = {j: (spec.next_msg(i, j, r, view),) for j in range(n)}

        if self.corrupted:
            rec = RoundRecord(r, tuple(multicast), special)
            self._rows.append(rec)  # visible to a rushing adversary through the view
            chosen = {}
            if adv.chooser is not None:
                chosen = adv.chooser(r, AdversaryView(self, r, current=True)) or {}
            self._rows.pop()
            for c in sorted(self.corrupted):
                if c in self.dropped:
                    continue
                entries = chosen.get(c)
                if entries is None:
                    from .adversary import select_action

                    entries = [(None, select_action(self.inputs[c], self.inbox[c]))]
                self._realize(r, c, entries, multicast, special, plans)

        rec = RoundRecord(r, tuple(multicast), special, plans)
        self._rows.append(rec)
        if self.record:
            self.records.append(rec)
        self._deliver(r, rec)
        for i in range(n):
            if i in self.corrupted or not self.active(i):
                continue
            out = spec.output_fn(i, self.honest_view(i))
            if out is not None:
                self.halt_round[i] = r
                self.outputs[i] = int(out)
        self.round = r

    def _realize(self, r, c, entries, multicast, special, plans) -> None:
        """Turn a corrupted sender's plan into delivered payloads.

        ``entries`` is a list of ``(receivers, actions)``; ``receivers=None``
        covers everyone not named by an earlier entry.  Receivers left
        uncovered get honest play on the genuine inbox.
        """
        from .adversary import select_action

        resolved = []
        for receivers, actions in entries:
            if not isinstance(actions, (list, tuple)):
                actions = (actions,)
            resolved.append((None if receivers is None else tuple(sorted(set(receivers))), tuple(actions)))
            if receivers is None:
                break
        if not resolved or resolved[-1][0] is not None:
            resolved.append((None, (select_action(self.inputs[c], self.inbox[c]),)))
        plans[c] = resolved

        def emit(receiver, actions):
            out = []
            for a in actions:
                p = self._payload(r, c, receiver, a)
                if p is not None and p not in out:
                    out.append(p)
            return tuple(out)

        if self.spec.multicast:
            payloads = [emit(None, acts) for _, acts in resolved]
            if len(resolved) == 1:
                ps = payloads[0]
                if len(ps) == 1:
                    multicast[c] = ps[0]
                elif ps:
                    special[c] = {j: ps for j in range(self.n)}
                return
        d = {}
        seen: set = set()
        for idx, (receivers, acts) in enumerate(resolved):
            targets = range(self.n) if receivers is None else receivers
            for j in targets:
                if j in seen:
                    continue
                seen.add(j)
                ps = payloads[idx] if self.spec.multicast else emit(j, acts)
                if ps:
                    d[j] = ps
        special[c] = d

    def _payload(self, r: int, c: int, receiver: Optional[int], action) -> Optional[bytes]:
        if action.kind == "abort":
            return None
        inbox = action.claimed_inbox
        if len(inbox) != r - 1:
            raise StrategyViolation(r, c, receiver, f"claimed inbox covers {len(inbox)} rounds, expected {r - 1}")
        for j, row in enumerate(inbox, start=1):
            if len(row) != self.n:
                raise StrategyViolation(r, c, receiver, f"claimed inbox row {j} has wrong length")
            genuine = self.inbox[c][j - 1]
            if row is genuine:
                continue
            for s, p in enumerate(row):
                if p is not None and p != genuine[s] and p not in self.delivered(j, s, c):
                    raise StrategyViolation(r, c, receiver, f"payload from {s} in round {j} was never delivered")
        view = View(c, action.claimed_input, self.setup_strings[c], self.coins_of(c), inbox)
        return self.spec.next_msg(c, receiver, r, view)

    def _deliver(self, r: int, rec: RoundRecord) -> None:
        n = self.n
        wf = self.spec.well_formed
        base = list(rec.multicast)
        for s in rec.special:
            base[s] = None
        if wf is not None:
            # honest payloads come straight from next_msg; only screen corrupted senders
            for s in self.corrupted:
                p = base[s]
                if p is not None and not wf(r, p):
                    base[s] = None
        shared = tuple(base)
        if not rec.special:
            for j in range(n):
                if j in self.corrupted or self.active(j):
                    self.inbox[j] = self.inbox[j] + (shared,)
            return
        rows: dict = {}
        senders = sorted(rec.special)
        verdict: dict = {}

        def first_ok(ps):
            for p in ps:
                if wf is None:
                    return p
                ok = verdict.get(p)
                if ok is None:
                    ok = verdict[p] = wf(r, p)
                if ok:
                    return p
            return None

        for j in range(n):
            if not (j in self.corrupted or self.active(j)):
                continue
            key = tuple(first_ok(rec.special[s].get(j, ())) for s in senders)
            row = rows.get(key)
            if row is None:
                lst = base.copy()
                for s, p in zip(senders, key):
                    lst[s] = p
                row = rows[key] = tuple(lst)
            self.inbox[j] = self.inbox[j] + (row,)

    def run(self) -> "ExecutionTrace":
        while not self.done():
            self.step()
        return self.trace()

    def trace(self) -> ExecutionTrace:
        q = self.spec.q
        halt = tuple(h if h is not None and h <= q else None for h in self.halt_round)
        outs = tuple(o if h is not None else None for o, h in zip(self.outputs, halt))
        return ExecutionTrace(
            spec_name=self.spec.name,
            n=self.n,
            q=q,
            seed=self.seed,
            inputs=self.inputs,
            setup=self.setup,
            coins=tuple(self.coins),
            rounds=list(self.records),
            halt_round=halt,
            outputs=outs,
            corruption_log=tuple(self.corruption_log),
            dropped=frozenset(self.dropped),
        )


class AdversaryView:
    """The adversary's window into a running execution.

    It exposes the input vector, the corrupted parties' private state and
    whatever reached corrupted parties.  Honest payloads of the current
    round are readable only when the strategy is rushing.
    """

    def __init__(self, exe: Execution, round: int, current: bool):
        self._exe = exe
        self.round = round
        self._current = current
        self.spec = exe.spec
        self.n = exe.n
        self.inputs = exe.inputs
        self.corrupted = frozenset(exe.corrupted)
        self.budget = exe.adversary.budget
        self.rushing = exe.adversary.rushing
        self.memo = exe.memo
        self.seed = exe.adv_seed

    def rng(self, *labels) -> random.Random:
        return rand.stream(self.seed, *labels)

    def _own(self, party: int) -> None:
        if party not in self.corrupted:
            raise PermissionError(f"party {party} is not corrupted")

    def coins(self, party: int, round: Optional[int] = None) -> tuple:
        """Coins of a corrupted party through ``round`` (default: all sampled so far)."""
        self._own(party)
        cs = self._exe.coins_of(party)
        if not self._current:
            cs = cs[: self.round - 1]
        return cs if round is None else cs[:round]

    def setup(self, party: int) -> bytes:
        self._own(party)
        return self._exe.setup_strings[party]

    def inbox(self, party: int) -> Inbox:
        """Accepted payloads of a corrupted party for the completed rounds."""
        self._own(party)
        return self._exe.inbox[party]

    def delivered(self, receiver: int, round: int, sender: int) -> tuple:
        """Every payload ``sender`` delivered to the corrupted ``receiver`` in ``round``."""
        self._own(receiver)
        if round > self.round or (round == self.round and not (self._current and self.rushing)):
            raise PermissionError(f"round {round} messages are not visible yet")
        if round == self.round and sender in self.corrupted:
            raise PermissionError("current-round corrupted messages are being chosen")
        return self._exe.delivered(round, sender, receiver)

    def observed(self, round: int, sender: int) -> Payload:
        """First payload from ``sender`` seen by any corrupted party in ``round``."""
        for c in sorted(self.corrupted):
            if round == self.round and sender in self.corrupted:
                return None
            for p in self.delivered(c, round, sender):
                return p
        return None

    def public_coins(self, round: int) -> list:
        """Round coins of every party, read from payloads (public-randomness protocols only)."""
        if not self.spec.public_randomness:
            raise PermissionError("coins are private in this protocol")
        out = []
        for s in range(self.n):
            if s in self.corrupted and (round < self.round or self._current):
                out.append(self._exe.coins_of(s)[round - 1])
                continue
            p = self.observed(round, s)
            out.append(None if p is None else unpack_public(p)[0])
        return out

    def public_setup(self) -> Optional[SetupBundle]:
        if self._exe.setup is None:
            return None
        if not self.spec.public_randomness:
            raise PermissionError("setup is private in this protocol")
        out = []
        for s in range(self.n):
            if s in self.corrupted:
                out.append(self._exe.setup_strings[s])
                continue
            p = self.observed(1, s)
            out.append(b"" if p is None else unpack_public(p)[1])
        return SetupBundle(tuple(out), self._exe.setup.source)

    def payload(self, party: int, receiver: Optional[int], bit: int, inbox: Inbox, round: Optional[int] = None) -> bytes:
        """The message ``party`` would send in ``round`` (default: now) on a claimed input and inbox."""
        self._own(party)
        r = self.round if round is None else round
        if r > self.round:
            raise PermissionError("future coins are not available")
        exe = self._exe
        view = View(party, bit, exe.setup_strings[party], exe.coins_of(party)[:r], inbox)
        return self.spec.next_msg(party, None if self.spec.multicast else receiver, r, view)


def run(spec: ProtocolSpec, inputs: Sequence[int], adversary=None, seed: Any = 0, *, record: bool = True, **kw) -> ExecutionTrace:
    """Execute ``spec`` on ``inputs`` against ``adversary`` (or honestly if ``None``)."""
    return Execution(spec, inputs, adversary, seed, record=record, **kw).run()


def run_honest(spec: ProtocolSpec, inputs: Sequence[int], seed: Any = 0, **kw) -> ExecutionTrace:
    return run(spec, inputs, None, seed, **kw)
