"""Locally consistent actions, corruption schedules and the trace validator.

A corrupted party may stay silent, or it may pick an input bit and, for
every earlier round and sender, one payload it really received, then send
whatever the honest next-message function yields on that choice with its
honestly sampled coins.  Anything else is outside the model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

from . import rand
from .core import (
    ConfigurationError,
    ExecutionTrace,
    Inbox,
    ProtocolSpec,
    View,
)


@dataclass(frozen=True)
class LcAction:
    kind: str  # "abort" or "select"
    claimed_input: int = 0
    claimed_inbox: Inbox = ()


_ABORT = LcAction("abort")


def abort_action() -> LcAction:
    return _ABORT


def select_action(bit: int, inbox: Inbox) -> LcAction:
    """Send what an honest party with input ``bit`` and this inbox would send."""
    if bit not in (0, 1):
        raise ConfigurationError("claimed input must be a bit")
    inbox = tuple(inbox)
    for row in inbox:
        if not isinstance(row, tuple):
            raise ConfigurationError("each inbox round must be a tuple of payloads")
        for p in row:
            if p is not None and not isinstance(p, bytes):
                raise ConfigurationError("inbox entries must be bytes or None")
    return LcAction("select", bit, inbox)


@dataclass(frozen=True)
class AdversaryStrategy:
    """Corruption schedule, timing and per-round action chooser.

    ``initial`` is a set fixed before setup, or a function of the
    adversary's seed and ``n`` returning one (a static choice that may be
    random).  ``adaptive(round, view)`` returns parties to corrupt at the
    start of ``round``.  ``chooser(round, view)`` maps each corrupted
    sender to a list of ``(receivers, actions)``; see
    :meth:`bahalt.core.Execution._realize`.
    """

    budget: int
    initial: Any = frozenset()
    adaptive: Optional[Callable] = None
    rushing: bool = False
    chooser: Optional[Callable] = None
    name: str = "custom"
    target_inputs: Optional[tuple] = None
    info: dict = field(default_factory=dict, compare=False)

    @property
    def static(self) -> bool:
        return self.adaptive is None

    def initial_corruptions(self, seed, n: int) -> frozenset:
        s = self.initial(seed, n) if callable(self.initial) else self.initial
        s = frozenset(int(x) for x in s)
        if len(s) > self.budget:
            raise ConfigurationError(f"{self.name}: {len(s)} initial corruptions exceed budget {self.budget}")
        return s


def split_honest(who: Iterable[int], seed) -> tuple[frozenset, frozenset]:
    """Independent fair coin per party: heads lands in the first half."""
    half0, half1 = set(), set()
    for i in sorted(set(who)):
        (half0 if rand.prf(seed, "split", i) & 1 == 0 else half1).add(i)
    return frozenset(half0), frozenset(half1)


# --------------------------------------------------------------- validator


@dataclass
class ValidationReport:
    ok: bool
    violations: list = field(default_factory=list)  # (round, sender, receiver, reason)

    def to_json(self) -> str:
        return json.dumps(
            {"ok": self.ok, "violations": [list(v) for v in self.violations]}, sort_keys=True
        )


def _inbox_of(trace: ExecutionTrace, spec: ProtocolSpec, party: int, upto: int) -> tuple:
    """Accepted (first well-formed) payloads of ``party`` for rounds ``1..upto``."""
    wf = spec.well_formed
    rows = []
    for r in range(1, upto + 1):
        rec = trace.rounds[r - 1]
        row = []
        for s in range(trace.n):
            pick = None
            for p in rec.delivered(s, party):
                if wf is None or wf(r, p):
                    pick = p
                    break
            row.append(pick)
        rows.append(tuple(row))
    return tuple(rows)


def _witness_ok(trace, spec, r, sender, receiver, payload, bit, inbox) -> bool:
    if len(inbox) != r - 1:
        return False
    for j, row in enumerate(inbox, start=1):
        if len(row) != trace.n:
            return False
        rec = trace.rounds[j - 1]
        for s, p in enumerate(row):
            if p is not None and p not in rec.delivered(s, sender):
                return False
    setup = trace.setup.per_party[sender] if trace.setup is not None else b""
    coins = tuple(trace.coins[k][sender] for k in range(r))
    try:
        produced = spec.next_msg(sender, receiver, r, View(sender, bit, setup, coins, inbox))
    except Exception:
        return False
    return produced == payload


def check_message(
    trace: ExecutionTrace, spec: ProtocolSpec, r: int, sender: int, receiver: int, payload: bytes, hints=()
) -> Optional[str]:
    """``None`` if some locally consistent choice explains ``payload``, else a reason.

    Candidate witnesses are the recorded hints plus the sender's genuine
    inbox under either input bit.  Each candidate is checked from scratch
    against the delivery record and the engine coins.
    """
    rcv = None if spec.multicast else receiver
    genuine = _inbox_of(trace, spec, sender, r - 1)
    candidates = [(a.claimed_input, a.claimed_inbox) for a in hints if a.kind == "select"]
    candidates += [(trace.inputs[sender], genuine), (1 - trace.inputs[sender], genuine)]
    for bit, inbox in candidates:
        if _witness_ok(trace, spec, r, sender, rcv, payload, bit, inbox):
            return None
    return "no locally consistent witness reproduces the payload"


def _hints_for(rec, sender: int, receiver: int) -> tuple:
    for receivers, actions in rec.plans.get(sender, ()):
        if receivers is None or receiver in receivers:
            return actions
    return ()


def validate_locally_consistent(
    trace: ExecutionTrace, spec: ProtocolSpec, strategy: Optional[AdversaryStrategy] = None
) -> ValidationReport:
    """Re-derive every corrupted payload in ``trace`` and report the ones that cannot be explained."""
    if trace.n != spec.n or trace.spec_name != spec.name:
        raise ConfigurationError("trace was not produced by this protocol")
    if len(trace.rounds) != len(trace.coins):
        raise ConfigurationError("trace was recorded without message history")
    v: list = []
    corrupted = sorted(trace.corrupted)
    budget = strategy.budget if strategy is not None else len(corrupted)
    if len(corrupted) > budget:
        v.append((0, -1, -1, f"{len(corrupted)} corruptions exceed budget {budget}"))
    if strategy is not None and strategy.static:
        late = [c for c in corrupted if trace.corruption_log[c] != 0]
        if late:
            v.append((0, late[0], -1, "static strategy corrupted a party after setup"))

    # coins must be the engine's, not the adversary's
    for r, row in enumerate(trace.coins, start=1):
        size = spec.coin_domain(r)
        for i in corrupted:
            expect = 0 if size <= 1 else rand.uniform_below(size, trace.seed, "coin", i, r)
            if row[i] != expect:
                v.append((r, i, -1, "coin differs from the engine sample"))

    for rec in trace.rounds:
        r = rec.round
        for c in corrupted:
            since = trace.corruption_log[c]
            if since > r or c in trace.dropped:
                continue
            checked: dict = {}
            for j in range(trace.n):
                for p in rec.delivered(c, j):
                    key = (p, None if spec.multicast else j)
                    if key not in checked:
                        checked[key] = check_message(trace, spec, r, c, j, p, _hints_for(rec, c, j))
                    if checked[key] is not None:
                        v.append((r, c, j, checked[key]))
    return ValidationReport(not v, v)
