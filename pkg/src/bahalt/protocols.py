"""Reference agreement protocols used as attack targets.

Each builder returns a :class:`~bahalt.core.ProtocolSpec`.  All of them
multicast, so a party's payload never depends on the receiver.  State that a
party accumulates over rounds is recomputed from its inbox by a cached
replay, which keeps the next-message functions pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional

from .core import ConfigurationError, ProtocolSpec, SetupBundle, View, pack_public, unpack_public

KAPPA = 64  # bits in a micali_lite coin string


def _bit_ok(r: int, p: bytes) -> bool:
    return len(p) == 1 and p[0] in (0, 1)


def _envelope_ok(width_of: Callable[[int], int], body_len: int, max_body: int = 1):
    """Well-formedness for envelopes with no setup and a fixed body length."""

    def ok(r: int, p: bytes) -> bool:
        w = width_of(r)
        if len(p) != 3 + w + body_len or p[0] != w or p[1 + w] or p[2 + w]:
            return False
        return max(p[3 + w :]) <= max_body

    return ok


def _count(row) -> tuple[int, int]:
    """Zeros and ones among single-bit bodies in one inbox round."""
    z = o = 0
    for p in row:
        if p is None:
            continue
        if p[-1]:
            o += 1
        else:
            z += 1
    return z, o


# ----------------------------------------------------------- one round


def one_round_majority(n: int, public: bool = False) -> ProtocolSpec:
    """Everyone sends its bit once and outputs the majority it received."""
    if n < 1:
        raise ConfigurationError("n must be positive")

    if public:

        def next_msg(s, j, r, view):
            return pack_public(0, 0, b"", bytes([view.input_bit]))

        wf = _envelope_ok(lambda r: 0, 1)
    else:

        def next_msg(s, j, r, view):
            return bytes([view.input_bit])

        wf = _bit_ok

    def output_fn(i, view):
        z, o = _count(view.inbox[0])
        return 1 if o > z else 0

    return ProtocolSpec(
        name="one-round-majority",
        n=n,
        q=1,
        next_msg=next_msg,
        output_fn=output_fn,
        public_randomness=public,
        well_formed=wf,
        params={"n": n, "public": public},
    )


# ------------------------------------------------- two-round coin majority


def two_round_coin_majority(n: int, t: int) -> ProtocolSpec:
    """Inputs in round one, a public coin plus an echo in round two.

    A party keeps running exactly when some bit has at least ``n - t``
    votes and the coin majority points the other way; otherwise it outputs
    the coin majority.  There is no third round, so a party that keeps
    running ends with the abort output.
    """
    if n % 2 == 0:
        raise ConfigurationError("two_round_coin_majority needs n odd")
    if not 0 <= t < n:
        raise ConfigurationError("need 0 <= t < n")

    def next_msg(s, j, r, view):
        if r == 1:
            return pack_public(0, 0, b"", bytes([view.input_bit]))
        echo = bytes(2 if p is None else p[-1] for p in view.inbox[0])
        return pack_public(view.coins[1], 1, b"", echo)

    def well_formed(r, p):
        try:
            coin, setup, body = unpack_public(p)
        except ValueError:
            return False
        if r == 1:
            return p[0] == 0 and not setup and len(body) == 1 and body[0] <= 1
        return p[0] == 1 and coin <= 1 and not setup and len(body) == n and max(body) <= 2

    def output_fn(i, view):
        if len(view.inbox) < 2:
            return None
        z, o = _count(view.inbox[0])
        cz = co = 0
        for p in view.inbox[1]:
            if p is not None:
                if p[1]:
                    co += 1
                else:
                    cz += 1
        coin_maj = 1 if co > cz else 0
        strong = 0 if z >= n - t else 1 if o >= n - t else None
        if strong is not None and coin_maj != strong:
            return None
        return coin_maj

    return ProtocolSpec(
        name="two-round-coin-majority",
        n=n,
        q=2,
        next_msg=next_msg,
        output_fn=output_fn,
        coin_domains=(1, 2),
        public_randomness=True,
        well_formed=well_formed,
        params={"n": n, "t": t},
    )


# ---------------------------------------------------------- micali_lite


@lru_cache(maxsize=1 << 14)
def _micali_state(n: int, t: int, inbox: tuple) -> tuple[int, Optional[int]]:
    """Replay the phase rules over a whole inbox: returns (bit, output or None)."""
    b = 0
    for idx, row in enumerate(inbox):
        kind = idx % 3
        z, o = _count(row)
        if kind == 0:
            if z >= n - t:
                b = 0
            elif o >= n - t:
                b = 1
            else:
                best = None
                for s, p in enumerate(row):
                    if p is not None:
                        c = int.from_bytes(p[1:9], "big")
                        if best is None or c < best[0]:
                            best = (c, s)
                b = 0 if best is None else best[0] & 1
        elif kind == 1:
            if z >= n - t:
                return 0, 0
            b = 1 if o >= n - t else 0
        else:
            if o >= n - t:
                return 1, 1
            b = 0 if z >= n - t else 1
    return b, None


def micali_lite(n: int, t: int, phase_limit: int = 10) -> ProtocolSpec:
    """Three-round phases: a coin round, a chance to stop on 0, a chance to stop on 1.

    In the coin round every party also multicasts a fresh 64-bit string; if
    no bit has ``n - t`` votes a party adopts the low bit of the smallest
    string it received (ties go to the lower index).  Coins travel inside
    the payloads, so the protocol has public randomness.
    """
    if phase_limit < 1:
        raise ConfigurationError("phase_limit must be at least 1")
    if not 0 <= t < n:
        raise ConfigurationError("need 0 <= t < n")
    width = KAPPA // 8
    q = 3 * phase_limit
    domains = tuple((1 << KAPPA) if r % 3 == 0 else 1 for r in range(q))

    def next_msg(s, j, r, view):
        b = view.input_bit if r == 1 else _micali_state(n, t, view.inbox)[0]
        if (r - 1) % 3 == 0:
            return pack_public(view.coins[r - 1], width, b"", bytes([b]))
        return pack_public(0, 0, b"", bytes([b]))

    def output_fn(i, view):
        return _micali_state(n, t, view.inbox)[1]

    return ProtocolSpec(
        name="micali-lite",
        n=n,
        q=q,
        next_msg=next_msg,
        output_fn=output_fn,
        coin_domains=domains,
        public_randomness=True,
        well_formed=_envelope_ok(lambda r: width if (r - 1) % 3 == 0 else 0, 1),
        params={"n": n, "t": t, "phase_limit": phase_limit},
    )


def micali_leader(trace, phase: int) -> int:
    """Holder of the smallest coin string in the coin round of ``phase`` (1-based)."""
    row = trace.coins[3 * (phase - 1)]
    return min(range(trace.n), key=lambda i: (row[i], i))


# ------------------------------------------------------------- beacons


@lru_cache(maxsize=1 << 14)
def _beacon_state(n: int, t: int, beacons: bytes, inbox: tuple) -> tuple[int, Optional[int]]:
    b, strong_prev = 0, None
    for idx, row in enumerate(inbox):
        z, o = _count(row)
        m, c = (1, o) if o > z else (0, z)
        strong = m if c >= n - t else None
        if strong is not None and strong == strong_prev:
            return m, m
        strong_prev = strong
        b = m if c >= n - 2 * t else beacons[idx]
    return b, None


def beacon_protocol(n: int, t: int, phase_limit: int = 8) -> ProtocolSpec:
    """One vote per round; ties and weak majorities fall back on a shared beacon bit.

    A trusted setup hands every party the same string of per-phase beacon
    bits.  A party stops once the same value has had ``n - t`` votes in two
    consecutive rounds.  Payloads carry no randomness, and the beacon is
    never revealed, so this protocol does not have public randomness.
    """
    if not 0 <= t < n:
        raise ConfigurationError("need 0 <= t < n")

    def setup_sampler(rng, size):
        beacons = bytes(rng.getrandbits(1) for _ in range(phase_limit))
        return SetupBundle((beacons,) * size, "shared-beacons")

    def next_msg(s, j, r, view):
        b = view.input_bit if r == 1 else _beacon_state(n, t, view.setup, view.inbox)[0]
        return bytes([b])

    def output_fn(i, view):
        return _beacon_state(n, t, view.setup, view.inbox)[1]

    return ProtocolSpec(
        name="beacon",
        n=n,
        q=phase_limit,
        next_msg=next_msg,
        output_fn=output_fn,
        setup_sampler=setup_sampler,
        public_randomness=False,
        well_formed=_bit_ok,
        params={"n": n, "t": t, "phase_limit": phase_limit},
    )


# -------------------------------------------------------------- catalog


@dataclass(frozen=True)
class ProtocolCatalogEntry:
    name: str
    builder: Callable[..., ProtocolSpec]
    parameters: tuple[str, ...]
    claimed: str  # documented (alpha, beta, q, gamma); measured, not asserted

    def build(self, **kw) -> ProtocolSpec:
        return self.builder(**{k: kw[k] for k in self.parameters if k in kw})


CATALOG: dict[str, ProtocolCatalogEntry] = {
    e.name: e
    for e in (
        ProtocolCatalogEntry(
            "one-round-majority", one_round_majority, ("n",), "alpha=0 honest only, beta=0 for t<n/2, q=1, gamma=1"
        ),
        ProtocolCatalogEntry(
            "two-round-coin-majority", two_round_coin_majority, ("n", "t"), "alpha=0, beta=0, q=2, gamma=1/2"
        ),
        ProtocolCatalogEntry(
            "micali-lite",
            micali_lite,
            ("n", "t", "phase_limit"),
            "t<n/3: alpha=0, beta=0, q=3, gamma>=1/3 per phase",
        ),
        ProtocolCatalogEntry(
            "beacon", beacon_protocol, ("n", "t", "phase_limit"), "t<n/4: alpha=0, beta=0, halts within 3 rounds honestly"
        ),
    )
}


def build(name: str, **params) -> ProtocolSpec:
    try:
        entry = CATALOG[name]
    except KeyError:
        raise ConfigurationError(f"unknown protocol {name!r}; known: {', '.join(CATALOG)}") from None
    missing = [p for p in entry.parameters if p not in params and p != "phase_limit"]
    if missing:
        raise ConfigurationError(f"{name} needs parameters: {', '.join(missing)}")
    return entry.build(**params)
