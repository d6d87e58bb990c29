"""The nine acceptance checks.  Each prints exactly one PASS or FAIL line."""

import random
import time
from fractions import Fraction

import pytest

from bahalt import attacks as A
from bahalt import cli, conjecture as C, core, protocols as P, rand, stats as S
from bahalt.adversary import check_message, validate_locally_consistent


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} acceptance-{number}: {detail}")
        assert ok, detail

    return emit


def test_honest_runs_never_violate_agreement_or_validity(report):
    trials = 10_000
    worst, lines, ok = 0.0, [], True
    for spec in (
        P.one_round_majority(30),
        P.two_round_coin_majority(29, 9),
        P.micali_lite(30, 9),
        P.beacon_protocol(30, 7),
    ):
        t0 = time.perf_counter()
        bad = 0
        for b in (0, 1):
            m = S.measure(spec, (b,) * spec.n, None, trials, seed=f"honest-{b}")
            bad += m.agreement_violation.successes + m.validity_violation.successes
        per_protocol = time.perf_counter() - t0
        worst = max(worst, per_protocol)
        ok &= bad == 0 and per_protocol < 60
        lines.append(f"{spec.name}={bad}")
    report(1, ok, f"violations {' '.join(lines)} over {trials} trials per input bit; slowest protocol {worst:.1f}s (< 60s)")


def test_coin_majority_halts_half_the_time(report):
    spec = P.two_round_coin_majority(9, 3)
    inputs = (0,) * 6 + (1,) * 3  # six zeros reach the n - t = 6 threshold
    m = S.measure(spec, inputs, None, 10_000, seed=2)
    h = m.halting_by_q.point
    report(2, 0.48 <= h <= 0.52, f"halting by round 2 = {h:.4f} (want [0.48, 0.52])")


def test_first_round_attack_breaks_agreement(report):
    spec = P.one_round_majority(9)
    geom = A.attack_geometry(9, 3, A.THIRD, A.FIRST_ROUND)
    m = S.measure(spec, geom.v0, A.first_round_attack(spec, geom), 1000, seed=3)
    dis = m.agreement_violation.point
    rep = S.audit(spec, A.FIRST_ROUND, geom, 10_000, seed=7)
    ok = dis >= 0.95 and rep.verdict == "satisfied"
    report(
        3,
        ok,
        f"disagreement {dis:.4f} (>= 0.95, oracle {1 - 2 * 2 ** -6:.4f}); audit gamma={rep.gamma_hat:.3f} "
        f"<= {rep.bound:.3f} -> {rep.verdict}",
    )


def test_second_round_static_audit(report):
    spec = P.two_round_coin_majority(9, 3)
    geom = A.attack_geometry(9, 3, A.QUARTER, A.SECOND_ROUND_ARB)
    t0 = time.perf_counter()
    rep = S.audit(spec, A.SECOND_ROUND_ARB, geom, 10_000, seed=4)
    took = time.perf_counter() - t0
    ok = rep.verdict == "satisfied" and took < 300
    report(
        4,
        ok,
        f"w={geom.w} gamma={rep.gamma_hat:.4f} alpha={rep.alpha_hat:.4f} beta={rep.beta_hat:.4f} "
        f"bound={rep.bound:.4f} slack={rep.slack:.4f} -> {rep.verdict} in {took:.0f}s",
    )


def test_public_randomness_attack_caps_two_round_halting(report):
    spec = P.micali_lite(60, 16, 1).truncated(2)
    geom = A.attack_geometry(60, 16, A.QUARTER, A.SECOND_ROUND_PR)
    eps_gamma = Fraction(1, 10)
    lam = eps_gamma / 10
    halting = []
    for pair, trials in ((0, 10_000), (1, 10_000)):
        adv = A.pr_halting_attack(spec, geom, lam=lam, delta=Fraction(1, 20), pair=pair)
        m = S.measure(spec, geom.pairs[pair].v, adv, trials, seed=f"pr-{pair}")
        halting.append(m.halting_by_q)
    worst = max(h.point for h in halting)
    ok = worst <= 0.5 + 0.1
    detail = ", ".join(f"pair {i}: {h.point:.4f} +/- {h.ci_radius:.4f}" for i, h in enumerate(halting))
    report(5, ok, f"two-round halting under attack {detail}; max {worst:.4f} <= 0.6")


def test_micali_leader_is_corrupted_at_rate_t_over_n(report):
    n, t = 30, 9
    spec = P.micali_lite(n, t, phase_limit=10)
    corrupt = range(t)
    adv = A.withhold_leader_attack(spec, corrupt)
    inputs = tuple(i % 2 for i in range(n))
    phases = hits = 0
    seed = 0
    while phases < 10_000:
        tr = core.run(spec, inputs, adv, seed=f"leader-{seed}", record=False)
        seed += 1
        for ph in range(1, (len(tr.coins) + 2) // 3 + 1):  # phases whose coin round ran
            if phases == 10_000:
                break
            phases += 1
            hits += P.micali_leader(tr, ph) in tr.corrupted
    freq = hits / phases
    report(6, abs(freq - t / n) <= 0.03, f"corrupted leader in {freq:.4f} of {phases} phases (t/n = {t / n:.2f} +/- 0.03)")


def test_conjecture_monte_carlo_matches_exhaustive(report):
    t0 = time.perf_counter()
    families = [C.prefix_sets(10, 2), C.ball_sets(10, 2)]
    exact = {(f.name, s): C.conclusion_probability(f, s) for f in families for s in ("0.1", "0.2", "0.3")}
    exhaustive_time = time.perf_counter() - t0
    covered = total = 0
    for f in families:
        for s in ("0.1", "0.2", "0.3"):
            for rep in range(100):
                est = C.conclusion_probability(f, s, C.MONTE_CARLO, trials=400, seed=f"{f.name}-{s}-{rep}")
                covered += est.covers(exact[(f.name, s)])
                total += 1
    rate = covered / total
    values = ", ".join(f"{k[0]}@{k[1]}={float(v):.4f}" for k, v in exact.items())
    ok = rate >= 0.99 and exhaustive_time < 120
    report(7, ok, f"coverage {rate:.3f} over {total} runs; exhaustive {exhaustive_time:.1f}s; exact {values}")


def _attack_catalog():
    """(name, spec, strategy, inputs) for every attack builder at a small size."""
    out = []
    maj = P.one_round_majority(9)
    g1 = A.attack_geometry(9, 3, A.THIRD, A.FIRST_ROUND)
    out.append(("first-round", maj, A.first_round_attack(maj, g1), g1.v0))
    pub = P.one_round_majority(9, public=True)
    out.append(("first-round-rushing", pub, A.first_round_attack(pub, g1, rushing=True), g1.v0))
    g1q = A.attack_geometry(12, 3, A.QUARTER, A.FIRST_ROUND)
    maj12 = P.one_round_majority(12)
    out.append(("first-round-quarter", maj12, A.first_round_attack(maj12, g1q, pair=1), g1q.pairs[1].v))
    coin = P.two_round_coin_majority(9, 3)
    ga = A.attack_geometry(9, 3, A.QUARTER, A.SECOND_ROUND_ARB)
    out.append(("pivot-d3", coin, A.pivot_variant(coin, ga, 3), ga.v0))
    out.append(("pivot-random-d", coin, A.random_pivot_attack(coin, ga), ga.v0))
    out.append(("second-round-static", coin, A.second_round_static_attack(coin, ga, pair=1), ga.pairs[1].v))
    mic = P.micali_lite(13, 4, 1).truncated(2)
    gm = A.attack_geometry(13, 4, A.QUARTER, A.SECOND_ROUND_PR)
    out.append(("pr-halting", mic, A.pr_halting_attack(mic, gm), gm.v0))
    out.append(("pr-agreement", mic, A.pr_agreement_attack(mic, gm, samples=32), gm.v0))
    gp = A.attack_geometry(9, 3, A.QUARTER, A.SECOND_ROUND_PR)
    out.append(("pr-agreement-coin", coin, A.pr_agreement_attack(coin, gp, samples=32), gp.v0))
    lead = P.micali_lite(13, 4, 3)
    out.append(("withhold-leader", lead, A.withhold_leader_attack(lead, range(4)), (0, 1) * 6 + (1,)))
    return out


def _mutations_flagged(tr, spec, rng, per_trace: int = 2) -> tuple[int, int]:
    """Mutate every byte of a few corrupted payloads to every other value."""
    items = []
    for rec in tr.rounds:
        for c in sorted(tr.corrupted):
            for j in range(tr.n):
                for p in rec.delivered(c, j):
                    items.append((rec.round, c, j, p))
    rng.shuffle(items)
    seen, flagged, exempt = set(), 0, 0
    for r, c, j, p in items:
        if (r, c, p) in seen:
            continue
        seen.add((r, c, p))
        if len(seen) > per_trace:
            break
        view = lambda bit: core.View(  # noqa: E731
            c, bit, tr.setup.per_party[c] if tr.setup else b"", tuple(tr.coins[k][c] for k in range(r)),
            _genuine(tr, spec, c, r),
        )
        other = {spec.next_msg(c, None if spec.multicast else j, r, view(b)) for b in (0, 1)}
        for pos in range(len(p)):
            for val in range(256):
                if val == p[pos]:
                    continue
                m = p[:pos] + bytes([val]) + p[pos + 1 :]
                if m in other:  # the opposite-input message is itself consistent
                    exempt += 1
                    continue
                if check_message(tr, spec, r, c, j, m) is None:
                    return flagged, -1
                flagged += 1
    return flagged, exempt


def _genuine(tr, spec, party, r):
    from bahalt.adversary import _inbox_of

    return _inbox_of(tr, spec, party, r - 1)


def test_attacks_validate_and_mutations_are_caught(report):
    failures = []
    seeds = 1000
    for name, spec, strat, inputs in _attack_catalog():
        for s in range(seeds):
            tr = core.run(spec, inputs, strat, seed=f"{name}-{s}")
            if not validate_locally_consistent(tr, spec, strat).ok:
                failures.append(f"{name}@{s}")
                break
    rng = random.Random(8)
    cat = _attack_catalog()
    flagged = exempt = 0
    missed = []
    for k in range(100):
        name, spec, strat, inputs = cat[k % len(cat)]
        tr = core.run(spec, inputs, strat, seed=f"mutate-{k}")
        f, e = _mutations_flagged(tr, spec, rng)
        if e < 0:
            missed.append(f"{name}#{k}")
        else:
            flagged, exempt = flagged + f, exempt + e
    ok = not failures and not missed
    report(
        8,
        ok,
        f"{len(cat)} strategies x {seeds} seeds, invalid: {failures or 'none'}; "
        f"{flagged} mutations flagged in 100 traces, {exempt} opposite-input exemptions, missed: {missed or 'none'}",
    )


def test_audit_csv_is_reproducible(report, tmp_path):
    outs = []
    for k in range(2):
        path = tmp_path / f"audit{k}.csv"
        code = cli.main(
            [
                "audit", "--stage", "second-round-arb", "--protocol", "two-round-coin-majority", "--n", "9", "--t", "3",
                "--trials", "500", "--seed", "11", "--no-timestamp", "--workers", "1", "--out", str(path),
            ]
        )
        assert code == 0
        outs.append(path.read_bytes())
    first = []
    for k in range(2):
        path = tmp_path / f"first{k}.csv"
        cli.main(["audit", "--n", "9", "--t", "3", "--trials", "500", "--seed", "5", "--no-timestamp", "--workers", "2", "--out", str(path)])
        first.append(path.read_bytes())
    ok = outs[0] == outs[1] and first[0] == first[1] and b"satisfied" in outs[0]
    report(9, ok, f"two repeated audits per stage byte-identical: {outs[0] == outs[1] and first[0] == first[1]}")
