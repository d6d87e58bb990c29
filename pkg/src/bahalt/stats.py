"""Monte-Carlo estimates, closed-form halting bounds, and the bound audit.

Every estimate carries a two-sided Hoeffding radius.  The bound
calculators work in exact rationals.  :func:`audit` runs the constructive
adversaries for one stage, takes the worst case over them and checks the
matching inequality with a slack built from the radii.
"""

from __future__ import annotations

import csv
import io
import math
import multiprocessing
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from . import attacks, rand
from .adversary import AdversaryStrategy
from .core import ConfigurationError, ProtocolSpec, halted_by, run

DEFAULT_CONFIDENCE = 0.99
CSV_COLUMNS = ("stage", "protocol", "n", "t", "trials", "gamma_hat", "alpha_hat", "beta_hat", "bound", "slack", "verdict")


def hoeffding_radius(trials: int, confidence: float = DEFAULT_CONFIDENCE) -> float:
    if trials < 1:
        raise ConfigurationError("need at least one trial")
    if not 0 < confidence < 1:
        raise ConfigurationError("confidence must lie strictly between 0 and 1")
    return math.sqrt(math.log(2 / (1 - confidence)) / (2 * trials))


@dataclass(frozen=True)
class Estimate:
    point: float
    trials: int
    ci_radius: float
    successes: int = 0
    confidence: float = DEFAULT_CONFIDENCE

    @classmethod
    def of(cls, successes: int, trials: int, confidence: float = DEFAULT_CONFIDENCE) -> "Estimate":
        return cls(successes / trials, trials, hoeffding_radius(trials, confidence), successes, confidence)

    @property
    def low(self) -> float:
        return max(0.0, self.point - self.ci_radius)

    @property
    def high(self) -> float:
        return min(1.0, self.point + self.ci_radius)

    def covers(self, value) -> bool:
        return abs(float(value) - self.point) <= self.ci_radius


# ------------------------------------------------------------- measuring


@dataclass
class BaMeasurement:
    agreement_violation: Estimate
    validity_violation: Estimate
    halting_by_q: Estimate
    label: str = ""
    breakdown: dict = field(default_factory=dict)

    @property
    def trials(self) -> int:
        return self.halting_by_q.trials


def _score(spec: ProtocolSpec, inputs, adversary, seed) -> tuple[int, int, int]:
    tr = run(spec, inputs, adversary, seed=seed, record=False)
    honest = tr.honest
    outs = {tr.outputs[i] for i in honest if tr.outputs[i] is not None}
    disagree = int(len(outs) > 1)
    ins = {tr.inputs[i] for i in honest}
    invalid = int(len(ins) == 1 and bool(outs - ins))
    halted = int(halted_by(tr, spec.q, honest))
    return disagree, invalid, halted


_JOB: Optional[tuple] = None  # (spec, inputs, adversary, seed) handed to forked workers


def _score_range(bounds: tuple[int, int]) -> tuple[int, int, int]:
    spec, inputs, adversary, seed = _JOB
    a = b = c = 0
    for i in range(*bounds):
        x, y, z = _score(spec, inputs, adversary, rand.derive(seed, "trial", i))
        a, b, c = a + x, b + y, c + z
    return a, b, c


def measure(
    spec: ProtocolSpec,
    inputs: Sequence[int],
    adversary: Optional[AdversaryStrategy] = None,
    trials: int = 1000,
    seed=0,
    confidence: float = DEFAULT_CONFIDENCE,
    workers: int = 1,
    label: str = "",
) -> BaMeasurement:
    """Run ``trials`` seeded executions and count the three failure kinds.

    Trial ``i`` uses seed ``derive(seed, "trial", i)``, so the counts do not
    depend on ``workers``.
    """
    global _JOB
    if trials < 1:
        raise ConfigurationError("trials must be at least 1")
    inputs = tuple(inputs)
    _JOB = (spec, inputs, adversary, seed)
    try:
        if workers > 1 and trials > 1 and "fork" in multiprocessing.get_all_start_methods():
            step = math.ceil(trials / workers)
            chunks = [(lo, min(trials, lo + step)) for lo in range(0, trials, step)]
            with multiprocessing.get_context("fork").Pool(len(chunks)) as pool:
                parts = pool.map(_score_range, chunks)
            a, b, c = (sum(p[k] for p in parts) for k in range(3))
        else:
            a, b, c = _score_range((0, trials))
    finally:
        _JOB = None
    est = lambda k: Estimate.of(k, trials, confidence)  # noqa: E731
    return BaMeasurement(est(a), est(b), est(c), label or (adversary.name if adversary else "honest"))


# ------------------------------------------------------ bound calculators


def _q(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(str(x))


def first_round_bound(n: int, t: int, alpha=0, beta=0, public_randomness: bool = False) -> Fraction:
    """One-round halting bound: ``5a + 2b + err`` from ``n/3`` up, ``1/2 + 5a + b + err`` from ``n/4``."""
    if not 0 < t < n:
        raise ConfigurationError("need 0 < t < n")
    if 4 * t < n:
        raise ConfigurationError(f"t={t} < n/4 is outside the first-round bound")
    a, b = _q(alpha), _q(beta)
    err = Fraction(0) if public_randomness else Fraction(1, 2 ** (n - t))
    if 3 * t >= n:
        return 5 * a + 2 * b + err
    return Fraction(1, 2) + 5 * a + b + err


@dataclass(frozen=True)
class ArbitraryBound:
    value: Fraction
    w: int
    vacuous: bool


def second_round_bound_arbitrary(n: int, t: int, alpha=0, beta=0, w: Optional[int] = None) -> ArbitraryBound:
    """Two-round bound ``1 + 2a + b/w^2 - 1/(2 w^2)``.

    ``w`` defaults to ``ceil((n - ceil(n/4)) / floor(t - n/4)) + 1``; pass it
    explicitly to evaluate the expression where that formula is undefined.
    """
    if not 0 < t < n:
        raise ConfigurationError("need 0 < t < n")
    if w is None:
        w = attacks.closed_form_w(n, t)
    elif w < 1:
        raise ConfigurationError("w must be positive")
    if w is None:
        raise ConfigurationError(f"floor(t - n/4) = 0 for n={n}, t={t}; the two-round bound does not apply")
    a, b = _q(alpha), _q(beta)
    value = 1 + 2 * a + b / w**2 - Fraction(1, 2 * w**2)
    return ArbitraryBound(value, w, value >= 1)


@dataclass(frozen=True)
class PrBound:
    beta_threshold: Fraction
    gamma_third: Fraction
    gamma_quarter: Fraction
    lam: Fraction
    sigma: Fraction
    vacuous_third: bool
    vacuous_quarter: bool


def second_round_bound_pr(eps_t, eps_g) -> PrBound:
    """Validity threshold and halting bounds for public-randomness protocols."""
    et, eg = _q(eps_t), _q(eps_g)
    if et <= 0 or eg <= 0:
        raise ConfigurationError("eps_t and eps_gamma must be positive")
    third, quarter = eg, Fraction(1, 2) + eg
    return PrBound(eg**2 / 200, third, quarter, eg / 10, et / 4, third >= 1, quarter >= 1)


# ------------------------------------------------------------------ audit


@dataclass
class AuditReport:
    stage: str
    protocol: str
    n: int
    t: int
    trials: int
    gamma_hat: float
    alpha_hat: float
    beta_hat: float
    bound: float
    slack: float
    verdict: str
    suite: list = field(default_factory=list)
    notes: tuple = ()

    def row(self) -> dict:
        fmt = lambda x: f"{x:.6f}"  # noqa: E731
        return {
            "stage": self.stage,
            "protocol": self.protocol,
            "n": self.n,
            "t": self.t,
            "trials": self.trials,
            "gamma_hat": fmt(self.gamma_hat),
            "alpha_hat": fmt(self.alpha_hat),
            "beta_hat": fmt(self.beta_hat),
            "bound": fmt(self.bound),
            "slack": fmt(self.slack),
            "verdict": self.verdict,
        }

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        if header:
            w.writeheader()
        w.writerow(self.row())
        return buf.getvalue()


def minority_adversary(vec: Sequence[int], t: int, label: str = "") -> Optional[AdversaryStrategy]:
    """Corrupt the holders of the minority bit of ``vec`` and let them play honestly.

    The honest parties then share one input, so any wrong output they
    produce is a validity failure.  ``None`` when the minority exceeds ``t``.
    """
    ones = [i for i, b in enumerate(vec) if b]
    zeros = [i for i, b in enumerate(vec) if not b]
    minority = ones if len(ones) < len(zeros) else zeros
    if len(minority) > t:
        return None
    return AdversaryStrategy(budget=t, initial=frozenset(minority), name=f"minority-{label}" if label else "minority")


def _vectors(geom) -> list:
    out = [("v0", geom.v0), ("v1", geom.v1)]
    if geom.v_star is not None:
        out.append(("v*", geom.v_star))
    return out


def audit_suite(spec: ProtocolSpec, stage: str, geom) -> list:
    """``(label, inputs, adversary)`` for every run the stage audit makes."""
    suite = []
    for label, vec in _vectors(geom):
        suite.append((f"honest-{label}", vec, None))
        adv = minority_adversary(vec, geom.t, label)
        if adv is not None:
            suite.append((adv.name, vec, adv))
    for k, pp in enumerate(geom.pairs):
        if stage == attacks.FIRST_ROUND:
            suite.append((f"first-round-p{k}", pp.v, attacks.first_round_attack(spec, geom, pair=k)))
            if spec.public_randomness:
                suite.append(
                    (f"first-round-rushing-p{k}", pp.v, attacks.first_round_attack(spec, geom, rushing=True, pair=k))
                )
        elif stage == attacks.SECOND_ROUND_ARB:
            suite.append((f"second-round-static-p{k}", pp.v, attacks.second_round_static_attack(spec, geom, pair=k)))
            suite.append((f"pivot-random-d-p{k}", pp.v, attacks.random_pivot_attack(spec, geom, pair=k)))
        elif stage == attacks.SECOND_ROUND_PR:
            suite.append((f"pr-halting-p{k}", pp.v, attacks.pr_halting_attack(spec, geom, pair=k)))
            if geom.h >= 2:
                suite.append((f"pr-agreement-p{k}", pp.v, attacks.pr_agreement_attack(spec, geom, pair=k, samples=64)))
        else:
            raise ConfigurationError(f"unknown stage {stage!r}")
    return suite


def _verdict(lhs: float, rhs: float, slack: float) -> str:
    if lhs <= rhs:
        return "satisfied"
    return "violated" if lhs - rhs > slack else "inconclusive"


def audit(
    spec: ProtocolSpec,
    stage: str,
    geom,
    trials: int = 1000,
    seed=0,
    confidence: float = DEFAULT_CONFIDENCE,
    workers: int = 1,
    eps_gamma=Fraction(1, 10),
) -> AuditReport:
    """Measure the stage's adversary suite and check its halting inequality.

    The worst case over the suite only lower-bounds the true error rates,
    so ``satisfied`` means "no counterexample among these adversaries".
    """
    if geom.stage != stage:
        raise ConfigurationError(f"geometry was built for {geom.stage}, not {stage}")
    if spec.n != geom.n:
        raise ConfigurationError("geometry and protocol disagree on n")
    if stage == attacks.SECOND_ROUND_PR and not spec.public_randomness:
        raise ConfigurationError("the public-randomness audit needs a public-randomness protocol")
    results = []
    for label, vec, adv in audit_suite(spec, stage, geom):
        m = measure(spec, vec, adv, trials, rand.derive(seed, "audit", label), confidence, workers, label)
        results.append(m)
    gam = min(results, key=lambda m: m.halting_by_q.point).halting_by_q
    alp = max(results, key=lambda m: m.agreement_violation.point).agreement_violation
    bet = max(results, key=lambda m: m.validity_violation.point).validity_violation
    r = hoeffding_radius(trials, confidence)
    notes: list = list(geom.notes)
    n, t = geom.n, geom.t

    if stage == attacks.FIRST_ROUND:
        bound = float(first_round_bound(n, t, alp.point, bet.point, spec.public_randomness))
        slack = r * (1 + 5 + (2 if 3 * t >= n else 1))
        verdict = _verdict(gam.point, bound, slack)
    elif stage == attacks.SECOND_ROUND_ARB:
        b = second_round_bound_arbitrary(n, t, alp.point, bet.point, w=geom.w)
        bound = float(b.value)
        slack = r * (1 + 2 + 1 / b.w**2)
        verdict = _verdict(gam.point, bound, slack)
        if b.vacuous:
            notes.append("bound is at least 1")
    else:
        pb = second_round_bound_pr(geom.eps_t, eps_gamma)
        bound = float(pb.gamma_third if geom.regime == attacks.THIRD else pb.gamma_quarter)
        slack = r
        if bet.point - r > pb.beta_threshold:
            verdict = "satisfied"
            notes.append("validity error exceeds the premise threshold; bound holds vacuously")
        else:
            # the bound is strict: equality already counts against it
            verdict = "satisfied" if gam.point < bound else ("violated" if gam.point - bound > slack else "inconclusive")
    return AuditReport(
        stage, spec.name, n, t, trials, gam.point, alp.point, bet.point, bound, slack, verdict, results, tuple(notes)
    )
