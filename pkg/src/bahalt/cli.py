"""Command-line front end.

Every subcommand takes its parameters from flags, from a flat ``key = value``
config file (``--config``), or both; flags win.  Exit status is 0 on
success, 2 on a configuration problem and 3 when an audit finds a bound
violated.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import os
import sys
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Optional

from . import __version__, attacks, conjecture, protocols, rand, stats
from .adversary import validate_locally_consistent
from .core import ConfigurationError, StrategyViolation, run

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATED = 0, 2, 3
WORKERS_ENV = "BAHALT_WORKERS"


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ValueError(f"not a number: {text!r}") from None


def _boolean(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _show(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


@dataclass
class ExperimentConfig:
    protocol: str = "one-round-majority"
    n: int = 9
    t: int = 3
    phase_limit: Optional[int] = None
    q: Optional[int] = None
    stage: str = attacks.FIRST_ROUND
    regime: Optional[str] = None
    pair: int = 0
    rushing: bool = False
    inputs: Optional[str] = None
    sigma: Optional[Fraction] = None
    lam: Fraction = Fraction(1, 10)
    delta: Fraction = Fraction(1, 20)
    eps_t: Optional[Fraction] = None
    eps_gamma: Fraction = Fraction(1, 10)
    alpha: Fraction = Fraction(0)
    beta: Fraction = Fraction(0)
    public_randomness: bool = False
    family: str = "prefix"
    k: int = 2
    radius: int = 2
    d: int = 1
    mode: str = conjecture.EXHAUSTIVE
    trials: int = 1000
    seed: int = 0
    confidence: float = stats.DEFAULT_CONFIDENCE
    out: Optional[str] = None
    workers: Optional[int] = None

    # ---------------------------------------------------------- parsing
    @classmethod
    def _parsers(cls) -> dict:
        kinds = {}
        for f in fields(cls):
            base = f.type.replace("Optional[", "").rstrip("]")
            kinds[f.name] = {"int": int, "str": str, "bool": _boolean, "Fraction": _fraction, "float": float}[base]
        return kinds

    @classmethod
    def parse_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        kinds = cls._parsers()
        cfg = cls()
        seen = set()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in kinds:
                raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
            if key in seen:
                raise ConfigurationError(f"{source}:{lineno}: key {key!r} given twice")
            seen.add(key)
            if value.lower() in ("", "none"):
                setattr(cfg, key, None)
                continue
            try:
                setattr(cfg, key, kinds[key](value))
            except ValueError as exc:
                raise ConfigurationError(f"{source}:{lineno}: field {key!r}: {exc}") from None
        return cfg

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.parse_text(fh.read(), path)
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None

    def to_text(self) -> str:
        lines = [f"{f.name} = {'none' if getattr(self, f.name) is None else _show(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    # -------------------------------------------------------- checking
    def validate(self) -> None:
        if self.protocol not in protocols.CATALOG:
            raise ConfigurationError(f"unknown protocol {self.protocol!r}; known: {', '.join(protocols.CATALOG)}")
        if self.n < 1 or not 0 <= self.t < self.n:
            raise ConfigurationError("need n >= 1 and 0 <= t < n")
        if self.stage not in attacks.STAGES:
            raise ConfigurationError(f"stage must be one of {', '.join(attacks.STAGES)}")
        if self.regime not in (None, attacks.THIRD, attacks.QUARTER):
            raise ConfigurationError("regime must be 'third' or 'quarter'")
        if self.trials < 1:
            raise ConfigurationError("trials must be at least 1")
        if not 0 < self.confidence < 1:
            raise ConfigurationError("confidence must lie strictly between 0 and 1")
        if self.mode not in (conjecture.EXHAUSTIVE, conjecture.MONTE_CARLO):
            raise ConfigurationError("mode must be 'exhaustive' or 'monte-carlo'")
        if self.family not in ("prefix", "ball", "induced"):
            raise ConfigurationError("family must be prefix, ball or induced")
        if self.workers is not None and self.workers < 1:
            raise ConfigurationError("workers must be positive")
        for name in ("lam", "delta", "alpha", "beta"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigurationError(f"{name} must lie in [0, 1]")
        if self.sigma is not None and not 0 <= self.sigma < 1:
            raise ConfigurationError("sigma must lie in [0, 1)")
        if self.inputs is not None and self.inputs not in ("v0", "v1", "v*"):
            if len(self.inputs) != self.n or set(self.inputs) - {"0", "1"}:
                raise ConfigurationError(f"inputs must be v0, v1, v* or a string of {self.n} bits")

    # -------------------------------------------------------- building
    def spec(self):
        params = {"n": self.n, "t": self.t}
        if self.phase_limit is not None:
            params["phase_limit"] = self.phase_limit
        spec = protocols.build(self.protocol, **params)
        return spec.truncated(self.q) if self.q is not None else spec

    def geometry(self):
        return attacks.attack_geometry(self.n, self.t, self.regime, self.stage, self.eps_t)

    def worker_count(self) -> int:
        if self.workers is not None:
            return self.workers
        env = os.environ.get(WORKERS_ENV)
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                raise ConfigurationError(f"{WORKERS_ENV} must be an integer") from None
        return os.cpu_count() or 1


# ------------------------------------------------------------ arguments

_FLAG_HELP = {
    "protocol": "catalog protocol name",
    "q": "truncate the protocol to this many rounds",
    "stage": "attack stage: " + ", ".join(attacks.STAGES),
    "inputs": "v0, v1, v* or an explicit bit string",
    "family": "conjecture family: prefix, ball or induced",
    "mode": "exhaustive or monte-carlo",
    "out": "write output here instead of stdout",
}


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value file; flags override it")
    parser.add_argument("--no-timestamp", action="store_true", help="omit the timestamp comment line")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool",):
            parser.add_argument(flag, dest=f.name, action="store_true", default=argparse.SUPPRESS, help=_FLAG_HELP.get(f.name))
        else:
            parser.add_argument(flag, dest=f.name, default=argparse.SUPPRESS, help=_FLAG_HELP.get(f.name))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bahalt", description="Byzantine-agreement halting experiments")
    p.add_argument("--version", action="version", version=f"bahalt {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (
        ("simulate", "honest runs: one JSONL trace, or failure counts over many trials"),
        ("attack", "one CSV row per trial of a stage attack"),
        ("audit", "measure the stage's adversary suite and check its halting bound"),
        ("conjecture", "evaluate the masking conjecture on one family"),
        ("bounds", "evaluate the closed-form halting bound of a stage"),
        ("list-protocols", "show the protocol catalog"),
        ("validate", "check attack traces for local consistency"),
        ("write-config", "print the effective configuration as a config file"),
    ):
        _common(sub.add_parser(name, help=text, description=text))
    return p


def resolve(ns: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.load(ns.config) if ns.config else ExperimentConfig()
    kinds = ExperimentConfig._parsers()
    for f in fields(ExperimentConfig):
        if hasattr(ns, f.name):
            value = getattr(ns, f.name)
            if isinstance(value, str):
                try:
                    value = None if value.lower() == "none" else kinds[f.name](value)
                except ValueError as exc:
                    raise ConfigurationError(f"--{f.name.replace('_', '-')}: {exc}") from None
            setattr(cfg, f.name, value)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- output


class _Sink:
    def __init__(self, cfg: ExperimentConfig, stamp: bool):
        self.cfg, self.stamp = cfg, stamp
        self.buf = io.StringIO()

    def comment_header(self) -> None:
        if self.stamp:
            now = datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
            self.buf.write(f"# generated {now}\n")

    def write(self, text: str) -> None:
        self.buf.write(text)

    def close(self) -> None:
        data = self.buf.getvalue()
        if self.cfg.out:
            with open(self.cfg.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(data)
        else:
            sys.stdout.write(data)


def _inputs_for(cfg: ExperimentConfig, default):
    if cfg.inputs is None:
        return default
    if cfg.inputs in ("v0", "v1", "v*"):
        geom = cfg.geometry()
        vec = {"v0": geom.v0, "v1": geom.v1, "v*": geom.v_star}[cfg.inputs]
        if vec is None:
            raise ConfigurationError("v* exists only in the quarter regime")
        return vec
    return tuple(int(c) for c in cfg.inputs)


def _strategy(cfg: ExperimentConfig, spec, geom):
    if cfg.stage == attacks.FIRST_ROUND:
        return attacks.first_round_attack(spec, geom, rushing=cfg.rushing, pair=cfg.pair)
    if cfg.stage == attacks.SECOND_ROUND_ARB:
        return attacks.second_round_static_attack(spec, geom, pair=cfg.pair)
    kw = {"pair": cfg.pair}
    if cfg.sigma is not None:
        kw["sigma"] = cfg.sigma
    return attacks.pr_halting_attack(spec, geom, lam=cfg.lam, delta=cfg.delta, **kw)


def _check_pair(cfg, geom) -> None:
    if not 0 <= cfg.pair < len(geom.pairs):
        raise ConfigurationError(f"pair must lie in 0..{len(geom.pairs) - 1}")


def cmd_simulate(cfg, sink) -> int:
    spec = cfg.spec()
    adv = None
    inputs = _inputs_for(cfg, (0,) * cfg.n)
    if cfg.trials == 1:
        trace = run(spec, inputs, adv, seed=cfg.seed)
        sink.write(trace.to_jsonl())
        return EXIT_OK
    m = stats.measure(spec, inputs, adv, cfg.trials, cfg.seed, cfg.confidence, cfg.worker_count())
    sink.comment_header()
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["protocol", "n", "trials", "agreement_violation", "validity_violation", "halting_by_q", "ci_radius"])
    w.writerow(
        [spec.name, spec.n, cfg.trials, f"{m.agreement_violation.point:.6f}", f"{m.validity_violation.point:.6f}",
         f"{m.halting_by_q.point:.6f}", f"{m.halting_by_q.ci_radius:.6f}"]
    )
    return EXIT_OK


def cmd_attack(cfg, sink) -> int:
    spec, geom = cfg.spec(), cfg.geometry()
    _check_pair(cfg, geom)
    adv = _strategy(cfg, spec, geom)
    inputs = _inputs_for(cfg, adv.target_inputs)
    sink.comment_header()
    w = csv.writer(sink, lineterminator="\n")
    w.writerow(["trial", "corrupted", "disagreement", "validity_violation", "halted_by_q", "outputs"])
    for i in range(cfg.trials):
        seed = rand.derive(cfg.seed, "trial", i)
        tr = run(spec, inputs, adv, seed=seed, record=False)
        honest = tr.honest
        outs = [tr.outputs[j] for j in sorted(honest)]
        vals = {o for o in outs if o is not None}
        ins = {tr.inputs[j] for j in honest}
        halted = all(tr.halt_round[j] is not None and tr.halt_round[j] <= spec.q for j in honest)
        w.writerow(
            [i, len(tr.corrupted), int(len(vals) > 1), int(len(ins) == 1 and bool(vals - ins)), int(halted),
             "".join("-" if o is None else str(o) for o in outs)]
        )
    return EXIT_OK


def cmd_audit(cfg, sink) -> int:
    spec, geom = cfg.spec(), cfg.geometry()
    report = stats.audit(spec, cfg.stage, geom, cfg.trials, cfg.seed, cfg.confidence, cfg.worker_count(), cfg.eps_gamma)
    sink.comment_header()
    sink.write(report.to_csv())
    return EXIT_VIOLATED if report.verdict == "violated" else EXIT_OK


def cmd_conjecture(cfg, sink) -> int:
    sigma = cfg.sigma if cfg.sigma is not None else Fraction(1, 5)
    if cfg.family == "prefix":
        pair = conjecture.prefix_sets(cfg.n, cfg.k)
    elif cfg.family == "ball":
        pair = conjecture.ball_sets(cfg.n, cfg.radius)
    else:
        spec = cfg.spec()
        geom = cfg.geometry()
        _check_pair(cfg, geom)
        f = spec.setup_sampler(rand.stream(cfg.seed, "setup"), spec.n) if spec.setup_sampler else None
        pair = conjecture.protocol_induced_pair(spec, geom, f, cfg.d, cfg.pair)
    verdict = conjecture.evaluate(pair, sigma, cfg.lam, cfg.delta, cfg.mode, trials=cfg.trials, seed=cfg.seed)
    body = verdict.to_json()
    body["n"] = cfg.n
    body.update({k: v for k, v in pair.params.items()})
    sink.write(json.dumps(body, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _fr(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator} ({float(x):.6f})" if x.denominator != 1 else str(x.numerator)


def cmd_bounds(cfg, sink) -> int:
    out = {"stage": cfg.stage, "n": cfg.n, "t": cfg.t}
    if cfg.stage == attacks.FIRST_ROUND:
        b = stats.first_round_bound(cfg.n, cfg.t, cfg.alpha, cfg.beta, cfg.public_randomness)
        out.update(bound=_fr(b), err=_fr(Fraction(0) if cfg.public_randomness else Fraction(1, 2 ** (cfg.n - cfg.t))))
    elif cfg.stage == attacks.SECOND_ROUND_ARB:
        b = stats.second_round_bound_arbitrary(cfg.n, cfg.t, cfg.alpha, cfg.beta)
        out.update(w=b.w, bound=_fr(b.value), vacuous=b.vacuous)
    else:
        eps_t = cfg.eps_t
        if eps_t is None:
            eps_t = Fraction(cfg.t, cfg.n) - (Fraction(1, 3) if cfg.regime == attacks.THIRD else Fraction(1, 4))
        b = stats.second_round_bound_pr(eps_t, cfg.eps_gamma)
        out.update(
            eps_t=_fr(eps_t), beta_threshold=_fr(b.beta_threshold), gamma_third=_fr(b.gamma_third),
            gamma_quarter=_fr(b.gamma_quarter), lam=_fr(b.lam), sigma=_fr(b.sigma),
            vacuous_third=b.vacuous_third, vacuous_quarter=b.vacuous_quarter,
        )
    for key, value in out.items():
        sink.write(f"{key}: {_show(value)}\n")
    return EXIT_OK


def cmd_list(cfg, sink) -> int:
    for e in protocols.CATALOG.values():
        sink.write(f"{e.name}\tparameters={','.join(e.parameters)}\tclaimed: {e.claimed}\n")
    return EXIT_OK


def cmd_validate(cfg, sink) -> int:
    spec, geom = cfg.spec(), cfg.geometry()
    _check_pair(cfg, geom)
    adv = _strategy(cfg, spec, geom)
    inputs = _inputs_for(cfg, adv.target_inputs)
    bad = []
    for i in range(cfg.trials):
        seed = rand.derive(cfg.seed, "trial", i)
        tr = run(spec, inputs, adv, seed=seed)
        rep = validate_locally_consistent(tr, spec, adv)
        if not rep.ok:
            bad.append({"trial": i, "violations": [list(v) for v in rep.violations[:5]]})
    sink.write(json.dumps({"strategy": adv.name, "trials": cfg.trials, "ok": not bad, "failures": bad}, sort_keys=True) + "\n")
    return EXIT_OK if not bad else EXIT_VIOLATED


def cmd_write_config(cfg, sink) -> int:
    sink.write(cfg.to_text())
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "attack": cmd_attack,
    "audit": cmd_audit,
    "conjecture": cmd_conjecture,
    "bounds": cmd_bounds,
    "list-protocols": cmd_list,
    "validate": cmd_validate,
    "write-config": cmd_write_config,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    try:
        cfg = resolve(ns)
        sink = _Sink(cfg, not ns.no_timestamp)
        code = COMMANDS[ns.command](cfg, sink)
        sink.close()
        return code
    except (ConfigurationError, StrategyViolation) as exc:
        print(f"bahalt: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
