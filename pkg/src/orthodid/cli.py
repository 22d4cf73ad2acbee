"""Command-line interface: estimate, simulate, probe, summarize.

Every JSON output carries ``schema_version`` and the resolved run
configuration under ``config``; passing that file back with ``--config``
repeats the run.

Exit codes: 0 success, 1 usage, 2 configuration error, 3 data error,
4 estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .crossfit import EstimationError, EstimatorSpec, estimate, estimate_conventional
from .data import DataError, load_dataset
from .learners import LearnerSpec
from .scores import MIN_PROBE_POPULATION, orthogonality_probe
from .simulate import (
    DgpId,
    NOISE_MODES,
    default_estimator,
    histogram,
    probe_population,
    resolve_threads,
    run_monte_carlo,
    sine_direction,
    summarize_estimates,
    write_replicates_csv,
)

SCHEMA_VERSION = 1
EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_ESTIMATION = 1, 2, 3, 4
OUTCOME_FOR = {"logit_lasso": "lasso", "kernel": "kernel", "forest": "forest", "lasso": "lasso"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    design: str | None = None
    input: str | None = None
    columns: dict = field(default_factory=dict)
    covariates: list | None = None
    strict: bool = True
    dgp: str | None = None
    estimator: dict | None = None
    compare: bool = False
    cross_fit: bool = True
    n: int = 200
    p: int = 100
    r: int = 100
    method: str = "orthogonal"
    noise: str = "variance"
    bins: int = 40
    population: int = 100_000
    amplitude: float = 0.1
    shift: float = 0.5
    true_theta: float | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        try:
            return cls(**raw)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    def estimator_spec(self) -> EstimatorSpec:
        try:
            return EstimatorSpec.from_dict(self.estimator)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid estimator config: {exc}") from exc


# parsing ---------------------------------------------------------------------

def _common(sub):
    sub.add_argument("--config", help="JSON run config (or a previous output embedding one)")
    sub.add_argument("--out", help="output path (default: stdout)")
    sub.add_argument("--seed", type=int, help="random seed (required)")


def _estimator_flags(sub):
    sub.add_argument("--learner", choices=("logit_lasso", "kernel", "forest", "lasso"),
                     help="propensity learner")
    sub.add_argument("--outcome-learner", choices=("lasso", "kernel", "forest"),
                     help="outcome-nuisance learner (default matches --learner)")
    sub.add_argument("--k", type=int, default=5, help="number of cross-fitting folds")
    sub.add_argument("--clip", type=float, default=0.01, help="propensity clipping bound")
    sub.add_argument("--target-level", type=int, help="treatment level (multilevel designs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orthodid", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command")

    est = subs.add_parser("estimate", help="estimate the ATT on a CSV dataset")
    _common(est)
    _estimator_flags(est)
    est.add_argument("--design", choices=("ro", "rcs", "multi"))
    est.add_argument("--input", help="CSV file with a header row")
    est.add_argument("--y-pre", help="pre-period outcome column (ro, multi)")
    est.add_argument("--y-post", help="post-period outcome column (ro, multi)")
    est.add_argument("--y", help="outcome column (rcs)")
    est.add_argument("--time", help="post-period indicator column (rcs)")
    est.add_argument("--treat", help="treatment indicator column, or level column for multi")
    est.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    est.add_argument("--drop-missing", action="store_true", help="drop rows with blank cells")
    est.add_argument("--compare", action="store_true", help="also report the conventional estimate")
    est.add_argument("--no-cross-fit", action="store_true", help="fit nuisances on the full sample")

    sim = subs.add_parser("simulate", help="Monte Carlo study on a simulation design")
    _common(sim)
    _estimator_flags(sim)
    sim.add_argument("--dgp", choices=[d.value for d in DgpId])
    sim.add_argument("--n", type=int, default=200)
    sim.add_argument("--p", type=int, default=100)
    sim.add_argument("--r", type=int, default=100)
    sim.add_argument("--both", action="store_true", help="orthogonal and conventional on the same draws")
    sim.add_argument("--conventional", action="store_true", help="conventional estimator only")
    sim.add_argument("--noise", choices=NOISE_MODES, default="variance",
                     help="read the error scale 0.1 as a variance or as an SD")
    sim.add_argument("--bins", type=int, default=40, help="histogram bins")
    sim.add_argument("--csv", help="prefix for per-replicate CSV files (default: --out without suffix)")
    sim.add_argument("--threads", type=int, help="worker processes (default: $ORTHODID_THREADS or all cores)")

    prb = subs.add_parser("probe", help="directional derivative of the mean score at the truth")
    _common(prb)
    prb.add_argument("--dgp", choices=[d.value for d in DgpId], default="ro_ml")
    prb.add_argument("--population", type=int, default=100_000)
    prb.add_argument("--p", type=int, default=100)
    prb.add_argument("--amplitude", type=float, default=0.1, help="propensity perturbation amplitude")
    prb.add_argument("--shift", type=float, default=0.5, help="outcome-nuisance shift")
    prb.add_argument("--target-level", type=int, default=2)

    smr = subs.add_parser("summarize", help="summary statistics from a per-replicate CSV")
    _common(smr)
    smr.add_argument("--input", help="CSV with columns replicate, estimate, se[, covered]")
    smr.add_argument("--true-theta", type=float)
    smr.add_argument("--bins", type=int, default=40)
    return parser


def _column_map(args) -> dict:
    if args.design == "rcs":
        needed = {"y": args.y, "time": args.time, "treat": args.treat}
        flags = {"y": "--y", "time": "--time", "treat": "--treat"}
    else:
        role = "level" if args.design == "multi" else "treat"
        needed = {"y_pre": args.y_pre, "y_post": args.y_post, role: args.treat}
        flags = {"y_pre": "--y-pre", "y_post": "--y-post", role: "--treat"}
    missing = [flags[k] for k, v in needed.items() if not v]
    if missing:
        raise ConfigError(f"missing required flag(s) for design {args.design}: {', '.join(missing)}")
    return needed


def _learners(args, fallback: EstimatorSpec | None = None):
    if args.learner is None:
        if fallback is not None:
            return fallback.propensity_learner, fallback.outcome_learner
        raise ConfigError("missing required flag --learner")
    prop = "logit_lasso" if args.learner == "lasso" else args.learner
    outcome = args.outcome_learner or OUTCOME_FOR[args.learner]
    return LearnerSpec(prop), LearnerSpec(outcome)


def config_from_args(args) -> RunConfig:
    if args.seed is None:
        raise ConfigError("--seed is required")
    cmd = args.command
    if cmd == "estimate":
        if not args.design:
            raise ConfigError("missing required flag --design")
        if not args.input:
            raise ConfigError("missing required flag --input")
        columns = _column_map(args)
        prop, outcome = _learners(args)
        target = args.target_level if args.target_level is not None else 1
        spec = EstimatorSpec(args.design, prop, outcome, k_folds=args.k, clip=args.clip,
                             seed=args.seed, target_level=target, cross_fit=not args.no_cross_fit)
        covs = [c.strip() for c in args.covariates.split(",")] if args.covariates else None
        return RunConfig("estimate", design=args.design, input=args.input, columns=columns,
                         covariates=covs, strict=not args.drop_missing, estimator=spec.to_dict(),
                         compare=args.compare, cross_fit=not args.no_cross_fit, seed=args.seed)
    if cmd == "simulate":
        if not args.dgp:
            raise ConfigError("missing required flag --dgp")
        if args.r < 1:
            raise ConfigError("--r must be at least 1")
        if args.n < 2 * args.k:
            raise ConfigError("--n must be at least twice --k")
        if args.bins < 1:
            raise ConfigError("--bins must be at least 1")
        if args.both and args.conventional:
            raise ConfigError("--both and --conventional are exclusive")
        dgp = DgpId.parse(args.dgp)
        target = args.target_level if args.target_level is not None else 2
        base = default_estimator(dgp, args.seed, args.k, target)
        prop, outcome = _learners(args, base)
        spec = EstimatorSpec(dgp.design, prop, outcome, k_folds=args.k, clip=args.clip,
                             seed=args.seed, target_level=base.target_level)
        method = "both" if args.both else "conventional" if args.conventional else "orthogonal"
        return RunConfig("simulate", design=dgp.design, dgp=dgp.value, estimator=spec.to_dict(),
                         n=args.n, p=args.p, r=args.r, method=method, noise=args.noise,
                         bins=args.bins, seed=args.seed)
    if cmd == "probe":
        if args.population < MIN_PROBE_POPULATION:
            raise ConfigError(f"--population must be at least {MIN_PROBE_POPULATION}")
        dgp = DgpId.parse(args.dgp)
        est = {"target_level": args.target_level} if dgp.design == "multi" else None
        return RunConfig("probe", design=dgp.design, dgp=dgp.value, p=args.p,
                         population=args.population, amplitude=args.amplitude, shift=args.shift,
                         estimator=est, seed=args.seed)
    if not args.input:
        raise ConfigError("missing required flag --input")
    if args.true_theta is None:
        raise ConfigError("missing required flag --true-theta")
    return RunConfig("summarize", input=args.input, true_theta=args.true_theta, bins=args.bins,
                     seed=args.seed)


def load_config(path: str, command: str) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw = raw.get("config", raw)
    cfg = RunConfig.from_dict(raw)
    if cfg.command != command:
        raise ConfigError(f"config is for {cfg.command!r}, not {command!r}")
    if cfg.seed is None:
        raise ConfigError("config lacks a seed")
    return cfg


# commands --------------------------------------------------------------------

def _envelope(cfg: RunConfig, body: dict) -> dict:
    return {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(), **body}


def run_estimate(cfg: RunConfig) -> dict:
    spec = cfg.estimator_spec()
    data = load_dataset(cfg.input, cfg.design, cfg.columns, covariates=cfg.covariates,
                        strict=cfg.strict)
    body = {"orthogonal": estimate(data, spec).to_dict()}
    if cfg.compare:
        body["conventional"] = estimate_conventional(data, spec).to_dict()
    return _envelope(cfg, body)


def run_simulate(cfg: RunConfig, threads: int | None = None) -> tuple[dict, dict]:
    spec = cfg.estimator_spec()
    run = run_monte_carlo(cfg.dgp, spec, cfg.n, cfg.p, cfg.r, cfg.seed, method=cfg.method,
                          noise=cfg.noise, threads=threads)
    body = {"summaries": {}}
    for m, s in run.summaries.items():
        rec = s.to_dict()
        rec["se_ratio"] = s.se_ratio
        rec["histogram"] = histogram(s.estimates, cfg.bins)
        body["summaries"][m] = rec
    return _envelope(cfg, body), run.summaries


def run_probe(cfg: RunConfig) -> dict:
    target = (cfg.estimator or {}).get("target_level", 2)
    pop = probe_population(cfg.dgp, cfg.population, cfg.p, cfg.seed, target_level=target)
    res = orthogonality_probe(pop, sine_direction(cfg.amplitude, cfg.shift))
    return _envelope(cfg, {
        "derivative_orthogonal": res.derivative_orthogonal,
        "derivative_conventional": res.derivative_conventional,
        "step": res.step,
        "curve": res.records(),
    })


def read_replicates_csv(path: str):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path} has no replicate rows")
    missing = {"replicate", "estimate", "se"} - set(rows[0])
    if missing:
        raise DataError(f"{path} lacks column(s) {sorted(missing)}")
    try:
        reps = np.array([int(r["replicate"]) for r in rows])
        est = np.array([float(r["estimate"]) for r in rows])
        ses = np.array([float(r["se"]) for r in rows])
    except ValueError as exc:
        raise DataError(f"non-numeric value in {path}: {exc}") from exc
    return reps, est, ses


def run_summarize(cfg: RunConfig) -> dict:
    reps, est, ses = read_replicates_csv(cfg.input)
    s = summarize_estimates(est, ses, cfg.true_theta, replicates=reps)
    rec = s.to_dict()
    rec["se_ratio"] = s.se_ratio
    rec["histogram"] = histogram(est, cfg.bins)
    return _envelope(cfg, {"summary": rec})


def _emit(payload: dict, out: str | None) -> None:
    text = json.dumps(payload, indent=2, allow_nan=True)
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else EXIT_CONFIG
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = load_config(args.config, args.command) if args.config else config_from_args(args)
        if cfg.command == "estimate":
            _emit(run_estimate(cfg), args.out)
        elif cfg.command == "simulate":
            threads = resolve_threads(args.threads)
            payload, summaries = run_simulate(cfg, threads)
            _emit(payload, args.out)
            prefix = args.csv or (str(Path(args.out).with_suffix("")) if args.out else None)
            if prefix:
                for m, s in summaries.items():
                    write_replicates_csv(f"{prefix}_{m}.csv", s)
        elif cfg.command == "probe":
            _emit(run_probe(cfg), args.out)
        else:
            _emit(run_summarize(cfg), args.out)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EstimationError as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
