"""Command-line interface: ``gevbhm <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import io
from .errors import ConfigError, DataError, GevBhmError, NumericalError, StoreError

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_CODES = {DataError: 3, ConfigError: 3, NumericalError: 4, StoreError: 5}

log = logging.getLogger("gevbhm")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--threads", type=int, default=1, help="maximum parallel tasks")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--stations", required=True, help="station file")
    p.add_argument("--covariates", required=True, help="covariate grid file")
    p.add_argument("--station-covariates", help="explicit per-station covariates")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="gevbhm", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("fit", parents=[common], help="run the MCMC sampler")
    _data_args(p)
    p.add_argument("--binary", action="store_true", help="store draws as .npz instead of CSV")

    p = sub.add_parser("predict", parents=[common], help="return-level maps from stored draws")
    _data_args(p)
    p.add_argument("--draws", help="draw store directory (default: --out)")
    p.add_argument("--periods", help="comma-separated return periods (default: config)")
    p.add_argument("--every", type=int, help="use every k-th stored draw")
    p.add_argument("--image", action="store_true", help="also render a grayscale PNG")

    p = sub.add_parser("cv", parents=[common], help="leave-one-out cross-validation")
    _data_args(p)
    p.add_argument("--scenarios", default="BMA,Fixed,Full,NoCovar")
    p.add_argument("--folds", help="comma-separated station indices (default: all)")
    p.add_argument("--pooled", action="store_true", help="pool (site, year) scores")

    p = sub.add_parser("diagnose", parents=[common], help="multi-chain convergence report")
    _data_args(p)
    p.add_argument("--chains", type=int, default=15)

    p = sub.add_parser("madogram", parents=[common], help="pairwise F-madogram")
    _data_args(p)
    p.add_argument("--margins", choices=("empirical", "mle"), default="empirical")
    p.add_argument("--min-shared", type=int, default=10)

    p = sub.add_parser("mle", parents=[common], help="local bootstrapped MLE baseline")
    _data_args(p)
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.90)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic benchmark dataset")
    p.add_argument("--sites", type=int, default=40)
    p.add_argument("--years", type=int, default=30)
    p.add_argument("--irregular", action="store_true", help="random record lengths")

    p = sub.add_parser("sensitivity", parents=[common], help="prior sensitivity sweep")
    _data_args(p)
    p.add_argument("--station", default=None, help="station id for return-level curves")
    p.add_argument("--families", default="mu,kappa,xi")
    return parser


def _config(args) -> io.RunConfig:
    cfg = io.RunConfig.load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=int(args.seed))
        cfg.validate()
    return cfg


def _dataset(args, cfg):
    ds = io.load_dataset(args.stations, args.covariates, cfg, args.station_covariates)
    hashes = {"stations": io.file_sha256(args.stations),
              "covariates": io.file_sha256(args.covariates)}
    if args.station_covariates:
        hashes["station_covariates"] = io.file_sha256(args.station_covariates)
    return ds, hashes


def cmd_fit(args) -> None:
    from .sampler import run_chain

    cfg = _config(args)
    ds, hashes = _dataset(args, cfg)
    draws = run_chain(ds, cfg.sampler(), progress=lambda it: log.info("iteration %d", it))
    io.emit_outputs(args.out, draws, ds, cfg, input_hashes=hashes, binary=args.binary)


def cmd_predict(args) -> None:
    from .predict import build_return_level_map

    cfg = _config(args)
    ds, hashes = _dataset(args, cfg)
    draws, man = io.read_draw_store(args.draws or args.out, cfg)
    for k, h in hashes.items():
        if man["inputs"].get(k) not in (None, h):
            raise StoreError(f"input file {k} differs from the one used to fit the draws")
    periods = ([float(x) for x in args.periods.split(",")] if args.periods
               else [float(t) for t in cfg.return_periods])
    every = args.every or cfg.map_every
    maps = [build_return_level_map(draws, ds.grid, 1.0 / T, tuple(cfg.quantiles), cfg.seed,
                                   every, args.threads) for T in periods]
    io.emit_outputs(args.out, maps=maps, image=args.image)


def cmd_cv(args) -> None:
    from .evaluate import leave_one_out_cv
    from .sampler import parse_scenario

    cfg = _config(args)
    ds, _ = _dataset(args, cfg)
    scenarios = [s.strip() for s in args.scenarios.split(",") if s.strip()]
    for s in scenarios:
        parse_scenario(s)
    folds = [int(x) for x in args.folds.split(",")] if args.folds else None
    rep = leave_one_out_cv(ds, cfg.sampler(), scenarios, args.threads, folds, args.pooled,
                           every=cfg.map_every)
    io.emit_outputs(args.out, cv=rep)
    failed = sum(len(s.failed) for s in rep.scenarios.values())
    if failed:
        log.warning("%d fold(s) failed; see cv_sites.csv", failed)


def cmd_diagnose(args) -> None:
    from .sampler import run_multichain

    cfg = _config(args)
    ds, _ = _dataset(args, cfg)
    rep = run_multichain(ds, cfg.sampler(), args.chains, args.threads)
    header = ["iteration", "spread"] + [f"chain_{k}" for k in range(rep.running_means.shape[0])]
    rows = ([int(rep.iterations[r]), rep.spread[r], *rep.running_means[:, r]]
            for r in range(rep.spread.size))
    out = Path(args.out)
    io.write_csv(out / "convergence.csv", header, rows)
    io.write_acceptance(out / "acceptance_chains.csv", rep.acceptance, rep.seeds)
    io.write_csv(out / "convergence_summary.csv",
                 ("chains", "final_spread", "posterior_sd", "relative_spread"),
                 [(len(rep.seeds), rep.final_spread, rep.posterior_sd,
                   rep.relative_final_spread)])


def cmd_madogram(args) -> None:
    from .evaluate import madogram

    cfg = _config(args)
    ds, _ = _dataset(args, cfg)
    pts = madogram(ds, args.margins, args.min_shared)
    unit = ds.projection.unit_km if ds.projection.kind == "equirectangular" else 1.0
    io.write_csv(Path(args.out) / f"madogram_{args.margins}.csv",
                 ("station_i", "station_j", "distance_km", "madogram", "n_shared"),
                 ((ds.station_ids[p.i], ds.station_ids[p.j], p.distance * unit, p.value,
                   p.n_shared) for p in pts))


def cmd_mle(args) -> None:
    from .evaluate import bootstrap_mle_baseline

    cfg = _config(args)
    ds, _ = _dataset(args, cfg)
    fits = bootstrap_mle_baseline(ds, [float(t) for t in cfg.return_periods], args.bootstrap,
                                  args.level, cfg.seed, args.threads)
    rows = []
    for sid, f in zip(ds.station_ids, fits):
        for T, z, lo, hi in zip(f.return_periods, f.return_levels, f.lower, f.upper):
            rows.append((sid, f.params.mu, f.params.kappa, f.params.xi, int(f.converged),
                         T, z, lo, hi))
    io.write_csv(Path(args.out) / "mle_baseline.csv",
                 ("station_id", "mu", "kappa", "xi", "converged", "period", "return_level",
                  "lower", "upper"), rows)


def cmd_simulate(args) -> None:
    from .oracle import SyntheticSpec, generate_synthetic

    seed = 0 if args.seed is None else args.seed
    cfg = io.RunConfig.load(args.config) if args.config else io.RunConfig()
    spec = SyntheticSpec(n_sites=args.sites, n_years=args.years, irregular=args.irregular,
                         seed=seed, unit_km=float(cfg.projection.get("unit_km", 100.0)))
    _, truth, raw = generate_synthetic(spec)
    io.write_synthetic(args.out, raw, truth)


def cmd_sensitivity(args) -> None:
    from .evaluate import prior_sensitivity_sweep
    from .state import FAMILIES

    cfg = _config(args)
    ds, _ = _dataset(args, cfg)
    fams = [f.strip() for f in args.families.split(",") if f.strip()]
    bad = set(fams) - set(FAMILIES)
    if bad:
        raise ConfigError(f"unknown families {sorted(bad)}")
    station = ds.index(args.station) if args.station else 0
    periods = [float(t) for t in cfg.return_periods]
    rows = prior_sensitivity_sweep(ds, cfg.sampler(), fams, station=station,
                                   return_periods=periods, threads=args.threads)
    header = ["scenario"] + [f"{f}:{q}" for f in FAMILIES for q in ("alpha", "lambda")]
    out = Path(args.out)
    io.write_csv(out / "sensitivity.csv", header,
                 ([r.label] + [v for f in FAMILIES for v in (r.alpha_median[f], r.lambda_median[f])]
                  for r in rows))
    io.write_csv(out / "sensitivity_curves.csv", ["scenario", "station_id", "period",
                                                  "median_return_level"],
                 ([r.label, ds.station_ids[station], T, z] for r in rows
                  for T, z in r.return_curve.items()))


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "cv": cmd_cv, "diagnose": cmd_diagnose,
            "madogram": cmd_madogram, "mle": cmd_mle, "simulate": cmd_simulate,
            "sensitivity": cmd_sensitivity}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.print_usage(sys.stderr)
        print("gevbhm: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        COMMANDS[args.command](args)
    except GevBhmError as exc:
        code = next((c for t, c in EXIT_CODES.items() if isinstance(exc, t)), EXIT_UNEXPECTED)
        print(f"gevbhm: {exc.category} error: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"gevbhm: io error: {exc}", file=sys.stderr)
        return EXIT_CODES[StoreError]
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
