"""Batch command-line front end.

Subcommands wire the library into reproducible file-to-file pipelines:

  simulate   draw a synthetic cohort (preset or spec file) + truth sidecar
  fit        grid fit with evidence ranking; writes selection report,
             self-contained fit artifact, and preprocessing report
  curves     sample crude/decontaminated hazard, survival, and incidence
             curves from a fit artifact
  assign     retrospective class posteriors per individual, optionally
             scored against a truth sidecar
  km         covariate-conditioned cause-specific Kaplan-Meier table

Every command is deterministic given its inputs and --seed; data goes to
files, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import artifacts, estimators, inference
from .cohort import load_cohort, standardize, write_cohort
from .kvdoc import format_float, read_kv
from .simulate import (ConstantRate, ExponentialRate, SplineRate, SynthSpec,
                       TruthSidecar, generate_cohort, preset)
from .hazard import BaseHazardSpline


def _parse_range(text: str) -> list[int]:
    """'2..5' -> [2, 3, 4, 5]; '3' -> [3]."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        values = list(range(int(lo), int(hi) + 1))
    else:
        values = [int(text)]
    if not values:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return values


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.replace(",", " ").split()]


def _parse_rate(tokens) -> object:
    if isinstance(tokens, str):
        tokens = tokens.split()
    kind = str(tokens[0])
    args = [float(v) for v in tokens[1:]]
    if kind == "constant":
        return ConstantRate(*args)
    if kind == "exponential":
        return ExponentialRate(*args)
    if kind == "spline":
        return SplineRate(BaseHazardSpline(args[0], np.asarray(args[1:])))
    raise ValueError(f"unknown rate family {kind!r}")


def _load_spec_file(path: str, n: int, seed: int) -> SynthSpec:
    records = read_kv(path)
    n_classes = int(records["classes"])
    n_risks = int(records["risks"])
    p = int(records["covariates"])
    weights = np.asarray(records["weights"], dtype=float).reshape(n_classes)
    frailty = np.stack([
        np.asarray(records[f"frailty.r{r + 1}"], dtype=float).reshape(n_classes)
        for r in range(n_risks)])
    assoc = np.stack([
        np.stack([np.asarray(records[f"assoc.r{r + 1}.c{l + 1}"],
                             dtype=float).reshape(p)
                  for l in range(n_classes)])
        for r in range(n_risks)])
    rates = tuple(
        tuple(_parse_rate(records[f"rate.r{r + 1}.c{l + 1}"])
              for l in range(n_classes))
        for r in range(n_risks))
    return SynthSpec(weights=weights, frailty=frailty, assoc=assoc,
                     rates=rates, trial_end=float(records["trial_end"]),
                     n=n, seed=seed)


def _cmd_simulate(args) -> int:
    if args.preset:
        spec = preset(args.preset, n=args.n, seed=args.seed)
    else:
        spec = _load_spec_file(args.spec, n=args.n, seed=args.seed)
    cohort, truth = generate_cohort(spec)
    data_path = args.out if args.out.endswith(".csv") else args.out + ".csv"
    truth_path = data_path[:-4] + ".truth.csv"
    write_cohort(cohort, data_path)
    truth.write(truth_path)
    print(f"wrote {data_path} ({cohort.n} rows, R={cohort.n_risks}) "
          f"and {truth_path}", file=sys.stderr)
    return 0


def _resolve_z(text: str, quartiles: np.ndarray) -> np.ndarray:
    if text.startswith("vector:"):
        return np.asarray([float(v) for v in text[len("vector:"):].split(",")])
    column = {"lq": 0, "median": 1, "uq": 2}.get(text)
    if column is None:
        raise ValueError(f"unknown z preset {text!r} "
                         "(expected lq, median, uq, or vector:...)")
    return quartiles[:, column]


def _cmd_fit(args) -> int:
    cohort = load_cohort(args.data)
    std, report = standardize(cohort)
    grid = inference.model_grid(args.grid_k, args.grid_l, args.grid_m)
    config = inference.FitConfig(seed=args.seed, restarts=args.restarts,
                                 censoring=args.censoring,
                                 threads=args.threads)
    selection = inference.select_model(std, grid, config)
    quartiles = estimators.covariate_quartiles(std.covariates)

    import os
    os.makedirs(args.out, exist_ok=True)
    artifacts.write_selection(selection, os.path.join(args.out, "selection.txt"))
    artifacts.from_fit(selection.winner, report, quartiles).write(
        os.path.join(args.out, "fit.txt"))
    with open(os.path.join(args.out, "preprocess.txt"), "w",
              encoding="utf-8") as handle:
        handle.write(report.dumps())
    w = selection.winner
    print(f"winner {w.model.label()} log_evidence={w.log_evidence:.3f} "
          f"({len(selection.fits)} models fitted)", file=sys.stderr)
    return 0


def _cmd_curves(args) -> int:
    artifact = artifacts.FitArtifact.load(args.fit)
    z = _resolve_z(args.z, artifact.quartiles)
    if z.size != artifact.params.n_covariates:
        raise ValueError(
            f"z vector has {z.size} entries, fit expects "
            f"{artifact.params.n_covariates}")
    grid = np.linspace(0.0, artifact.params.t_max, args.curve_points)
    curves = estimators.curve_set(artifact.params, z, grid, per_class=True)
    with open(args.out, "w", encoding="utf-8") as handle:
        handle.write(",".join(curves.header()) + "\n")
        for row in curves.rows():
            handle.write(",".join(format_float(v) for v in row) + "\n")
    print(f"wrote {args.out} ({args.curve_points} points)", file=sys.stderr)
    return 0


def _cmd_assign(args) -> int:
    from dataclasses import replace

    artifact = artifacts.FitArtifact.load(args.fit)
    cohort = load_cohort(args.data)
    if cohort.n_covariates != artifact.params.n_covariates:
        raise ValueError(
            f"data has {cohort.n_covariates} covariates, fit expects "
            f"{artifact.params.n_covariates}")
    cov = cohort.covariates.copy()
    missing = np.isnan(cov)
    if missing.any():
        # impute on the raw scale with the fit-time column means
        cov[missing] = np.broadcast_to(artifact.report.mean, cov.shape)[missing]
    std = replace(cohort, covariates=artifact.report.transform(cov))
    posterior = estimators.assign_cohort(artifact.params, std)
    assigned = posterior.argmax(axis=1)
    n_classes = posterior.shape[1]
    with open(args.out, "w", encoding="utf-8") as handle:
        header = ["id"] + [f"p_class{l + 1}" for l in range(n_classes)] + ["assigned"]
        handle.write(",".join(header) + "\n")
        for i, ident in enumerate(cohort.ids):
            cells = [ident] + [format_float(v) for v in posterior[i]]
            cells.append(str(int(assigned[i]) + 1))
            handle.write(",".join(cells) + "\n")
    print(f"wrote {args.out}", file=sys.stderr)
    if args.score:
        if not args.truth:
            raise ValueError("--score requires --truth SIDECAR")
        truth = TruthSidecar.load(args.truth)
        quality = estimators.allocation_quality(assigned, truth.true_class,
                                                align=True)
        print(f"q = {quality.overall:.4f}")
        for l, value in enumerate(quality.per_class):
            print(f"q_{l + 1} = {value:.4f}")
    return 0


def _cmd_km(args) -> int:
    cohort = load_cohort(args.data)
    mask = None
    if args.covariate is not None:
        col = cohort.covariates[:, args.covariate - 1]
        if np.isnan(col).any():
            raise ValueError("Kaplan-Meier conditioning column has missing values")
        lo, hi = np.quantile(col, [0.25, 0.75])
        mask = {"lq": col <= lo, "uq": col >= hi,
                "iq": (col > lo) & (col < hi),
                "all": np.ones(cohort.n, dtype=bool)}[args.band]
    curve = estimators.kaplan_meier(cohort, args.risk, mask)
    with open(args.out, "w", encoding="utf-8") as handle:
        handle.write("time,survival,at_risk,events\n")
        handle.write("0,1,%d,0\n" % (cohort.n if mask is None else int(mask.sum())))
        for j in range(curve.times.size):
            handle.write(",".join([
                format_float(curve.times[j]), format_float(curve.survival[j]),
                str(int(curve.at_risk[j])), str(int(curve.events[j]))]) + "\n")
    print(f"wrote {args.out} ({curve.times.size} steps)", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lcrisk",
        description="Latent-class competing-risk survival analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic cohort")
    group = sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=["A", "B", "C"],
                       help="published benchmark scenario")
    group.add_argument("--spec", help="generator spec file (kv format)")
    sim.add_argument("--n", type=int, required=True, help="cohort size")
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", required=True, help="output CSV path or prefix")
    sim.set_defaults(func=_cmd_simulate)

    fit = sub.add_parser("fit", help="grid fit with evidence ranking")
    fit.add_argument("--data", required=True)
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--grid-k", type=_parse_range, default=list(range(1, 9)),
                     metavar="A..B", help="spline anchor counts (default 1..8)")
    fit.add_argument("--grid-l", type=_parse_range, default=list(range(1, 5)),
                     metavar="A..B", help="class counts (default 1..4)")
    fit.add_argument("--grid-m", type=_parse_int_list, default=[1, 2, 3],
                     metavar="LIST", help="hazard variants (default 1,2,3)")
    fit.add_argument("--restarts", type=int, default=5)
    fit.add_argument("--seed", type=int, required=True)
    fit.add_argument("--censoring", default="auto",
                     choices=["auto", "parametric", "administrative"])
    fit.add_argument("--threads", type=int, default=1)
    fit.set_defaults(func=_cmd_fit)

    cur = sub.add_parser("curves", help="sample curves from a fit artifact")
    cur.add_argument("--fit", required=True, help="fit artifact path")
    cur.add_argument("--out", required=True)
    cur.add_argument("--z", default="median",
                     help="lq | median | uq | vector:v1,v2,... (standardized scale)")
    cur.add_argument("--curve-points", type=int, default=2048)
    cur.set_defaults(func=_cmd_curves)

    asg = sub.add_parser("assign", help="retrospective class posteriors")
    asg.add_argument("--fit", required=True)
    asg.add_argument("--data", required=True)
    asg.add_argument("--out", required=True)
    asg.add_argument("--truth", help="truth sidecar for scoring")
    asg.add_argument("--score", action="store_true",
                     help="print allocation quality against --truth")
    asg.set_defaults(func=_cmd_assign)

    km = sub.add_parser("km", help="cause-specific Kaplan-Meier table")
    km.add_argument("--data", required=True)
    km.add_argument("--risk", type=int, required=True)
    km.add_argument("--covariate", type=int,
                    help="1-based covariate column for quartile conditioning")
    km.add_argument("--band", default="all", choices=["lq", "uq", "iq", "all"])
    km.add_argument("--out", required=True)
    km.set_defaults(func=_cmd_km)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:   # fail loudly but cleanly; exit code signals error
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
