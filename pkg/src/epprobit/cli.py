"""Command-line interface: ``epprobit {fit,predict,simstudy,oracle-check}``.

Exit codes: 0 success, 1 check failure, 2 input/validation error,
3 fit did not converge (model still written), 4 no site could be updated.
Errors go to stderr as a single ``epprobit: error: <kind>: <message>`` line.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checks import run_oracle_checks
from .datafiles import (
    InputError,
    format_number,
    load_model,
    model_to_text,
    read_covariates_csv,
    read_dataset_csv,
    save_model,
)
from .ep_engine import EpConfig, NonProgress, fit
from .oracles import GibbsSpec, HmcSpec
from .predictive import NumericalBreakdown, predict_batch
from .simstudy import BASELINES, DEFAULT_P_GRID, SCENARIOS, ScenarioSpec, run_studies

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_NON_PROGRESS = 4

REPORT_COLUMNS = (
    "scenario",
    "p",
    "median_abs_diff",
    "q1",
    "q3",
    "ep_seconds",
    "baseline_seconds",
    "ep_sweeps",
    "skipped_updates",
)


class UsageError(Exception):
    pass


def _fail(kind, message, code):
    message = " ".join(str(message).split())
    print(f"epprobit: error: {kind}: {message}", file=sys.stderr)
    return code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _positive_float(text):
    val = float(text)
    if not (np.isfinite(val) and val > 0):
        raise argparse.ArgumentTypeError(f"must be a finite number > 0, got {text!r}")
    return val


def _positive_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text!r}")
    return val


def _nonneg_int(text):
    val = int(text)
    if val < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text!r}")
    return val


def _damping(text):
    val = float(text)
    if not 0.0 < val <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in (0, 1], got {text!r}")
    return val


def _seed(text):
    val = int(text)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("must be an unsigned 64-bit integer")
    return val


def _p_grid(text):
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("p values must be >= 1")
    return tuple(sorted(set(vals)))


def _add_ep_options(p):
    p.add_argument("--engine", choices=("auto", "dense", "lowrank"), default="auto")
    p.add_argument("--tol", type=_positive_float, default=1e-6)
    p.add_argument("--max-sweeps", type=_positive_int, default=200)
    p.add_argument("--damping", type=_damping, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="epprobit", description="Expectation propagation for Bayesian probit regression.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit EP to a dataset CSV and write a model file")
    p.add_argument("--input", required=True, type=Path, help="dataset CSV (label first)")
    p.add_argument("--output", required=True, type=Path, help="model file to write")
    p.add_argument("--prior-variance", type=_positive_float, default=25.0)
    p.add_argument("--text-output", type=Path, help="also write a JSON export of the model")
    _add_ep_options(p)

    p = sub.add_parser("predict", help="predictive probabilities for covariate rows")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--test", required=True, type=Path, help="covariate CSV")
    p.add_argument("--output", type=Path, help="output file (default: stdout)")

    p = sub.add_parser("simstudy", help="run the synthetic-data accuracy study")
    p.add_argument("--output", type=Path, help="report CSV (default: stdout)")
    p.add_argument("--scenario", action="append", choices=SCENARIOS, help="repeatable; default all")
    p.add_argument("--p-grid", type=_p_grid, help="comma-separated p values")
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--n-test", type=_positive_int, default=50)
    p.add_argument("--prior-variance", type=_positive_float, default=25.0)
    p.add_argument(
        "--baseline", choices=tuple(BASELINES), default="gibbs", help="sampler for the reference probabilities"
    )
    p.add_argument("--draws", type=_positive_int, help="retained baseline draws (gibbs 10000, hmc 2000)")
    p.add_argument("--burn-in", type=_nonneg_int, help="baseline burn-in (gibbs 2000, hmc 200)")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--jobs", type=_positive_int, help="worker processes (default: CPU count)")
    p.add_argument("--quick", action="store_true", help="one scenario, p=50, short baseline run")
    _add_ep_options(p)

    p = sub.add_parser("oracle-check", help="compare EP and samplers with exact quadrature")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--tol", type=_positive_float, default=1e-10, help="EP convergence tolerance")
    p.add_argument("--max-sweeps", type=_positive_int, default=500)
    p.add_argument("--damping", type=_damping, default=1.0)
    p.add_argument("--draws", type=_positive_int, help="Gibbs draws (HMC uses 3/10 of this)")
    p.add_argument("--burn-in", type=_nonneg_int)
    p.add_argument("--output", type=Path, help="write the check table as JSON")
    return parser


def _ep_config(args):
    return EpConfig(tol=args.tol, max_sweeps=args.max_sweeps, damping=args.damping)


def _open_out(path):
    if path is None or str(path) == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def cmd_fit(args) -> int:
    d = read_dataset_csv(args.input, args.prior_variance)
    try:
        post, diag = fit(d, _ep_config(args), args.engine)
    except NonProgress as exc:
        return _fail("non-progress", exc, EXIT_NON_PROGRESS)
    save_model(args.output, post, diag)
    if args.text_output:
        model_to_text(args.output, args.text_output)
    if not diag.converged:
        return _fail(
            "not-converged",
            f"no convergence after {diag.sweeps_run} sweeps "
            f"(last max delta {diag.max_delta_trace[-1]:.3e}); model written to {args.output}",
            EXIT_NOT_CONVERGED,
        )
    return EXIT_OK


def cmd_predict(args) -> int:
    post, _ = load_model(args.model)
    X_new = read_covariates_csv(args.test)
    if X_new.shape[1] != post.p:
        raise InputError(f"{args.test}: {X_new.shape[1]} covariate columns, model expects {post.p}")
    try:
        probs = predict_batch(post, X_new).probability
    except NumericalBreakdown as exc:
        return _fail("numerical", exc, EXIT_CHECK_FAILED)
    fh, close = _open_out(args.output)
    try:
        fh.write("".join(format_number(v) + "\n" for v in probs))
    finally:
        if close:
            fh.close()
    return EXIT_OK


def _study_specs(args):
    scenarios = args.scenario or (["iid-weak"] if args.quick else list(SCENARIOS))
    if args.quick and len(scenarios) > 1:
        scenarios = scenarios[:1]
    p_grid = args.p_grid or ((50,) if args.quick else DEFAULT_P_GRID)
    if args.quick:
        p_grid = p_grid[:1]
    draws, burn_in = args.draws, args.burn_in
    if args.quick:
        draws = draws or 500
        burn_in = 100 if burn_in is None else burn_in
    return [
        ScenarioSpec(
            scenario_id=s,
            n=args.n,
            n_test=args.n_test,
            p_grid=p_grid,
            prior_variance=args.prior_variance,
            seed=args.seed,
            baseline=args.baseline,
            draws=draws,
            burn_in=burn_in,
            ep=_ep_config(args),
            engine=args.engine,
        )
        for s in scenarios
    ]


def write_report_csv(fh, report) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in report:
        w.writerow(
            [
                r.scenario,
                r.p,
                format_number(r.median_abs_diff),
                format_number(r.q1),
                format_number(r.q3),
                format_number(r.ep_seconds),
                format_number(r.baseline_seconds),
                r.ep_sweeps,
                r.skipped_updates,
            ]
        )


def _report_meta(report):
    spec = report.specs[0]
    return {
        "baseline": spec.baseline,
        "baseline_description": {
            "hmc": "exact HMC on the latent truncated Gaussian, beta | z drawn exactly",
            "gibbs": "Albert-Chib data-augmentation Gibbs sampler",
        }[spec.baseline],
        "baseline_burn_in": spec.burn_in,
        "baseline_draws": spec.draws,
        "n": spec.n,
        "n_test": spec.n_test,
        "prior_variance": spec.prior_variance,
        "seed": spec.seed,
        "quartiles": "linear interpolation over the n_test absolute differences",
        "rows": [
            {
                "scenario": r.scenario,
                "p": r.p,
                "engine": r.engine,
                "converged": r.converged,
                "fit_seconds": r.fit_seconds,
                "predict_seconds": r.predict_seconds,
                "abs_diffs": [float(v) for v in r.abs_diffs],
            }
            for r in report
        ],
    }


def cmd_simstudy(args) -> int:
    specs = _study_specs(args)
    n_cells = sum(len(s.p_grid) for s in specs)
    jobs = args.jobs or min(os.cpu_count() or 1, n_cells)
    try:
        report = run_studies(specs, jobs)
    except NonProgress as exc:
        return _fail("non-progress", exc, EXIT_NON_PROGRESS)
    fh, close = _open_out(args.output)
    try:
        write_report_csv(fh, report)
    finally:
        if close:
            fh.close()
    if close:
        meta_path = Path(str(args.output) + ".meta.json")
        with open(meta_path, "w") as mf:
            json.dump(_report_meta(report), mf, indent=1)
            mf.write("\n")
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    cfg = EpConfig(tol=args.tol, max_sweeps=args.max_sweeps, damping=args.damping)
    gibbs = GibbsSpec(2000 if args.burn_in is None else args.burn_in, args.draws or 10000)
    hmc = HmcSpec(200, max(1, (3 * gibbs.draws) // 10))
    results = run_oracle_checks(args.seed, cfg, gibbs, hmc)
    print(f"{'fixture':<16}{'pt':>3} {'check':<12}{'value':>14}{'exact':>14}{'delta':>11}{'bound':>11}  result")
    for r in results:
        print(
            f"{r.fixture:<16}{r.point:>3} {r.check:<12}{r.value:>14.8f}{r.reference:>14.8f}"
            f"{r.delta:>11.2e}{r.bound:>11.2e}  {'pass' if r.passed else 'FAIL'}"
        )
    if args.output:
        with open(args.output, "w") as fh:
            json.dump([dict(vars(r), passed=r.passed) for r in results], fh, indent=1)
            fh.write("\n")
    failed = [r for r in results if not r.passed]
    if failed:
        desc = "; ".join(f"{r.fixture}[{r.point}] {r.check} delta={r.delta:.3e} > {r.bound:.3e}" for r in failed)
        return _fail("check-failed", f"{len(failed)} of {len(results)} checks failed: {desc}", EXIT_CHECK_FAILED)
    print(f"all {len(results)} checks passed")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "simstudy": cmd_simstudy,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_INPUT)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="epprobit: %(levelname)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        return _fail("input", exc, EXIT_INPUT)
    except OSError as exc:
        return _fail("io", exc, EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
