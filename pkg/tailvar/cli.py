"""Command-line interface for tailvar.

Usage
-----
    python -m tailvar calibrate --prices qqq.csv --alpha 0.99 0.995
    python -m tailvar is-var --sigma 0.01 --alpha 0.99 --n 100000
    python -m tailvar dmm-bounds --prices qqq.csv --alpha 0.99 --d-max 12
    python -m tailvar simulate --config study.cfg --out-dir results --workers 4
    python -m tailvar figures --run-dir results

stdout carries ``key=value`` lines; logs go to stderr.  Exit status is 0 on
success, 1 on a usage error and 2 when the command itself fails.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from collections.abc import Callable
from pathlib import Path

from tailvar import __version__
from tailvar.calibration import calibrate, gaussian_var
from tailvar.config import ExperimentConfig, load_config, parse_config
from tailvar.dmm import (
    DEFAULT_D_MAX,
    DEFAULT_GRID_POINTS,
    DEFAULT_MOMENT_SAMPLES,
    DEFAULT_SPAN,
    build_grid,
    moment_sweep,
    nominal_moments,
)
from tailvar.errors import ConfigError, TailVarError
from tailvar.experiment import emit_figure_data, run_replications, summarize
from tailvar.importance_sampling import (
    DEFAULT_MAX_ITER,
    DEFAULT_N,
    DEFAULT_TOL,
    solve_var_bisection,
)
from tailvar.logging import configure as configure_logging
from tailvar.models import SEED_MAX, MomentSource, NominalModel
from tailvar.reports import (
    MANIFEST_FILE,
    RECORDS_FILE,
    SUMMARY_FILE,
    RunOutputs,
    load_price_csv,
    read_manifest,
    read_records,
    read_summary_csv,
    write_figures,
    write_json_report,
    write_manifest,
    write_records,
    write_summary_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

DEFAULT_OUT_DIR = Path("results")

_MOMENT_SOURCES = {"sampled": MomentSource.SAMPLED, "analytic": MomentSource.ANALYTIC}


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parse_args(argv)
    except SystemExit as exc:
        # --help exits with 0; parse errors with EXIT_USAGE.
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    try:
        configure_logging(args.verbose)
        return _COMMANDS[args.command](args)
    except (TailVarError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_calibrate(args: argparse.Namespace) -> int:
    model = calibrate(load_price_csv(args.prices))
    var = {alpha: gaussian_var(model, alpha) for alpha in args.alpha}

    _emit(
        [
            ("mu_hat", model.mu_hat),
            ("sigma_hat", model.sigma_hat),
            ("T", model.sample_size),
            *((f"var_{alpha:g}", value) for alpha, value in var.items()),
        ]
    )
    _write_report(
        args,
        "calibrate.json",
        {
            "model": model.to_dict(),
            "implied_moments": model.implied_moments(),
            "gaussian_var": {f"{alpha:g}": value for alpha, value in var.items()},
        },
    )
    return EXIT_OK


def _cmd_is_var(args: argparse.Namespace) -> int:
    model = _nominal_model(args)
    result = solve_var_bisection(
        model,
        args.alpha,
        n=args.n,
        seed=_seed(args),
        tol=args.tol,
        max_iter=args.max_iter,
        theta=args.theta,
    )
    closed_form = gaussian_var(model, args.alpha)

    _emit(
        [
            ("var", result.var_estimate),
            ("bracket_lo", result.bracket_lo),
            ("bracket_hi", result.bracket_hi),
            ("iterations", result.iterations),
            ("ess", result.diagnostics.ess),
            ("max_weight_share", result.diagnostics.max_weight_share),
            ("theta", result.theta),
            ("n", result.n_samples),
            ("gaussian_var", closed_form),
        ]
    )
    _write_report(
        args,
        "is_var.json",
        {
            "model": model.to_dict(),
            "alpha": args.alpha,
            "seed": _seed(args),
            "seed_defaulted": args.seed is None,
            "var": result.var_estimate,
            "bracket": [result.bracket_lo, result.bracket_hi],
            "iterations": result.iterations,
            "ess": result.diagnostics.ess,
            "max_weight_share": result.diagnostics.max_weight_share,
            "theta": result.theta,
            "n": result.n_samples,
            "tol": result.tol,
            "gaussian_var": closed_form,
        },
    )
    return EXIT_OK


def _cmd_dmm_bounds(args: argparse.Namespace) -> int:
    model = _nominal_model(args)
    grid = build_grid(model, args.m, args.span)
    moments = nominal_moments(
        model,
        args.d_max,
        _MOMENT_SOURCES[args.moment_source],
        args.moment_samples,
        _seed(args),
    )
    sweep = moment_sweep(grid, moments, args.alpha, args.d_max)

    for b in sweep.brackets:
        line = f"d={b.moment_order} feasible={'true' if b.feasible else 'false'}"
        if b.feasible:
            line += f" lower={b.lower:.10g} upper={b.upper:.10g} width={b.width:.10g}"
        else:
            line += f" status={sweep.failed_status}"
            line += f" phase1_residual={b.phase1_residual:.10g}"
        print(line)
    print(f"d_star={sweep.d_star}")

    _write_report(
        args,
        "dmm_bounds.json",
        {
            "model": model.to_dict(),
            "alpha": args.alpha,
            "grid_points": grid.m,
            "span": args.span,
            "moment_source": args.moment_source,
            "moments": list(moments.values),
            "brackets": [
                {
                    "order": b.moment_order,
                    "feasible": b.feasible,
                    "lower": b.lower if b.feasible else None,
                    "upper": b.upper if b.feasible else None,
                    "phase1_residual": _finite_or_none(b.phase1_residual),
                }
                for b in sweep.brackets
            ],
            "d_star": sweep.d_star,
            "frontier_reached": sweep.frontier_reached,
            "failed_status": sweep.failed_status,
            "seed": _seed(args),
            "seed_defaulted": args.seed is None,
        },
    )
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(master_seed=args.seed)
    out_dir = args.out_dir or DEFAULT_OUT_DIR

    started = time.perf_counter()
    with RunOutputs(out_dir) as outputs:
        records = run_replications(cfg, workers=args.workers, verbose=args.verbose)
        table = summarize(records)
        written = [
            write_summary_csv(table, outputs.path(SUMMARY_FILE)),
            write_records(records, outputs.path(RECORDS_FILE)),
        ]
        written += write_figures(emit_figure_data(table, records, cfg), outputs.path)
        write_manifest(
            outputs.path(MANIFEST_FILE), written, cfg, time.perf_counter() - started
        )

    for cell in table:
        if cell.insufficient:
            print(
                f"nu={cell.nu:g} alpha={cell.alpha:g} "
                f"n_success={cell.n_success} insufficient=true"
            )
            continue
        print(
            f"nu={cell.nu:g} alpha={cell.alpha:g} n_success={cell.n_success} "
            f"true_var={cell.true_var_mean:.10g} is_bias={cell.is_bias:.10g} "
            f"is_std={cell.is_std:.10g} ess={cell.ess_mean:.10g} "
            f"maxw={cell.maxw_mean:.10g} dmm_width={cell.dmm_width_mean:.10g}"
        )
    return EXIT_OK


def _cmd_figures(args: argparse.Namespace) -> int:
    run_dir = args.run_dir
    cfg = parse_config(read_manifest(run_dir)["config"])
    if args.seed is not None and args.seed != cfg.master_seed:
        raise ConfigError(
            f"--seed {args.seed} differs from the run's seed {cfg.master_seed}",
            "master_seed",
        )
    records = read_records(run_dir / RECORDS_FILE)
    table = read_summary_csv(run_dir / SUMMARY_FILE)
    out_dir = args.out_dir or run_dir

    started = time.perf_counter()
    with RunOutputs(out_dir) as outputs:
        written = write_figures(emit_figure_data(table, records, cfg), outputs.path)
        write_manifest(
            outputs.path(MANIFEST_FILE),
            written,
            cfg,
            time.perf_counter() - started,
            merge=Path(out_dir).resolve() == Path(run_dir).resolve(),
        )

    for path in written:
        print(f"wrote={path}")
    return EXIT_OK


_COMMANDS: dict[str, Callable[[argparse.Namespace], int]] = {
    "calibrate": _cmd_calibrate,
    "is-var": _cmd_is_var,
    "dmm-bounds": _cmd_dmm_bounds,
    "simulate": _cmd_simulate,
    "figures": _cmd_figures,
}


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _nominal_model(args: argparse.Namespace) -> NominalModel:
    if args.prices is not None:
        return calibrate(load_price_csv(args.prices))
    return NominalModel(args.mu, args.sigma)


def _seed(args: argparse.Namespace) -> int:
    return 0 if args.seed is None else args.seed


def _finite_or_none(value: float) -> float | None:
    return value if math.isfinite(value) else None


def _emit(pairs: list[tuple[str, float | int]]) -> None:
    for key, value in pairs:
        text = str(value) if isinstance(value, int) else f"{value:.10g}"
        print(f"{key}={text}")


def _write_report(args: argparse.Namespace, name: str, payload: dict) -> None:
    if args.out_dir is None:
        return
    with RunOutputs(args.out_dir) as outputs:
        write_json_report(payload, outputs.path(name))


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _level(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1)")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text} is not >= 1")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"{text} is not > 0")
    return value


def _seed_value(text: str) -> int:
    value = int(text)
    if not 0 <= value <= SEED_MAX:
        raise argparse.ArgumentTypeError(f"{text} does not fit in 64 unsigned bits")
    return value


def _add_model_args(p: argparse.ArgumentParser) -> None:
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument(
        "--prices", type=Path, help="Calibrate the nominal model from a date,close CSV"
    )
    source.add_argument(
        "--sigma", type=_positive_float, help="Nominal daily log-return volatility"
    )
    p.add_argument(
        "--mu",
        type=float,
        default=0.0,
        help="Nominal daily log-return mean, used with --sigma (default: 0)",
    )


def _parse_args(argv: list[str] | None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--seed",
        type=_seed_value,
        help="Random seed; overrides master_seed for simulate (default: 0)",
    )
    common.add_argument(
        "--out-dir", type=Path, help="Directory for report files"
    )
    common.add_argument(
        "-v", "--verbose", action="store_true", help="Log debug events to stderr"
    )

    p = _Parser(
        prog="tailvar",
        description="VaR under tail misspecification: tilted IS and moment brackets.",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    cal = sub.add_parser(
        "calibrate", parents=[common], help="Fit the Gaussian nominal model to prices"
    )
    cal.add_argument(
        "--prices", type=Path, required=True, help="Price file with date,close columns"
    )
    cal.add_argument(
        "--alpha",
        type=_level,
        nargs="+",
        default=[0.99],
        help="VaR confidence level(s) (default: 0.99)",
    )

    isv = sub.add_parser(
        "is-var", parents=[common], help="Solve for VaR by tilted importance sampling"
    )
    _add_model_args(isv)
    isv.add_argument(
        "--alpha", type=_level, default=0.99, help="Confidence level (default: 0.99)"
    )
    isv.add_argument(
        "--n",
        type=_positive_int,
        default=DEFAULT_N,
        help=f"Proposal sample size (default: {DEFAULT_N})",
    )
    isv.add_argument(
        "--tol",
        type=_positive_float,
        default=DEFAULT_TOL,
        help=f"Final bracket width (default: {DEFAULT_TOL:g})",
    )
    isv.add_argument(
        "--max-iter",
        type=_positive_int,
        default=DEFAULT_MAX_ITER,
        help=f"Bisection step limit (default: {DEFAULT_MAX_ITER})",
    )
    isv.add_argument(
        "--theta",
        type=float,
        help="Tilt of the proposal mean (default: pilot tilt; 0 for plain MC)",
    )

    dmm = sub.add_parser(
        "dmm-bounds", parents=[common], help="Bracket VaR by discrete moment matching"
    )
    _add_model_args(dmm)
    dmm.add_argument(
        "--alpha", type=_level, default=0.99, help="Confidence level (default: 0.99)"
    )
    dmm.add_argument(
        "--d-max",
        type=_positive_int,
        default=DEFAULT_D_MAX,
        help=f"Highest moment order tried (default: {DEFAULT_D_MAX})",
    )
    dmm.add_argument(
        "--m",
        type=_positive_int,
        default=DEFAULT_GRID_POINTS,
        help=f"Grid intervals, m+1 points (default: {DEFAULT_GRID_POINTS})",
    )
    dmm.add_argument(
        "--span",
        type=_positive_float,
        default=DEFAULT_SPAN,
        help=f"Grid half-width in sigma units (default: {DEFAULT_SPAN:g})",
    )
    dmm.add_argument(
        "--moment-source",
        choices=sorted(_MOMENT_SOURCES),
        default="sampled",
        help="Nominal moments from a sample or in closed form (default: sampled)",
    )
    dmm.add_argument(
        "--moment-samples",
        type=_positive_int,
        default=DEFAULT_MOMENT_SAMPLES,
        help=f"Sample size for sampled moments (default: {DEFAULT_MOMENT_SAMPLES})",
    )

    sim = sub.add_parser(
        "simulate", parents=[common], help="Run the replicated misspecification study"
    )
    sim.add_argument(
        "--config", type=Path, help="key = value config file (default: built-ins)"
    )
    sim.add_argument(
        "--workers",
        type=_positive_int,
        default=1,
        help="Worker processes; outputs do not depend on it (default: 1)",
    )

    fig = sub.add_parser(
        "figures", parents=[common], help="Rebuild figure data from a simulate run"
    )
    fig.add_argument(
        "--run-dir",
        type=Path,
        required=True,
        help="Output directory of a simulate run",
    )

    return p.parse_args(argv)
