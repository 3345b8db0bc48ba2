"""Command-line interface: simulate panels, fit chain graphs, evaluate
recovered networks.

Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 fit did not converge
(unless --allow-nonconverged).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dataset import load_dataset
from .em import FitOptions, fit, format_fit_report, grid_search
from .io import (
    read_matrix,
    write_directed_edges,
    write_long_panel,
    write_manifest,
    write_matrix,
    write_undirected_edges,
)
from .mstep import PenaltyConfig
from .simulate import GroundTruth, gen_gamma, gen_theta, score_support, simulate_panel

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_NONCONVERGED = 3


def _parse_grid(spec: str) -> np.ndarray:
    """'start:stop:count' -> log-spaced grid."""
    try:
        start, stop, count = spec.split(":")
        start, stop, count = float(start), float(stop), int(count)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad grid spec {spec!r}, expected start:stop:count") from exc
    if start <= 0 or stop < start or count < 1:
        raise argparse.ArgumentTypeError(f"bad grid spec {spec!r}")
    return np.geomspace(start, stop, count)


def _apply_config_file(args: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Fill unset (None) options from the JSON config file; flags win."""
    if not getattr(args, "config", None):
        return
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config file: {exc}")
    for key, value in cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            parser.error(f"unknown config key {key!r}")
        if getattr(args, attr) is None:
            if attr in ("grid_lambda", "grid_rho"):
                value = _parse_grid(value)
            setattr(args, attr, value)


def _resolved(args: argparse.Namespace, skip=("config",)) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip or key == "func":
            continue
        out[key] = value.tolist() if isinstance(value, np.ndarray) else value
    return out


def cmd_simulate(args, parser) -> int:
    if args.categories < 2:
        parser.error("--categories must be at least 2")
    if args.p < 2 or args.n < 1 or args.T < 2:
        parser.error("need --p >= 2, --n >= 1, --T >= 2")
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_IO
    rng = np.random.default_rng(args.seed)
    truth = GroundTruth(
        gen_theta(args.p, structure=args.structure, seed=rng),
        gen_gamma(args.p, seed=rng, structure=args.structure, diag_frac=args.gamma_diag_frac),
        args.seed,
    )
    dataset, _ = simulate_panel(
        truth, args.n, args.T, args.categories,
        seed=rng.integers(2**31), fixed_quantiles=bool(args.fixed_quantiles),
    )
    files = {
        "dataset.csv": lambda f: write_long_panel(f, dataset),
        "theta_true.csv": lambda f: write_matrix(f, truth.theta_true, dataset.variable_ids),
        "gamma_true.csv": lambda f: write_matrix(f, truth.gamma_true, dataset.variable_ids),
    }
    try:
        for name, writer in files.items():
            writer(out / name)
        write_manifest(out / "manifest.json", "simulate", args.seed, _resolved(args), list(files))
    except OSError as exc:
        print(f"error: write failed: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {', '.join(files)} and manifest.json to {out}")
    return EXIT_OK


def _fit_options(args) -> FitOptions:
    return FitOptions(
        em_tol=args.em_tol,
        em_max_iter=args.em_max_iter,
        inner_sweeps=args.inner_sweeps,
        moment_mode=args.moment_mode,
        pool_marginals=bool(args.pool_marginals),
        rescale_correlation=bool(args.rescale_correlation),
        seed=args.seed,
        workers=args.workers,
    )


def cmd_fit(args, parser) -> int:
    grid_mode = args.grid_lambda is not None or args.grid_rho is not None
    if grid_mode and (args.lam is not None or args.rho is not None):
        parser.error("give either fixed --lambda/--rho or --grid-lambda/--grid-rho, not both")
    if not grid_mode and (args.lam is None or args.rho is None):
        parser.error("need both --lambda and --rho (or grid flags)")
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        dataset = load_dataset(args.data)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    opts = _fit_options(args)

    grid_result = None
    if grid_mode:
        grid_result = grid_search(
            dataset,
            penalty_kind=args.penalty,
            lambdas=args.grid_lambda,
            rhos=args.grid_rho,
            opts=opts,
            scad_a=args.scad_a,
        )
        model = grid_result.best
    else:
        penalty = PenaltyConfig(kind=args.penalty, lam=args.lam, rho=args.rho, a=args.scad_a)
        model = fit(dataset, penalty, opts)

    labels = dataset.variable_ids
    outputs = ["theta.csv", "gamma.csv", "theta_edges.csv", "gamma_edges.csv", "fit_report.txt"]
    try:
        write_matrix(out / "theta.csv", model.theta, labels)
        write_matrix(out / "gamma.csv", model.gamma, labels)
        write_undirected_edges(
            out / "theta_edges.csv", model.theta, labels,
            partial_correlation=bool(args.partial_correlation),
        )
        write_directed_edges(out / "gamma_edges.csv", model.gamma, labels)
        (out / "fit_report.txt").write_text(format_fit_report(model, grid_result))
        if grid_result is not None:
            rows = ["lambda,rho,bic,df_theta,df_gamma,converged"]
            for row in grid_result.grid:
                rows.append(
                    f"{row['lam']:.17g},{row['rho']:.17g},{row['bic']:.17g},"
                    f"{row['df_theta']},{row['df_gamma']},{int(bool(row['converged']))}"
                )
            (out / "bic_surface.csv").write_text("\n".join(rows) + "\n")
            outputs.append("bic_surface.csv")
        write_manifest(out / "manifest.json", "fit", args.seed, _resolved(args), outputs)
    except OSError as exc:
        print(f"error: write failed: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote fit outputs to {out} (bic={model.bic:.6g}, df_theta={model.df_theta}, df_gamma={model.df_gamma})")
    if not model.converged and not args.allow_nonconverged:
        print("error: EM did not converge (use --allow-nonconverged to accept)", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_eval(args, parser) -> int:
    if not (args.theta and args.theta_truth) and not (args.gamma and args.gamma_truth):
        parser.error("need --theta/--theta-truth and/or --gamma/--gamma-truth")
    sections = []
    try:
        if args.theta and args.theta_truth:
            est, tru = read_matrix(args.theta), read_matrix(args.theta_truth)
            sections.append(("theta", score_support(est, tru, "off_diagonal_symmetric")))
        if args.gamma and args.gamma_truth:
            est, tru = read_matrix(args.gamma), read_matrix(args.gamma_truth)
            sections.append(("gamma", score_support(est, tru, "full")))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    lines = ["target,f1,sen,spe,tp,fp,fn,tn"]
    for name, sc in sections:
        lines.append(
            f"{name},{sc.f1:.17g},{sc.sen:.17g},{sc.spe:.17g},{sc.tp},{sc.fp},{sc.fn},{sc.tn}"
        )
    text = "\n".join(lines) + "\n"
    try:
        Path(args.out).write_text(text)
    except OSError as exc:
        print(f"error: write failed: {exc}", file=sys.stderr)
        return EXIT_IO
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tschain",
        description="Sparse dynamic chain-graph models for ordinal and mixed time series",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a ground-truth panel")
    sim.add_argument("--p", type=int, required=True, help="number of variables")
    sim.add_argument("--n", type=int, required=True, help="number of samples")
    sim.add_argument("--T", type=int, required=True, help="number of time points")
    sim.add_argument("--categories", type=int, default=4, help="ordinal categories (default 4)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--structure", choices=["random", "band", "cluster"], default="random")
    sim.add_argument("--gamma-diag-frac", type=float, default=0.2,
                     help="fraction of nonzero autoregressive diagonal entries (default 0.2)")
    sim.add_argument("--fixed-quantiles", action="store_true",
                     help="equiprobable categories instead of randomized cuts")
    sim.add_argument("--out-dir", default=".", help="output directory")
    sim.set_defaults(func=cmd_simulate)

    fitp = sub.add_parser("fit", help="fit the chain graph to a long-format panel")
    fitp.add_argument("data", help="long-format dataset file (csv/tsv)")
    fitp.add_argument("--config", help="JSON config file; explicit flags override it")
    fitp.add_argument("--penalty", choices=["l1", "scad"], default=None)
    fitp.add_argument("--lambda", dest="lam", type=float, default=None, help="precision penalty")
    fitp.add_argument("--rho", type=float, default=None, help="autoregressive penalty")
    fitp.add_argument("--scad-a", type=float, default=None, help="SCAD shape (default 3.7)")
    fitp.add_argument("--grid-lambda", type=_parse_grid, default=None,
                      help="lambda grid as start:stop:count (log-spaced)")
    fitp.add_argument("--grid-rho", type=_parse_grid, default=None,
                      help="rho grid as start:stop:count (log-spaced)")
    fitp.add_argument("--em-tol", type=float, default=None)
    fitp.add_argument("--em-max-iter", type=int, default=None)
    fitp.add_argument("--inner-sweeps", type=int, default=None)
    fitp.add_argument("--moment-mode", choices=["inter", "intra"], default=None)
    fitp.add_argument("--pool-marginals", action=argparse.BooleanOptionalAction, default=None,
                      help="pool marginal tables over time points")
    fitp.add_argument("--rescale-correlation", action=argparse.BooleanOptionalAction, default=None,
                      help="rescale the precision to correlation scale after each M-step (default on)")
    fitp.add_argument("--partial-correlation", action=argparse.BooleanOptionalAction, default=None,
                      help="emit partial correlations in the undirected edge list")
    fitp.add_argument("--allow-nonconverged", action=argparse.BooleanOptionalAction, default=None)
    fitp.add_argument("--workers", type=int, default=None)
    fitp.add_argument("--seed", type=int, default=None)
    fitp.add_argument("--out-dir", default=None)
    fitp.set_defaults(func=cmd_fit)

    ev = sub.add_parser("eval", help="score recovered supports against the truth")
    ev.add_argument("--theta", help="estimated precision matrix file")
    ev.add_argument("--theta-truth", help="true precision matrix file")
    ev.add_argument("--gamma", help="estimated autoregressive matrix file")
    ev.add_argument("--gamma-truth", help="true autoregressive matrix file")
    ev.add_argument("--out", default="metrics.csv", help="metrics output file")
    ev.set_defaults(func=cmd_eval)
    return parser


_FIT_DEFAULTS = {
    "penalty": "scad",
    "scad_a": 3.7,
    "em_tol": 1e-3,
    "em_max_iter": 50,
    "inner_sweeps": 2,
    "moment_mode": "inter",
    "pool_marginals": False,
    "rescale_correlation": True,
    "partial_correlation": False,
    "allow_nonconverged": False,
    "workers": 1,
    "seed": 0,
    "out_dir": ".",
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "fit":
        _apply_config_file(args, parser)
        for key, value in _FIT_DEFAULTS.items():
            if getattr(args, key, None) is None:
                setattr(args, key, value)
    return args.func(args, parser)


if __name__ == "__main__":
    sys.exit(main())
