"""Command-line entry point.

Subcommands::

    sample       generate a synthetic point cloud (hypercube or torus) as CSV
    estimate-id  run a dimension estimator on a point-cloud CSV
    vet          select the least-linear random teacher and save it
    sweep        run a config's student sweep and write loss curves only
    fit          fit a power law to a loss-curve CSV
    report       emit a figure family (CSV + PNG) from a run directory
    run          run the full pipeline described by a config file
    resume       resume an interrupted or partially deleted run directory

Exit codes: 0 success, 1 usage error, 2 validation error, 3 runtime fault
(partial results may remain in the output directory). Worker parallelism
defaults to the available cores; override with --workers or the
IDSCALING_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import sys

from . import io
from .experiments import ConfigError, load_config, resume, run_experiment
from .id_estimation import estimate_id_knn, estimate_id_mle
from .manifolds import CloudFormatError, load_cloud, sample_hypercube, sample_torus, save_cloud
from .powerlaw import fit_power_law, n_max_at_loss_threshold, n_max_empirical
from .reports import FIGURES, ReportError, report
from .teachers import vet_teachers

USAGE_ERROR, VALIDATION_ERROR, RUNTIME_FAULT = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="idscaling", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="generate a synthetic point cloud CSV")
    p.add_argument("--manifold", choices=("hypercube", "torus"), required=True)
    p.add_argument("--dim", type=int, required=True, help="intrinsic dimension")
    p.add_argument("--n", type=int, required=True, help="number of points")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("estimate-id", help="estimate intrinsic dimension of a cloud")
    p.add_argument("--cloud", required=True, help="point-cloud CSV")
    p.add_argument("--method", choices=("knn_cumulative", "mle_biased", "mle_unbiased"),
                   default="knn_cumulative")
    p.add_argument("--k", type=int, default=2, help="neighbors used")
    p.add_argument("--discard-top", type=float, default=0.0,
                   help="fraction of largest ratios to drop (knn only)")
    p.add_argument("--out", help="write the estimate as JSON here")
    p.add_argument("--per-point", help="write per-point MLE values as CSV here")

    p = sub.add_parser("vet", help="pick the least axis-linear random teacher")
    p.add_argument("--shape", required=True, help="comma-separated layer sizes, e.g. 9,240,240,2")
    p.add_argument("--feature-count", type=int, required=True)
    p.add_argument("--candidates", type=int, default=500)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True, help="teacher JSON path")

    p = sub.add_parser("sweep", help="train the config's students; write curves only")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides config.output_dir)")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("fit", help="fit a power law to a loss-curve CSV")
    p.add_argument("--curve", required=True)
    p.add_argument("--no-hull", action="store_true", help="skip convex-hull filtering")
    p.add_argument("--n-min", type=float, help="ignore points below this N")
    p.add_argument("--threshold", type=float, help="also report N at this loss")
    p.add_argument("--out", help="write the fit as JSON here")

    p = sub.add_parser("report", help="emit a figure family from a run directory")
    p.add_argument("--run", required=True)
    p.add_argument("--figure", required=True, choices=FIGURES)

    p = sub.add_parser("run", help="run the full pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides config.output_dir)")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("resume", help="resume a run directory")
    p.add_argument("--run", required=True)
    return parser


def _cmd_sample(args) -> int:
    sampler = sample_hypercube if args.manifold == "hypercube" else sample_torus
    cloud = sampler(args.dim, args.n, args.seed)
    save_cloud(cloud, args.out)
    print(f"wrote {cloud.n} points ({cloud.ambient_dim} ambient dims) to {args.out}")
    return 0


def _cmd_estimate_id(args) -> int:
    cloud = load_cloud(args.cloud)
    if args.method == "knn_cumulative":
        est = estimate_id_knn(cloud, args.k, discard_top_fraction=args.discard_top)
    else:
        est = estimate_id_mle(cloud, args.k, unbiased=(args.method == "mle_unbiased"))
    print(io.canonical_json(est.record()), end="")
    if args.out:
        io.write_estimate_json(args.out, est)
    if args.per_point:
        io.write_per_point_csv(args.per_point, est)
    return 0


def _cmd_vet(args) -> int:
    shape = [int(s) for s in args.shape.split(",")]
    best = vet_teachers(
        shape, args.feature_count, args.candidates, args.trials, args.seed,
        workers=args.workers,
    )
    io.write_json(args.out, io.teacher_to_dict(best))
    print(f"vetted teacher seed={best.seed} score={best.vetting_score!r} -> {args.out}")
    return 0


def _cmd_fit(args) -> int:
    curve = io.read_curve_csv(args.curve)
    fit = fit_power_law(curve, apply_hull=not args.no_hull, n_min=args.n_min)
    payload = io.fit_to_dict(fit)
    payload["n_max_empirical"] = n_max_empirical(curve, fit)
    if args.threshold is not None:
        nm = n_max_at_loss_threshold(fit, args.threshold)
        payload["n_max_threshold"] = {
            "loss_threshold": args.threshold, "n_max": nm.n_max, "extrapolated": nm.extrapolated,
        }
    print(io.canonical_json({k: v for k, v in payload.items() if k != "residuals"}), end="")
    if args.out:
        io.write_json(args.out, payload)
    return 0


def _cmd_run(args, analysis: bool) -> int:
    config = load_config(args.config)
    record = run_experiment(config, output_dir=args.out, workers=args.workers, analysis=analysis)
    print(io.canonical_json({"kind": record.kind, "summary": record.summary}), end="")
    return 0


def _cmd_report(args) -> int:
    paths = report(args.run, args.figure)
    for p in paths:
        print(p)
    return 0


def _cmd_resume(args) -> int:
    record = resume(args.run)
    print(io.canonical_json({"kind": record.kind, "summary": record.summary}), end="")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "sample":
            return _cmd_sample(args)
        if args.command == "estimate-id":
            return _cmd_estimate_id(args)
        if args.command == "vet":
            return _cmd_vet(args)
        if args.command == "sweep":
            return _cmd_run(args, analysis=False)
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "report":
            return _cmd_report(args)
        if args.command == "run":
            return _cmd_run(args, analysis=True)
        if args.command == "resume":
            return _cmd_resume(args)
        raise AssertionError(args.command)
    except (ConfigError, CloudFormatError, ReportError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_ERROR
    except Exception as exc:  # runtime fault; partial results may remain
        print(f"runtime fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return RUNTIME_FAULT


if __name__ == "__main__":
    sys.exit(main())
