"""Command-line entry point: fit, predict, cv, simulate, tecator, classify.

Exit codes: 0 success, 1 validation error, 2 numerical failure.  All
outputs are written atomically (temp file + rename); reruns with the
same flags and seed are byte-identical and never mutate inputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

import numpy as np

from . import __version__
from .baselines import gcv_select
from .core import IPriorModel, NumericalBreakdown
from .data_io import classify_eval, iprior_protocol, load_functional, load_tabular, write_csv
from .error_models import AR1, IID, MA1
from .estimation import (
    DEFAULT_START_AXIS,
    FitConfig,
    fit_ml,
    fit_report,
    select_by_cv,
    select_kernel_hyper,
)
from .kernels import CanonicalKernel, FbmKernel, SqExpKernel
from .simulation import StudyConfig, run_study, write_study_csv, write_study_manifest

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    # usage errors must exit 1 (2 is reserved for numerical failure)
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_kernel_flags(p):
    p.add_argument("--kernel", choices=("canonical", "fbm", "sqexp"), default="canonical")
    p.add_argument("--gamma", type=float, default=None,
                   help="Hurst coefficient (fbm only)")
    p.add_argument("--sigma", type=float, default=None,
                   help="bandwidth (sqexp only)")
    p.add_argument("--center", action="store_true",
                   help="center the kernel on the training inputs")


def _add_error_flags(p):
    p.add_argument("--errors", choices=("iid", "ar1", "ma1"), default="iid")
    p.add_argument("--alpha", type=float, default=None,
                   help="correlation coefficient (ar1/ma1 only)")


def _add_estimation_flags(p):
    p.add_argument("--starts", type=int, default=len(DEFAULT_START_AXIS),
                   help="start-grid points per axis over [-6, 6]")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)


def _build_kernel(args):
    if args.kernel != "fbm" and args.gamma is not None:
        raise ValueError("--gamma applies only to --kernel fbm")
    if args.kernel != "sqexp" and args.sigma is not None:
        raise ValueError("--sigma applies only to --kernel sqexp")
    if args.kernel == "canonical":
        return CanonicalKernel()
    if args.kernel == "fbm":
        return FbmKernel(hurst=args.gamma if args.gamma is not None else 0.5)
    if args.sigma is None:
        raise ValueError("--kernel sqexp requires --sigma")
    return SqExpKernel(bandwidth=args.sigma)


def _build_error(args):
    if args.errors == "iid":
        if args.alpha is not None:
            raise ValueError("--alpha applies only to --errors ar1|ma1")
        return IID()
    if args.alpha is None:
        raise ValueError(f"--errors {args.errors} requires --alpha")
    return AR1(alpha=args.alpha) if args.errors == "ar1" else MA1(alpha=args.alpha)


def _fit_config(args):
    axis = tuple(np.linspace(-6.0, 6.0, max(args.starts, 1)))
    starts = tuple((a, b) for a in axis for b in axis)
    return FitConfig(starts=starts, folds=args.folds, seed=args.seed)


def _atomic_write_text(path, text):
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _parse_floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _cmd_fit(args) -> int:
    ds = load_tabular(args.input, args.response)
    kernel = _build_kernel(args)
    error = _build_error(args)
    config = _fit_config(args)
    model, maxima = fit_ml(kernel, error, ds.X, ds.y, config,
                           prior_mean=args.f0, center=args.center)
    chosen, cv_table = select_by_cv(maxima, kernel, error, ds.X, ds.y, config,
                                    prior_mean=args.f0, center=args.center)
    model = IPriorModel(
        kernel, error.with_innovation_precision(float(np.exp(chosen.log_psi))),
        float(np.exp(chosen.log_scale)), ds.X, ds.y,
        prior_mean=args.f0, center=args.center,
    )
    _atomic_write_text(args.output_model, model.to_json())
    report = fit_report("iprior-ml", maxima, cv_table, chosen,
                        extra={"version": __version__, "n": int(ds.n)})
    _atomic_write_text(args.output_report, json.dumps(report, indent=2) + "\n")
    return 0


def _cmd_predict(args) -> int:
    with open(args.model) as fh:
        model = IPriorModel.from_json(fh.read())
    ds = load_tabular(args.input, args.response)
    mean, var = model.predict(ds.X, variance=True)
    write_csv(args.output, ["mean", "variance"], zip(mean, var))
    return 0


def _cmd_cv(args) -> int:
    ds = load_tabular(args.input, args.response)
    error = _build_error(args)
    config = _fit_config(args)
    grid = _parse_floats(args.grid)
    if args.kernel == "fbm":
        make = lambda g: FbmKernel(hurst=g)
    elif args.kernel == "sqexp":
        make = lambda s: SqExpKernel(bandwidth=s)
    else:
        raise ValueError("cv sweeps a kernel hyperparameter; use --kernel fbm or sqexp")
    best, _model, table = select_kernel_hyper(grid, make, error, ds.X, ds.y, config,
                                              prior_mean=args.f0, center=args.center)
    rows = [(t["hyper"], t["cv_rmse"], t["loglik"], t["error"] or "") for t in table]
    write_csv(args.output, ["hyper", "cv_rmse", "loglik", "error"], rows)
    return 0


def _cmd_simulate(args) -> int:
    config = StudyConfig(
        n=args.n,
        truths=tuple(args.truths.split(",")),
        sds=_parse_floats(args.sds),
        replicates=args.replicates,
        master_seed=args.seed,
        estimators=tuple(args.estimators.split(",")),
    )
    result = run_study(config, threads=args.threads)
    write_study_csv(result, args.output)
    if args.manifest:
        write_study_manifest(result, args.manifest)
    return 0


def _cmd_tecator(args) -> int:
    from .data_io import tecator_benchmark

    ds = load_functional(args.input, response=args.response)
    rows = tecator_benchmark(ds, hurst_grid=_parse_floats(args.gamma_grid) or None)
    out = [(r["model"], r["train_rmse"], r["test_rmse"], r["error"] or "") for r in rows]
    write_csv(args.output, ["model", "train_rmse", "test_rmse", "error"], out)
    return 0


def _cmd_classify(args) -> int:
    ds = load_tabular(args.input, args.response, label_mode=True)
    kernel = _build_kernel(args)
    error = _build_error(args)
    protocol = iprior_protocol(kernel, error, _fit_config(args), center=args.center)
    rows = classify_eval(ds, protocol, sizes=[int(s) for s in args.sizes.split(",")],
                         repeats=args.repeats, seed=args.seed)
    write_csv(args.output, ["size", "mean_misclass", "se", "repeats", "degenerate"],
              [(r.size, r.mean_misclass, r.se, r.repeats, r.degenerate) for r in rows])
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ipriorkit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ipriorkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a model to tabular data")
    p.add_argument("--input", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--f0", default="mean", help='"mean", "zero", or a number')
    _add_kernel_flags(p)
    _add_error_flags(p)
    _add_estimation_flags(p)
    p.add_argument("--output-model", required=True)
    p.add_argument("--output-report", required=True)
    p.set_defaults(fn=_cmd_fit)

    p = sub.add_parser("predict", help="predict from a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--response", required=True,
                   help="response column of the input file (ignored values are fine)")
    p.add_argument("--output", required=True)
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("cv", help="cross-validate a kernel hyperparameter grid")
    p.add_argument("--input", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--grid", required=True, help="comma-separated hyperparameter values")
    p.add_argument("--f0", default="mean")
    _add_kernel_flags(p)
    _add_error_flags(p)
    _add_estimation_flags(p)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=_cmd_cv)

    p = sub.add_parser("simulate", help="run the estimator-comparison study")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--replicates", type=int, default=50)
    p.add_argument("--truths", default="rough,iprior,se")
    p.add_argument("--sds", default="0.02,0.05,0.1,0.2,0.5,1.0")
    p.add_argument("--estimators", default="iprior,tikhonov,se")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("IPRIOR_THREADS", "1")))
    p.add_argument("--output", required=True)
    p.add_argument("--manifest", default=None)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("tecator", help="functional-regression benchmark table")
    p.add_argument("--input", required=True)
    p.add_argument("--response", default="fat")
    p.add_argument("--gamma-grid", default="")
    p.add_argument("--output", required=True)
    p.set_defaults(fn=_cmd_tecator)

    p = sub.add_parser("classify", help="subsample misclassification study")
    p.add_argument("--input", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--sizes", default="50")
    p.add_argument("--repeats", type=int, default=40)
    _add_kernel_flags(p)
    _add_error_flags(p)
    _add_estimation_flags(p)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=_cmd_classify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "f0", None) == "zero":
        args.f0 = 0.0
    elif getattr(args, "f0", None) not in (None, "mean"):
        try:
            args.f0 = float(args.f0)
        except ValueError:
            print(f"ipriorkit: error: --f0 must be 'mean', 'zero', or a number, "
                  f"got {args.f0!r}", file=sys.stderr)
            return 1
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"ipriorkit: error: {exc}", file=sys.stderr)
        return 1
    except (NumericalBreakdown, np.linalg.LinAlgError) as exc:
        print(f"ipriorkit: numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
