"""Command-line interface.

Exit codes: 0 on success, 1 for usage errors, 2 for data or runtime errors.
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

from .correlation import CorrKind
from .data import FLOAT_FMT, DataError, load_dataset, save_dataset, write_csv
from .family import FamilyKind
from .penalties import Penalty, PenaltyKind
from .simulation import SHAPES, BenchSpec, SimConfig, prediction_metrics, run_bench, simulate
from .solver import FitConfig, FitError, FitResult, fit

log = logging.getLogger("tensorgee")

SEED_ENV = "TGEE_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    """'1:5' (inclusive) or '1,2,3'."""
    try:
        if ":" in text:
            lo, hi = (int(v) for v in text.split(":"))
            return list(range(lo, hi + 1))
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a:b' or 'a,b,c', got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _grid(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in text.lower().replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected dims like 64x64, got {text!r}") from None
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"dims must be positive, got {text!r}")
    return dims


def _add_fit_options(p, rank=True):
    if rank:
        p.add_argument("--rank", type=int, default=1)
    p.add_argument("--family", choices=[f.value for f in FamilyKind], default=None,
                   help="defaults to the dataset's family")
    p.add_argument("--corr", choices=[c.value for c in CorrKind], default="exchangeable")
    p.add_argument("--penalty", choices=[k.value for k in PenaltyKind], default="none")
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--enet-alpha", type=float, default=1.5)
    p.add_argument("--scad-a", type=float, default=3.7)
    p.add_argument("--max-outer", type=int, default=100)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help=f"falls back to ${SEED_ENV}, then 0")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tensorgee", description="Tensor generalized estimating equations.")
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a shape-signal dataset")
    p.add_argument("--shape", choices=SHAPES, default="square")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--p0", type=int, default=5)
    p.add_argument("--rho", type=float, default=0.8)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--corr", choices=["exchangeable", "ar1", "independence"],
                   default="exchangeable")
    p.add_argument("--family", choices=[f.value for f in FamilyKind], default="gaussian")
    p.add_argument("--grid", type=_grid, default=(64, 64))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit a tensor GEE")
    p.add_argument("--data", required=True)
    _add_fit_options(p)
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--tensor-out", default=None, help="optional CSV grid of the fitted tensor")

    p = sub.add_parser("select-rank", help="BIC table over candidate ranks")
    p.add_argument("--data", required=True)
    p.add_argument("--ranks", type=_int_list, default=[1, 2, 3])
    p.add_argument("--family", choices=[f.value for f in FamilyKind], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-outer", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("select-lambda", help="validation metric over a penalty grid")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--grid", type=_float_list, required=True)
    _add_fit_options(p)

    p = sub.add_parser("predict", help="predictions from a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="CSV path; standard output when omitted")
    p.add_argument("--time", type=int, default=None, help="only this 1-based time point")
    p.add_argument("--metrics", action="store_true", help="append RMSE and correlation")

    p = sub.add_parser("inference", help="sandwich standard errors and Wald intervals")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--out", default=None)

    p = sub.add_parser("bench", help="replicated simulation benchmark")
    p.add_argument("--shape", choices=SHAPES, default="butterfly")
    p.add_argument("--n-list", type=_int_list, default=[50, 100, 150])
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--corr-list", type=_str_list, default=["exchangeable", "ar1", "independence"])
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--rho", type=float, default=0.8)
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--grid", type=_grid, default=(64, 64))
    p.add_argument("--max-outer", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    return parser


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _fit_config(args, family: str) -> FitConfig:
    if args.penalty == "none" and args.lam > 0:
        raise UsageError("--penalty none conflicts with --lambda > 0")
    try:
        penalty = Penalty(args.penalty, args.lam, args.enet_alpha, args.scad_a)
        return FitConfig(rank=args.rank, family=args.family or family, corr=args.corr,
                         penalty=penalty, max_outer=args.max_outer, tol=args.tol,
                         seed=_seed(args), restarts=args.restarts)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _open_out(path):
    if path is None:
        return sys.stdout
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return FLOAT_FMT % v
    return str(v)


def _write_table(path, header, rows, footer=()) -> None:
    fh = _open_out(path)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        for line in footer:
            fh.write(line + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()


def _write_grid(path, tensor: np.ndarray) -> None:
    """Mode-1 unfolding; an image for matrix covariates."""
    write_csv(path, tensor.reshape(tensor.shape[0], -1, order="F"))


def cmd_simulate(args) -> None:
    if args.n < 1 or args.m < 1 or args.p0 < 0:
        raise UsageError("--n and --m must be positive and --p0 non-negative")
    try:
        cfg = SimConfig(n=args.n, m=args.m, p0=args.p0, sigma2=args.sigma2, rho=args.rho,
                        corr=args.corr, shape=args.shape, grid=args.grid, seed=_seed(args),
                        family=args.family)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data, truth = simulate(cfg)
    out = Path(args.out)
    save_dataset(data, out, extra={"simulation": {
        "shape": args.shape, "rho": args.rho, "sigma2": args.sigma2, "corr": args.corr,
        "seed": cfg.seed, "truth": "B_true.csv"}})
    _write_grid(out / "B_true.csv", truth.tensor)
    log.info("wrote %s", out)


def cmd_fit(args) -> None:
    data = load_dataset(args.data)
    cfg = _fit_config(args, data.family)
    res = fit(data, cfg)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(res.to_dict(), indent=2))
    if args.tensor_out:
        _write_grid(args.tensor_out, res.tensor())
    log.info("converged=%s sweeps=%d ee_norm=%.3g", res.converged, res.outer_iters, res.ee_norm)


def cmd_select_rank(args) -> None:
    from .selection import select_rank

    data = load_dataset(args.data)
    sel = select_rank(data, args.ranks, args.family or data.family, _seed(args),
                      jobs=args.jobs, max_outer=args.max_outer, tol=args.tol)
    rows = [(r["rank"], r["p_e"], r["bic"], r["converged"]) for r in sel.rows()]
    _write_table(None, ["rank", "p_e", "bic", "converged"], rows,
                 [f"# chosen,{sel.chosen}"])


def cmd_select_lambda(args) -> None:
    from .selection import select_lambda

    train, valid = load_dataset(args.train), load_dataset(args.valid)
    cfg = _fit_config(args, train.family)
    sel = select_lambda(train, valid, args.grid, cfg)
    rows = [(lam, sel.metric.get(lam, float("nan")), lam == sel.chosen) for lam in sel.grid]
    _write_table(None, ["lambda", sel.metric_name, "chosen"], rows)


def _load_model(path) -> FitResult:
    try:
        return FitResult.from_dict(json.loads(Path(path).read_text()))
    except FileNotFoundError:
        raise DataError(f"missing model file {path}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad model file {path}: {exc}") from None


def cmd_predict(args) -> None:
    model = _load_model(args.model)
    data = load_dataset(args.data)
    eta, mu = model.predict(data)
    times = range(data.m)
    if args.time is not None:
        if not 1 <= args.time <= data.m:
            raise UsageError(f"--time must lie in 1..{data.m}")
        times = [args.time - 1]
    rows = [(i + 1, j + 1, float(data.y[i, j]), float(eta[i, j]), float(mu[i, j]))
            for i in range(data.n) for j in times]
    footer = []
    if args.metrics:
        y_obs = np.array([r[2] for r in rows])
        y_hat = np.array([r[4] for r in rows])
        rmse, corr = prediction_metrics(y_obs, y_hat)
        footer = [f"# rmse,{FLOAT_FMT % rmse}",
                  f"# corr,{'NA' if corr is None else FLOAT_FMT % corr}"]
    _write_table(args.out, ["subject", "time", "y_observed", "eta", "mu"], rows, footer)


def cmd_inference(args) -> None:
    from .inference import sandwich, wald

    if not 0 < args.level < 1:
        raise UsageError("--level must lie in (0, 1)")
    model = _load_model(args.model)
    data = load_dataset(args.data)
    if not model.converged:
        log.warning("model did not converge; intervals may be unreliable")
    est = sandwich(data, model)
    rows = [(r.block, r.row, r.component, r.estimate, r.se, r.lo, r.hi)
            for r in wald(model, est, args.level)]
    _write_table(args.out, ["block", "row", "component", "estimate", "se", "lo", "hi"], rows)


def cmd_bench(args) -> None:
    for c in args.corr_list:
        if c not in {k.value for k in CorrKind}:
            raise UsageError(f"unknown correlation {c!r} in --corr-list")
    if args.reps < 2 or args.jobs < 1 or not args.n_list:
        raise UsageError("--reps must be at least 2, --jobs positive, --n-list non-empty")
    spec = BenchSpec(shape=args.shape, n_list=tuple(args.n_list), m=args.m, reps=args.reps,
                     corr_list=tuple(args.corr_list), rank=args.rank, seed=_seed(args),
                     rho=args.rho, sigma2=args.sigma2, grid=args.grid,
                     max_outer=args.max_outer, tol=args.tol)
    rows = run_bench(spec, jobs=args.jobs)
    keys = ["n", "m", "corr", "bias2", "variance", "mse", "mse_se", "converged", "reps"]
    _write_table(args.out, keys, [[r[k] for k in keys] for r in rows])


COMMANDS = {
    "simulate": cmd_simulate, "fit": cmd_fit, "select-rank": cmd_select_rank,
    "select-lambda": cmd_select_lambda, "predict": cmd_predict, "inference": cmd_inference,
    "bench": cmd_bench,
}

RUNTIME_ERRORS = (DataError, FitError, OSError, ValueError, ArithmeticError,
                  np.linalg.LinAlgError, RuntimeError)


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        print("tensorgee: error: a subcommand is required", file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("tensorgee: error: a subcommand is required", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tensorgee {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"tensorgee {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0
