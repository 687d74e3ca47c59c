"""Command-line entry point: ``nss-ortho <subcommand> [options]``.

Every run writes ``config.json`` (the effective configuration, deterministic)
and ``metadata.json`` (timestamp and version) next to its outputs.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import datetime as dt
import json
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from ._io import to_jsonable, write_csv, write_json
from .changepoint import dp_segment, elbow_select, read_matrix_csv, standardize
from .core import TENOR_YEARS, DomainError, MaturityGrid, NssParams, design_matrix, us_grid
from .covariance import WeakIdentificationError, beta_cov_delta, full_covariance, nonlinear_sensitivities
from .gram import continuous_basis, discrete_r44_refinement, gram_matrix
from .identifiability import rank_analysis
from .ortho import thin_qr_positive
from .profiles import confidence_interval, conditional_profiles, full_profile, landscape_2d
from .regularization import gcv_select, shrinkage_comparison
from .synthetic import (
    BASELINE_BETA,
    TABLE1_HEADER,
    basis_curves,
    condition_map,
    r44_sweep,
    regime_curves,
    synthetic_history,
    table1_report,
    table1_rows_for_csv,
    write_columns,
)
from .timeseries import ConfigError, ParseError, PipelineConfig, load_history, parse_tenors, run_daily, write_outputs
from .varpro import LambdaBox, OptimizationError, fit_global

log = logging.getLogger("nss_ortho")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_FIT = 2


class UsageError(Exception):
    pass


class FitFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _pair(text: str) -> tuple[float, float]:
    vals = [float(v) for v in text.split(",")]
    if len(vals) != 2:
        raise argparse.ArgumentTypeError("expected two comma-separated numbers")
    return vals[0], vals[1]


def _box(text: str) -> LambdaBox:
    try:
        return LambdaBox.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0.0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _common(p: argparse.ArgumentParser, *, sigma=True, box=False, model=False, seed=False) -> None:
    p.add_argument("--output-dir", default="out", help="directory for output files (default: out)")
    if sigma:
        p.add_argument("--sigma", type=_positive, default=5e-5, help="noise standard deviation, decimal (default 5e-5)")
        p.add_argument("--delta", type=_positive, default=None, help="R44 rule tolerance (default 10*sigma)")
    if box:
        p.add_argument("--lambda-box", type=_box, default=LambdaBox(), metavar="LO1,LO2,HI1,HI2",
                       help="decay-rate search box (default 0.02,0.02,5,5)")
    if model:
        p.add_argument("--model", choices=("ns", "nss", "auto"), default="auto",
                       help="ns forces p=3, nss forces p=4, auto applies the R44 rule")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nss-ortho", description="Orthogonal NSS yield-curve toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit one curve")
    _common(p, box=True, model=True)
    p.add_argument("--input", help="CSV with columns tenor,yield (yield in percent)")
    p.add_argument("--tenors", help="inline tenor labels, e.g. 3M,1Y,10Y")
    p.add_argument("--yields", help="inline yields in percent matching --tenors")

    p = sub.add_parser("table1", help="conditioning table for lambda_2 in {0.2, 0.4, 0.55, 0.59}")
    _common(p)

    p = sub.add_parser("sweeps", help="R44/kappa sweep, condition map, basis and regime curves")
    _common(p, sigma=False)
    p.add_argument("--lambda1", type=_positive, default=0.6)
    p.add_argument("--points", type=int, default=200, help="sweep resolution")

    p = sub.add_parser("profiles", help="conditional (and optionally full) profile likelihoods")
    _common(p, box=True, seed=True)
    p.add_argument("--lambda", dest="lam", type=_pair, action="append",
                   help="fixed decay rates l1,l2 (repeatable; default 0.6,0.2 and 0.6,0.59)")
    p.add_argument("--full", action="store_true", help="also compute full profiles of beta4 and gamma4")
    p.add_argument("--full-lambda", type=_pair, default=(0.6, 0.55))

    p = sub.add_parser("landscape", help="2-D dNLL landscapes over (beta3, beta4) and (gamma3, gamma4)")
    _common(p, seed=True)
    p.add_argument("--lambda", dest="lam", type=_pair, default=(0.6, 0.4))

    p = sub.add_parser("gram", help="closed-form Gram matrix and continuous orthonormal basis")
    _common(p, sigma=False)
    p.add_argument("--lambda", dest="lam", type=_pair, default=(0.6, 0.3))
    p.add_argument("--horizon", type=_positive, default=30.0, help="integration horizon T in years")

    p = sub.add_parser("treasury", help="daily calibration of a dated yield history")
    _common(p, box=True, model=True, seed=True)
    p.set_defaults(model="nss")
    p.add_argument("--input", help="dated yield CSV (percent); omit with --synthetic-days")
    p.add_argument("--tenors", help="comma-separated tenor selection")
    p.add_argument("--from", dest="start", type=_date)
    p.add_argument("--to", dest="end", type=_date)
    p.add_argument("--synthetic-days", type=int, default=0, help="generate a synthetic history instead of reading one")
    p.add_argument("--kmax", type=int, default=12, help="changepoint truncation for the monthly histories")

    p = sub.add_parser("changepoint", help="exact DP segmentation of a T x d CSV")
    _common(p, sigma=False)
    p.add_argument("--input", required=True)
    p.add_argument("--kmax", type=int, default=12)
    p.add_argument("--no-standardize", action="store_true", help="segment raw columns")

    p = sub.add_parser("ridge", help="GCV and standard-vs-orthogonal ridge Monte Carlo")
    _common(p, seed=True)
    p.add_argument("--lambda", dest="lam", type=_pair, default=(0.6, 0.59))
    p.add_argument("--trials", type=int, default=500)
    return parser


# ------------------------------------------------------------------ helpers


def _read_curve(args) -> tuple[MaturityGrid, np.ndarray]:
    pairs: list[tuple[float, float]] = []
    if args.input:
        path = Path(args.input)
        with path.open(newline="", encoding="utf-8-sig") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise UsageError(f"{path}: empty file")
        start = 1 if rows[0] and rows[0][0].strip().lower() == "tenor" else 0
        for line, rec in enumerate(rows[start:], start=start + 1):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != 2:
                raise UsageError(f"{path}: line {line}: expected 2 fields, got {len(rec)}")
            pairs.append((_tenor_years(rec[0], line), _yield(rec[1], line)))
    elif args.tenors and args.yields:
        tenors = args.tenors.split(",")
        ys = args.yields.split(",")
        if len(tenors) != len(ys):
            raise UsageError("--tenors and --yields differ in length")
        pairs = [(_tenor_years(t, None), _yield(v, None)) for t, v in zip(tenors, ys)]
    else:
        raise UsageError("fit needs --input or both --tenors and --yields")
    pairs.sort()
    if len(pairs) < 5:
        raise UsageError(f"need at least 5 maturities, got {len(pairs)}")
    try:
        grid = MaturityGrid(tuple(p[0] for p in pairs))
    except DomainError as exc:
        raise UsageError(str(exc)) from None
    return grid, np.array([p[1] for p in pairs])


def _where(line) -> str:
    return f"line {line}: " if line is not None else ""


def _tenor_years(text: str, line) -> float:
    t = text.strip().upper()
    if t in TENOR_YEARS:
        return TENOR_YEARS[t]
    try:
        v = float(t)
    except ValueError:
        raise UsageError(f"{_where(line)}unknown tenor {text!r}") from None
    if not v > 0 or not math.isfinite(v):
        raise UsageError(f"{_where(line)}maturity must be > 0")
    return v


def _yield(text: str, line) -> float:
    try:
        v = float(text)
    except ValueError:
        raise UsageError(f"{_where(line)}bad yield {text!r}") from None
    if not math.isfinite(v):
        raise UsageError(f"{_where(line)}non-finite yield")
    return v / 100.0


def _config_dict(args) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "verbose"):
            continue
        if isinstance(v, LambdaBox):
            v = {"lo": list(v.lo), "hi": list(v.hi)}
        elif isinstance(v, dt.date):
            v = v.isoformat()
        out[k] = v
    return out


def _write_run_files(out: Path, args) -> None:
    write_json(out / "config.json", _config_dict(args))
    write_json(out / "metadata.json", {
        "version": __version__,
        "timestamp": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
        "numpy": np.__version__,
    })


# ---------------------------------------------------------------- commands


def cmd_fit(args, out: Path) -> int:
    grid, y = _read_curve(args)
    try:
        fit = fit_global(grid, y, args.lambda_box, args.sigma, args.delta, model=args.model)
    except (OptimizationError, np.linalg.LinAlgError, ValueError) as exc:
        raise FitFailure(str(exc)) from exc
    inner = fit.inner
    report = {
        "maturities": list(grid.taus),
        "lambda": fit.lam,
        "objective": fit.objective,
        "p": inner.p,
        "gamma": inner.gamma,
        "beta": inner.beta,
        "r44": inner.r44,
        "kappa": inner.kappa,
        "rmse_bp": math.sqrt(inner.rss / grid.m) * 1e4,
        "iterations": fit.iterations,
    }
    try:
        g = nonlinear_sensitivities(fit.lam, inner.gamma, grid)
        joint = full_covariance(inner.fact, g, args.sigma)
        report["covariance"] = {
            "gamma": joint.cov_gamma,
            "lambda": joint.cov_lambda,
            "cross": joint.cross,
            "beta_delta": beta_cov_delta(inner.fact, fit.lam, inner.beta, joint, grid=grid).cov_beta,
        }
    except (WeakIdentificationError, ValueError, np.linalg.LinAlgError) as exc:
        report["covariance"] = {"error": str(exc)}
    report["identifiability"] = rank_analysis(NssParams(inner.beta, fit.lam), grid).to_dict()
    write_json(out / "fit.json", report)
    print(json.dumps(to_jsonable({k: report[k] for k in ("lambda", "objective", "p", "beta", "gamma", "r44")})))
    return EXIT_OK


def cmd_table1(args, out: Path) -> int:
    rows = table1_report(args.sigma)
    write_csv(out / "table1.csv", TABLE1_HEADER, table1_rows_for_csv(rows))
    for r in rows:
        print(f"{r.label:16s} kappa={r.kappa:8.1f} |R44|={r.r44:.4f} "
              f"std(beta)=[{' '.join(f'{v:.2e}' for v in r.std_beta)}] max|corr|={r.max_abs_corr:.4f}")
    return EXIT_OK


def cmd_sweeps(args, out: Path) -> int:
    l1 = args.lambda1
    l2 = np.linspace(0.02, 1.5, args.points)
    l2 = l2[l2 != l1]
    write_csv(out / "r44_sweep.csv", ("lambda2", "r44", "kappa"), r44_sweep(l1, l2))
    axis = np.round(np.linspace(0.05, 2.0, 40), 10)
    cmap = condition_map(axis, axis + 0.0125)
    rows = [(a, b, cmap[i, j]) for i, a in enumerate(axis) for j, b in enumerate(axis + 0.0125)]
    write_csv(out / "condition_map.csv", ("lambda1", "lambda2", "log10_kappa"), rows)
    for lam in ((0.6, 0.2), (0.6, 0.59)):
        write_columns(out / f"basis_curves_{lam[0]}_{lam[1]}.csv", basis_curves(lam))
    write_columns(out / "regime_curves.csv", regime_curves())
    return EXIT_OK


def _synthetic_curve(lam, sigma, seed):
    grid = us_grid()
    params = NssParams(BASELINE_BETA, lam)
    rng = np.random.default_rng(seed)
    y = design_matrix(grid, lam).values @ params.beta_array + sigma * rng.standard_normal(grid.m)
    return grid, y


def cmd_profiles(args, out: Path) -> int:
    cases = args.lam or [(0.6, 0.2), (0.6, 0.59)]
    rows = []
    for lam in cases:
        grid, y = _synthetic_curve(lam, args.sigma, args.seed)
        tag = f"{lam[0]}_{lam[1]}"
        for c in conditional_profiles(grid, lam, y, args.sigma):
            c.to_csv(out / f"profile_{tag}_{c.param}.csv")
            ci = confidence_interval(c)
            rows.append((tag, c.param, "conditional", c.mle, c.profile_std, ci.lower, ci.upper, ci.unbounded))
    if args.full:
        lam = args.full_lambda
        grid, y = _synthetic_curve(lam, args.sigma, args.seed)
        tag = f"{lam[0]}_{lam[1]}"
        for param in ("beta4", "gamma4"):
            c = full_profile(param, grid, y, args.sigma, box=args.lambda_box)
            c.to_csv(out / f"full_profile_{tag}_{param}.csv")
            ci = confidence_interval(c)
            rows.append((tag, param, "full", c.mle, None, ci.lower, ci.upper, ci.unbounded))
    write_csv(out / "intervals.csv", ("lambda", "param", "kind", "mle", "profile_std", "lower95", "upper95", "unbounded"), rows)
    return EXIT_OK


def cmd_landscape(args, out: Path) -> int:
    grid, y = _synthetic_curve(args.lam, args.sigma, args.seed)
    fact = thin_qr_positive(design_matrix(grid, args.lam))
    for pair in ("beta", "gamma"):
        ls = landscape_2d(pair, fact, y, args.sigma)
        ls.to_csv(out / f"landscape_{pair}.csv")
        ls.paths_to_csv(out / f"landscape_{pair}_paths.csv")
    return EXIT_OK


def cmd_gram(args, out: Path) -> int:
    gm = gram_matrix(args.lam, args.horizon)
    cb = continuous_basis(args.lam, args.horizon)
    sizes = (25, 50, 100, 200, 400, 800)
    disc = discrete_r44_refinement(args.lam, args.horizon, sizes)
    write_json(out / "gram.json", {
        "lambda": list(args.lam),
        "horizon": args.horizon,
        "gram": gm.g,
        "cholesky": cb.l,
        "pivots": cb.pivots,
        "degenerate": cb.degenerate,
        "r44_continuous": cb.r44,
        "r44_discrete": {str(n): v for n, v in zip(sizes, disc)},
    })
    print(f"continuous R44 = {cb.r44:.6g}; discrete refinement -> {disc[-1]:.6g}")
    return EXIT_OK


def _changepoint_outputs(out: Path, name: str, labels, x: np.ndarray, kmax: int, do_std: bool) -> dict:
    z = standardize(x) if do_std else x
    kmax = min(kmax, z.shape[0] - 1)
    res = dp_segment(z, kmax)
    res.to_csv(out / f"changepoints_{name}.csv", labels)
    k_star = elbow_select(res.cost_path) if kmax >= 2 else kmax
    return {
        "k_star": k_star,
        "sse_at_k_star": float(res.cost_path[k_star]),
        "breaks": [labels[b] for b in res.breakpoints[k_star]],
        "kmax": kmax,
        "standardized": do_std,
    }


def cmd_treasury(args, out: Path) -> int:
    if args.input:
        tenors = parse_tenors(args.tenors) if args.tenors else None
        hist = load_history(args.input, tenors, complete_case=True, start=args.start, end=args.end)
    elif args.synthetic_days > 0:
        hist = synthetic_history(args.synthetic_days, args.seed, args.sigma)
    else:
        raise UsageError("treasury needs --input or --synthetic-days")
    if len(hist) == 0:
        raise UsageError("no complete rows in the selected window")
    log.info("%d daily curves on tenors %s", len(hist), ",".join(hist.tenors))
    cfg = PipelineConfig(box=args.lambda_box, sigma=args.sigma, delta=args.delta, model=args.model)
    records = run_daily(hist, cfg, progress_every=500)
    write_outputs(records, out, hist.tenors)
    ok = [r for r in records if r.ok]
    summary = {"n_days": len(hist), "n_ok": len(ok), "tenors": list(hist.tenors)}
    if ok:
        from .timeseries import monthly_downsample

        mh = monthly_downsample(records)
        if len(mh.months) >= 3:
            summary["changepoint_beta"] = _changepoint_outputs(out, "beta", mh.months, mh.beta, args.kmax, True)
            summary["changepoint_gamma"] = _changepoint_outputs(out, "gamma", mh.months, mh.gamma, args.kmax, True)
    write_json(out / "summary.json", summary)
    print(f"fitted {len(ok)}/{len(hist)} days")
    return EXIT_OK if ok else EXIT_FIT


def cmd_changepoint(args, out: Path) -> int:
    try:
        _, labels, x = read_matrix_csv(args.input)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if x.shape[0] < 2:
        raise UsageError("need at least 2 rows")
    if args.kmax >= x.shape[0] or args.kmax < 0:
        raise UsageError(f"--kmax must be in 0..{x.shape[0] - 1}")
    sel = _changepoint_outputs(out, "series", labels, x, args.kmax, not args.no_standardize)
    write_json(out / "selection.json", sel)
    print(f"k* = {sel['k_star']}; breaks at {', '.join(sel['breaks'])}")
    return EXIT_OK


def cmd_ridge(args, out: Path) -> int:
    grid, y = _synthetic_curve(args.lam, args.sigma, args.seed)
    phi = design_matrix(grid, args.lam)
    a_star, alphas, scores = gcv_select(phi, y)
    write_csv(out / "gcv.csv", ("alpha", "gcv"), zip(alphas, scores))
    tab = shrinkage_comparison(phi, BASELINE_BETA, args.sigma, n_trials=args.trials, seed=args.seed)
    tab.to_csv(out / "shrinkage.csv")
    print(f"GCV alpha* = {a_star:.3g}; min MSE standard {tab.best_standard[1]:.3g} "
          f"vs orthogonal {tab.best_orthogonal[1]:.3g}")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "table1": cmd_table1,
    "sweeps": cmd_sweeps,
    "profiles": cmd_profiles,
    "landscape": cmd_landscape,
    "gram": cmd_gram,
    "treasury": cmd_treasury,
    "changepoint": cmd_changepoint,
    "ridge": cmd_ridge,
}


def _thread_limit():
    n = os.environ.get("NSS_ORTHO_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(n)))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.output_dir)
    if args.command in ("fit", "treasury", "changepoint") and getattr(args, "input", None):
        if not Path(args.input).is_file():
            print(f"nss-ortho: error: input file not found: {args.input}", file=sys.stderr)
            return EXIT_INPUT
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_run_files(out, args)
        with _thread_limit():
            return COMMANDS[args.command](args, out)
    except FitFailure as exc:
        print(f"nss-ortho: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (UsageError, ParseError, ConfigError, DomainError, OSError) as exc:
        print(f"nss-ortho: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
