"""Command-line front end: ``twostep {fit,simulate,diagnose,lambda-max,predict}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import diagnostics, glasso, harness, mgb, refit
from .basis import make_bspline_basis, sobolev_penalty_matrix
from .data import DataLoadError, build_centered_design, load_csv

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _index_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_data_args(p, response_required=True):
    p.add_argument("data", help="CSV file: one response column and covariates in [0, 1]")
    p.add_argument("--response", required=response_required,
                   help="response column, as a header name or 0-based column index")
    p.add_argument("--rescale", action="store_true", help="min-max scale covariates into [0, 1] first")
    p.add_argument("--degree", type=int, default=3, help="first-step spline degree (default 3)")
    p.add_argument("--n-interior", type=int, default=4, help="first-step interior knots (default 4, so m = 7)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twostep", allow_abbrev=False,
                                     description="Sparse additive regression: group-Lasso selection and "
                                                 "penalized spline refitting.")
    parser.add_argument("--verbose", action="store_true", help="print resolved settings before running")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", allow_abbrev=False, help="fit a model and write it as JSON")
    _add_data_args(p)
    p.add_argument("--method", choices=["gl", "gl-sl", "gl-pl", "adaptive", "mgb"], default="gl-pl")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--lambda1", type=float, help="first-step penalty level (MGB: lambda1_tilde)")
    g.add_argument("--aic", action="store_true", help="choose the first-step level by AIC (default)")
    g2 = p.add_mutually_exclusive_group()
    g2.add_argument("--lambda2", type=float, help="refit roughness level for gl-pl")
    g2.add_argument("--gcv", action="store_true", help="choose the refit level by GCV (default)")
    p.add_argument("--mgb-lambda2", type=float, default=0.01, help="MGB smoothness weight lambda2_tilde")
    p.add_argument("--n-lambda", type=int, default=50, help="AIC grid size")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--strict", action="store_true", help="treat a non-converged fit as a failure")

    p = sub.add_parser("simulate", allow_abbrev=False, help="run a Monte Carlo experiment from a config file")
    p.add_argument("--config", required=True, help="JSON experiment config")
    p.add_argument("--out", required=True, help="report path; .json writes JSON, anything else CSV")
    p.add_argument("--workers", type=int, help="worker processes (overrides the config)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--replications", type=int, help="replication count (overrides the config)")

    p = sub.add_parser("diagnose", allow_abbrev=False, help="design-quality quantities of a dataset")
    _add_data_args(p)
    p.add_argument("--s", type=_index_list, default=[1], help="group sparsity levels for phi_max, e.g. 1,2")
    p.add_argument("--T", type=_index_list, help="covariate indices for phi_min and the restricted-eigenvalue cone")
    p.add_argument("--nu", type=int, default=2)
    p.add_argument("--budget", type=int, default=diagnostics.DEFAULT_BUDGET, help="subset enumeration budget")
    p.add_argument("--randomized", action="store_true", help="sample --budget subsets instead of enumerating all (lower bound)")
    p.add_argument("--restarts", type=int, default=10, help="random starts for the restricted eigenvalue search")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("lambda-max", allow_abbrev=False, help="smallest first-step level giving the empty model")
    _add_data_args(p)

    p = sub.add_parser("predict", allow_abbrev=False, help="predict with a saved model")
    p.add_argument("--model", required=True, help="model file written by fit")
    p.add_argument("data", help="CSV of covariate rows")
    p.add_argument("--response", help="column to drop before predicting, if present")
    p.add_argument("--rescaled", action="store_true", help="covariates are already in [0, 1]")
    p.add_argument("--out", help="write predictions here instead of standard output")
    return parser


def _load(args):
    ds = load_csv(args.data, args.response, rescale=args.rescale)
    return ds, make_bspline_basis(args.degree, args.n_interior, "even")


def _warn(msg: str) -> None:
    print(f"WARN {msg}")


def cmd_fit(args) -> int:
    if args.method == "mgb" and args.lambda1 is None:
        raise UsageError("--method mgb needs --lambda1 (no AIC rule is defined for it)")
    if args.lambda2 is not None and args.method != "gl-pl":
        raise UsageError("--lambda2 only applies to --method gl-pl")
    ds, basis = _load(args)
    design = build_centered_design(ds, basis)
    lam_max = glasso.lambda_max(design, ds.y)
    converged, kkt, objective = True, None, None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", glasso.ConvergenceWarning)
        if args.method == "mgb":
            prob = mgb.MgbProblem(design, sobolev_penalty_matrix(basis, 2), args.mgb_lambda2)
            f = prob.fit(ds.y, args.lambda1)
            converged, objective = f.converged, f.objective
            kkt = mgb.stationarity_residual(prob, ds.y, f)
            model = refit.from_group_fit(design, f.coefficients, f.intercept, "mgb", ds, f.fitted,
                                         {"lambda1_tilde": f.lambda1_tilde, "lambda2_tilde": f.lambda2_tilde})
            lam1 = f.lambda1_tilde
        elif args.method == "adaptive":
            if args.lambda1 is None:
                f = glasso.fit_adaptive_aic(design, ds.y, args.n_lambda)
            else:
                f = glasso.fit_adaptive(design, ds.y, args.lambda1, args.lambda1)
            converged, objective, kkt, lam1 = f.converged, f.objective, f.kkt_residual, f.lambda1
            model = refit.from_group_fit(design, f.coefficients, f.intercept, "adaptive", ds, f.fitted,
                                         {"lambda1_init": f.flags.get("lambda1_init")})
        else:
            if args.lambda1 is None:
                f, _ = glasso.fit_path_aic(design, ds.y, args.n_lambda)
            else:
                f = glasso.fit(design, ds.y, args.lambda1)
            converged, objective, kkt, lam1 = f.converged, f.objective, f.kkt_residual, f.lambda1
            T_hat = f.active_set
            if args.method == "gl":
                model = refit.from_group_fit(design, f.coefficients, f.intercept, "group_lasso", ds, f.fitted)
            elif args.method == "gl-sl":
                model = refit.fit_sieve(ds, T_hat, refit.FIRST_STEP_SPEC)
            elif args.lambda2 is not None:
                model = refit.fit_penalized(ds, T_hat, refit.BasisSpec(), args.lambda2)
            else:
                model = refit.fit_penalized_gcv(ds, T_hat, refit.BasisSpec())
    model.flags.update({"lambda1": lam1, "lambda_max": lam_max, "objective": objective,
                        "kkt_residual": kkt, "converged": converged})
    refit.save_model(model, args.out)

    print(f"method: {args.method}")
    print(f"lambda_max: {lam_max!r}")
    print(f"lambda1: {lam1!r}")
    if model.method == "penalized":
        print(f"lambda2: {model.lambda2!r}  gcv: {model.gcv!r}")
    print(f"active set: {list(model.active_set)}")
    print(f"objective: {objective!r}")
    print(f"KKT residual: {kkt!r}")
    print(f"model written to {args.out}")
    if not model.active_set:
        _warn("no covariate selected; the model is intercept-only")
    if not converged:
        _warn("first-step solver stopped at its iteration limit")
        if args.strict:
            print("error: non-converged fit under --strict", file=sys.stderr)
            return EXIT_RUNTIME
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = harness.load_config(args.config)
    override = {}
    for key in ("workers", "replications"):
        if getattr(args, key) is not None:
            override[key] = getattr(args, key)
    if override or args.seed is not None:
        scenario = cfg.scenario if args.seed is None else replace(cfg.scenario, seed=args.seed)
        try:
            cfg = replace(cfg, scenario=scenario, **override)
        except ValueError as exc:
            raise harness.ConfigError(str(exc)) from None
    if args.verbose:
        print(f"config: {cfg.to_dict()}")
    report = harness.run(cfg)
    fmt = "json" if str(args.out).lower().endswith(".json") else "csv"
    harness.write_report(report, args.out, fmt)
    print(harness.format_table(report))
    for f in report.failures:
        _warn(f"replication {f['replication']} (seed {f['seed']}) failed and was excluded")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    ds, basis = _load(args)
    design = build_centered_design(ds, basis)
    holds, dev = diagnostics.omega0_check(design)
    print(f"Omega0 holds: {str(holds).lower()}")
    print("per-group deviation: " + " ".join(f"{v:.6g}" for v in dev))
    for s in sorted(set(args.s)):
        try:
            phi = diagnostics.group_sparse_max_eigenvalue(design, s, budget=args.budget,
                                                          randomized=args.randomized, n_samples=args.budget,
                                                          seed=args.seed)
        except diagnostics.EnumerationBudgetError as exc:
            print(f"error: {exc} (pass --randomized or raise --budget)", file=sys.stderr)
            return EXIT_RUNTIME
        tag = "" if phi.exact else " (lower bound from sampled subsets)"
        print(f"phi_max({s}): {phi.value!r}{tag}")
    if args.T:
        T = sorted(set(args.T))
        bad = [j for j in T if not 0 <= j < ds.d]
        if bad:
            raise UsageError(f"--T indices {bad} out of range for {ds.d} covariates")
        print(f"phi_min({T}): {diagnostics.sparse_min_eigenvalue(design, T)!r}")
        kappa = diagnostics.restricted_eigenvalue_upper(design, T, restarts=args.restarts, seed=args.seed)
        print(f"kappa upper bound (cone constant 21, local search): {kappa!r}")
    if ds.d >= 2:
        print(f"delta(n={ds.n}, d={ds.d}, nu={args.nu}): {diagnostics.delta(ds.n, ds.d, args.nu)!r}")
    print(f"lambda_max: {glasso.lambda_max(design, ds.y)!r}")
    return EXIT_OK


def cmd_lambda_max(args) -> int:
    ds, basis = _load(args)
    print(repr(glasso.lambda_max(build_centered_design(ds, basis), ds.y)))
    return EXIT_OK


def _read_rows(path, drop):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataLoadError(f"{path}: empty file")
    header = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    keep = list(range(len(header) if header else len(rows[0])))
    if drop is not None:
        k = header.index(drop) if header and drop in header else int(drop)
        keep.remove(k)
    try:
        return np.array([[float(r[k]) for k in keep] for r in rows])
    except (ValueError, IndexError) as exc:
        raise DataLoadError(f"{path}: {exc}") from None


def cmd_predict(args) -> int:
    model = refit.load_model(args.model)
    z = _read_rows(args.data, args.response)
    yhat = refit.predict(model, z, rescaled=args.rescaled)
    lines = "\n".join(repr(float(v)) for v in yhat) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(lines)
    else:
        sys.stdout.write(lines)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "diagnose": cmd_diagnose,
            "lambda-max": cmd_lambda_max, "predict": cmd_predict}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, harness.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataLoadError, refit.ModelFileError, harness.ReplicationError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
