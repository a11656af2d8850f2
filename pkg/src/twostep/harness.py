"""Monte Carlo runner for the simulation designs.

Each replication draws data from a seed derived from the master seed, fits
the requested estimators and records ``(NV, FP, FN, squared error)``;
aggregation runs in replication order, so reports do not depend on the
number of worker processes.
"""

from __future__ import annotations

import csv
import json
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import glasso, mgb, refit
from .basis import make_bspline_basis, sobolev_penalty_matrix
from .data import MODEL_TERMS, SimulationScenario, build_centered_design, derive_seed, generate

CONFIG_VERSION = "1"
ESTIMATORS = ("GL", "GL-SL", "GL-PL", "ORACLE", "ADAPTIVE", "MGB-GRID")
REPORT_COLUMNS = ("estimator", "nv_mean", "nv_sd", "fp_mean", "fp_sd", "fn_mean", "fn_sd", "emse_mean", "emse_sd")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key."""


class ReplicationError(RuntimeError):
    def __init__(self, replication: int, seed: int, message: str):
        super().__init__(f"replication {replication} (seed {seed}) failed: {message}")
        self.replication = replication
        self.seed = seed


@dataclass(frozen=True)
class FirstStepOptions:
    degree: int = 3
    n_interior: int = 4
    n_lambda: int = 50
    ratio: float = 0.01
    tol: float = glasso.DEFAULT_TOL
    max_iter: int = glasso.DEFAULT_MAX_ITER


@dataclass(frozen=True)
class SecondStepOptions:
    degree: int = 3
    n_interior: int = 7
    placement: str = "quantile"
    nu: int = 2
    n_points: int = 30
    log_range: tuple[float, float] = (-4.0, 1.0)
    per_component: bool = False

    @property
    def spec(self) -> refit.BasisSpec:
        return refit.BasisSpec(self.degree, self.n_interior, self.placement, self.nu)


@dataclass(frozen=True)
class MgbOptions:
    lambda_checks: tuple[float, ...] = mgb.LAMBDA_CHECKS
    lambda2_tildes: tuple[float, ...] = mgb.LAMBDA2_TILDES
    tol: float = 1e-7
    max_iter: int = 10_000


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: SimulationScenario
    replications: int = 100
    estimators: tuple[str, ...] = ("GL", "GL-SL", "GL-PL", "ORACLE")
    first_step: FirstStepOptions = FirstStepOptions()
    second_step: SecondStepOptions = SecondStepOptions()
    mgb: MgbOptions = MgbOptions()
    workers: int = 1
    fail_tolerant: bool = False
    test_size: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications: must be >= 1")
        if not self.estimators:
            raise ConfigError("estimators: must be non-empty")
        unknown = sorted(set(self.estimators) - set(ESTIMATORS))
        if unknown:
            raise ConfigError(f"estimators: unknown {unknown}; expected a subset of {list(ESTIMATORS)}")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        if self.test_size < 0:
            raise ConfigError("test_size: must be >= 0")
        object.__setattr__(self, "estimators", tuple(e for e in ESTIMATORS if e in self.estimators))

    def to_dict(self) -> dict:
        out = {"version": CONFIG_VERSION, "scenario": asdict(self.scenario)}
        out.update({k: getattr(self, k) for k in ("replications", "workers", "fail_tolerant", "test_size")})
        out["estimators"] = list(self.estimators)
        for key in ("first_step", "second_step", "mgb"):
            out[key] = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(getattr(self, key)).items()}
        return out


# --- config parsing -----------------------------------------------------------

_TOP_KEYS = {"version", "scenario", "replications", "estimators", "first_step", "second_step", "mgb",
             "workers", "fail_tolerant", "test_size"}


def _typed(section: str, key: str, value, kind):
    where = f"{section}.{key}" if section else key
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if kind == "floats":
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                                  for v in value):
            raise ConfigError(f"{where}: expected a list of numbers, got {value!r}")
        return tuple(float(v) for v in value)
    raise AssertionError(kind)


def _section(payload: dict, name: str, cls, kinds: dict):
    raw = payload.get(name, {})
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    extra = sorted(set(raw) - set(kinds))
    if extra:
        raise ConfigError(f"{name}.{extra[0]}: unknown key")
    try:
        return cls(**{k: _typed(name, k, v, kinds[k]) for k, v in raw.items()})
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def config_from_dict(payload: dict) -> ExperimentConfig:
    """Validate a parsed config document; errors name the offending key."""
    if not isinstance(payload, dict):
        raise ConfigError("config: expected a JSON object")
    extra = sorted(set(payload) - _TOP_KEYS)
    if extra:
        raise ConfigError(f"{extra[0]}: unknown key")
    version = payload.get("version", CONFIG_VERSION)
    if str(version) != CONFIG_VERSION:
        raise ConfigError(f"version: unsupported {version!r}; expected {CONFIG_VERSION!r}")
    if "scenario" not in payload:
        raise ConfigError("scenario: required")
    scenario = _section(payload, "scenario", SimulationScenario,
                        {"model_id": str, "n": int, "d": int, "t": float, "noise_sd": float, "seed": int})
    first = _section(payload, "first_step", FirstStepOptions,
                     {"degree": int, "n_interior": int, "n_lambda": int, "ratio": float, "tol": float,
                      "max_iter": int})
    second = _section(payload, "second_step", SecondStepOptions,
                      {"degree": int, "n_interior": int, "placement": str, "nu": int, "n_points": int,
                       "log_range": "floats", "per_component": bool})
    if len(second.log_range) != 2:
        raise ConfigError("second_step.log_range: expected two numbers")
    if second.placement not in ("even", "quantile"):
        raise ConfigError("second_step.placement: expected 'even' or 'quantile'")
    opts = _section(payload, "mgb", MgbOptions,
                    {"lambda_checks": "floats", "lambda2_tildes": "floats", "tol": float, "max_iter": int})
    est = payload.get("estimators", list(ExperimentConfig.estimators))
    if not isinstance(est, list) or not all(isinstance(e, str) for e in est):
        raise ConfigError("estimators: expected a list of names")
    kw = {k: _typed("", k, payload[k], kind) for k, kind in
          (("replications", int), ("workers", int), ("fail_tolerant", bool), ("test_size", int)) if k in payload}
    return ExperimentConfig(scenario, estimators=tuple(est), first_step=first, second_step=second, mgb=opts, **kw)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON (line {exc.lineno}, column {exc.colno})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return config_from_dict(payload)


# --- one replication ----------------------------------------------------------

@dataclass
class ReplicationResult:
    index: int
    seed: int
    metrics: dict = field(default_factory=dict)     # estimator -> (nv, fp, fn, sq_error)
    mgb_rows: list = field(default_factory=list)    # list of mgb.GridRow
    test_error: dict = field(default_factory=dict)  # estimator -> out-of-sample squared error
    error: str | None = None


def _counts(selected, truth, mu_hat, mu):
    nv, fp, fn = mgb.selection_counts(selected, truth)
    return nv, fp, fn, float(np.mean((np.asarray(mu_hat) - mu) ** 2))


def run_replication(config: ExperimentConfig, index: int) -> ReplicationResult:
    """Generate replication ``index`` and evaluate every requested estimator on it."""
    seed = derive_seed(config.scenario.seed, index)
    out = ReplicationResult(index, seed)
    sc = config.scenario
    ds, truth = generate(SimulationScenario(sc.model_id, sc.n, sc.d, sc.t, sc.noise_sd, seed))
    T_star = truth.active_set
    fs = config.first_step
    basis = make_bspline_basis(fs.degree, fs.n_interior, "even")
    design = build_centered_design(ds, basis)
    est = set(config.estimators)
    first_spec = refit.BasisSpec(fs.degree, fs.n_interior, "even", config.second_step.nu)
    ss = config.second_step
    fits = {}

    if est & {"GL", "GL-SL", "GL-PL"}:
        gl, _ = glasso.fit_path_aic(design, ds.y, fs.n_lambda, fs.ratio, fs.tol, fs.max_iter)
        T_hat = gl.active_set
        out.metrics["GL"] = _counts(T_hat, T_star, gl.fitted, truth.mu)
        fits["GL"] = refit.from_group_fit(design, gl.coefficients, gl.intercept, "group_lasso", ds)
        if "GL-SL" in est:
            f = refit.fit_sieve(ds, T_hat, first_spec)
            out.metrics["GL-SL"] = _counts(T_hat, T_star, f.fitted, truth.mu)
            fits["GL-SL"] = f
        if "GL-PL" in est:
            f = refit.fit_penalized_gcv(ds, T_hat, ss.spec, ss.n_points, ss.log_range,
                                        per_component=ss.per_component)
            out.metrics["GL-PL"] = _counts(T_hat, T_star, f.fitted, truth.mu)
            fits["GL-PL"] = f
    if "ORACLE" in est:
        f = refit.fit_penalized_gcv(ds, T_star, ss.spec, ss.n_points, ss.log_range, per_component=ss.per_component)
        out.metrics["ORACLE"] = _counts(T_star, T_star, f.fitted, truth.mu)
        fits["ORACLE"] = f
    if "ADAPTIVE" in est:
        ad = glasso.fit_adaptive_aic(design, ds.y, fs.n_lambda, fs.ratio, fs.tol, fs.max_iter)
        out.metrics["ADAPTIVE"] = _counts(ad.active_set, T_star, ad.fitted, truth.mu)
        fits["ADAPTIVE"] = refit.from_group_fit(design, ad.coefficients, ad.intercept, "adaptive", ds)
    if "MGB-GRID" in est:
        pen = sobolev_penalty_matrix(basis, ss.nu)
        out.mgb_rows = mgb.grid_eval(design, pen, ds.y, truth, config.mgb.lambda_checks,
                                     config.mgb.lambda2_tildes, config.mgb.tol, config.mgb.max_iter)

    if config.test_size:
        test_ds, test_truth = generate(SimulationScenario(sc.model_id, config.test_size, sc.d, sc.t, sc.noise_sd,
                                                          derive_seed(seed, 1)))
        for name, f in fits.items():
            out.test_error[name] = float(np.mean((refit.predict(f, test_ds.z) - test_truth.mu) ** 2))
    return out


def _safe_replication(args) -> ReplicationResult:
    config, index = args
    try:
        return run_replication(config, index)
    except Exception as exc:  # recorded and re-raised by the fold unless fail_tolerant
        res = ReplicationResult(index, derive_seed(config.scenario.seed, index))
        res.error = f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=4)}"
        return res


# --- aggregation --------------------------------------------------------------

@dataclass(frozen=True)
class Summary:
    estimator: str
    nv_mean: float
    nv_sd: float
    fp_mean: float
    fp_sd: float
    fn_mean: float
    fn_sd: float
    emse_mean: float
    emse_sd: float

    def row(self) -> tuple:
        return tuple(getattr(self, c) for c in REPORT_COLUMNS)


def _sd(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else math.nan


def summarize(name: str, records) -> Summary:
    """Means and sample standard deviations of ``(nv, fp, fn, sq_error)`` records, in order."""
    arr = np.asarray(records, dtype=float).reshape(-1, 4)
    cols = [(float(arr[:, k].mean()), _sd(arr[:, k])) for k in range(4)]
    return Summary(name, *(v for pair in cols for v in pair))


@dataclass
class McReport:
    config: ExperimentConfig
    summaries: list[Summary]
    mgb_candidates: list[Summary] = field(default_factory=list)
    ideal_mgb: str | None = None
    per_replication: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    test_emse: dict = field(default_factory=dict)

    def summary(self, estimator: str) -> Summary:
        for s in self.summaries + self.mgb_candidates:
            if s.estimator == estimator:
                return s
        raise KeyError(estimator)

    def rows(self) -> list[Summary]:
        return self.summaries + self.mgb_candidates


def run(config: ExperimentConfig) -> McReport:
    """Run every replication and fold the results in replication order."""
    jobs = [(config, r) for r in range(config.replications)]
    if config.workers == 1:
        results = [_safe_replication(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_safe_replication, jobs, chunksize=1))
    return aggregate(config, results)


def aggregate(config: ExperimentConfig, results) -> McReport:
    results = sorted(results, key=lambda r: r.index)
    failures = [{"replication": r.index, "seed": r.seed, "error": r.error} for r in results if r.error]
    if failures and not config.fail_tolerant:
        f = failures[0]
        raise ReplicationError(f["replication"], f["seed"], f["error"].splitlines()[0])
    good = [r for r in results if not r.error]
    if not good:
        raise ReplicationError(failures[0]["replication"], failures[0]["seed"], "every replication failed")
    s_star = len(MODEL_TERMS[config.scenario.model_id])
    per_rep, summaries = [], []
    for r in good:
        for name, (nv, fp, fn, _) in r.metrics.items():
            if nv != fp + s_star - fn:
                raise AssertionError(f"NV identity violated in replication {r.index} for {name}")
        per_rep.append({"replication": r.index, "seed": r.seed,
                        "metrics": {k: list(v) for k, v in r.metrics.items()},
                        "mgb": [asdict(row) for row in r.mgb_rows]})
    for name in config.estimators:
        if name == "MGB-GRID":
            continue
        summaries.append(summarize(name, [r.metrics[name] for r in good]))
    candidates, ideal = [], None
    if "MGB-GRID" in config.estimators:
        labels = [row.label for row in good[0].mgb_rows]
        for k, label in enumerate(labels):
            recs = [(row.nv, row.fp, row.fn, row.sq_error) for row in (r.mgb_rows[k] for r in good)]
            candidates.append(summarize(label, recs))
        best = min(candidates, key=lambda s: s.emse_mean)   # first minimum in grid order
        ideal = best.estimator
        summaries.append(Summary("MGB-GRID", *best.row()[1:]))
    test = {}
    if config.test_size:
        for name in good[0].test_error:
            vals = [r.test_error[name] for r in good]
            test[name] = {"mean": float(np.mean(vals)), "sd": _sd(vals)}
    return McReport(config, summaries, candidates, ideal, per_rep, failures, test)


# --- output -------------------------------------------------------------------

def _json_float(x):
    return None if isinstance(x, float) and math.isnan(x) else x


def report_to_dict(report: McReport) -> dict:
    return {
        "config": report.config.to_dict(),
        "columns": list(REPORT_COLUMNS),
        "estimators": [dict(zip(REPORT_COLUMNS, map(_json_float, s.row()))) for s in report.summaries],
        "mgb_candidates": [dict(zip(REPORT_COLUMNS, map(_json_float, s.row()))) for s in report.mgb_candidates],
        "ideal_mgb": report.ideal_mgb,
        "failures": report.failures,
        "test_emse": {k: {kk: _json_float(vv) for kk, vv in v.items()} for k, v in report.test_emse.items()},
        "per_replication": report.per_replication,
    }


def write_report(report: McReport, path, format: str = "csv") -> None:
    """Write the aggregate table as CSV (nine columns) or the full report as JSON."""
    if format == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report_to_dict(report), fh, indent=2)
            fh.write("\n")
    elif format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for s in report.rows():
                w.writerow([s.estimator] + [repr(float(v)) for v in s.row()[1:]])
    else:
        raise ValueError(f"unknown report format {format!r}; expected 'csv' or 'json'")


def format_table(report: McReport) -> str:
    """Fixed-width text rendering of the aggregate table."""
    head = f"{'estimator':<28}" + "".join(f"{c:>10}" for c in REPORT_COLUMNS[1:])
    lines = [head]
    for s in report.rows():
        lines.append(f"{s.estimator:<28}" + "".join(f"{v:>10.4f}" for v in s.row()[1:]))
    if report.ideal_mgb:
        lines.append(f"ideal MGB candidate: {report.ideal_mgb}")
    return "\n".join(lines)
