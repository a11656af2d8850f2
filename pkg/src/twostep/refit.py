"""Second-step estimators on a selected set of covariates.

``fit_penalized`` solves

    min  (1/2n) ||y - ybar - B theta||^2 + sum_j lambda2^2 theta_j^T Omega_j theta_j

over centered spline blocks ``B_j`` (one per selected covariate), so every
fitted component has zero training mean. ``fit_sieve`` is the same problem
without the roughness term.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ._linalg import sym_sqrt_and_pinv
from .basis import SplineBasis, make_bspline_basis, sobolev_penalty_matrix
from .data import Dataset, Rescale

MODEL_VERSION = "1"


class ModelFileError(ValueError):
    """Unreadable, corrupted or wrong-version model file."""


@dataclass(frozen=True)
class BasisSpec:
    """How to build the per-component basis of a refit."""

    degree: int = 3
    n_interior: int = 7
    placement: str = "quantile"
    nu: int = 2

    def build(self, column) -> SplineBasis:
        return make_bspline_basis(self.degree, self.n_interior, self.placement,
                                  column if self.placement == "quantile" else None)


FIRST_STEP_SPEC = BasisSpec(degree=3, n_interior=4, placement="even", nu=2)


@dataclass
class Component:
    basis: SplineBasis
    column_means: np.ndarray
    coefficients: np.ndarray

    def __call__(self, z) -> np.ndarray:
        return (self.basis(z) - self.column_means) @ self.coefficients


@dataclass
class AdditiveFit:
    """Intercept plus centered spline components, indexed by covariate."""

    intercept: float
    components: dict[int, Component]
    lambda2: float = 0.0
    gcv: float | None = None
    method: str = "penalized"
    d: int | None = None
    rescale: Rescale | None = None
    fitted: np.ndarray | None = field(default=None, repr=False)
    flags: dict = field(default_factory=dict)

    @property
    def active_set(self) -> tuple[int, ...]:
        return tuple(sorted(self.components))

    def roughness(self, nu: int = 2) -> float:
        """Total ``sum_j theta_j^T Omega_j theta_j``."""
        return float(sum(sobolev_penalty_matrix(c.basis, nu).quadratic_form(c.coefficients)
                         for c in self.components.values()))


@dataclass(frozen=True)
class InfluenceSummary:
    trace_H: float
    rss: float


@dataclass
class _System:
    """Normal-equation pieces shared by every smoothing level on one selected set."""

    T: tuple[int, ...]
    bases: list
    means: list
    B: np.ndarray
    omegas: list
    roots: list            # symmetric square roots of the omegas
    sizes: list
    gram: np.ndarray       # B^T B / n
    rhs: np.ndarray        # B^T (y - ybar) / n
    y: np.ndarray
    y_bar: float

    @property
    def n(self) -> int:
        return self.B.shape[0]

    def _levels(self, lam2) -> np.ndarray:
        return np.broadcast_to(np.asarray(lam2, dtype=float), (len(self.T),))

    def penalty(self, lam2) -> np.ndarray:
        return linalg.block_diag(*[l * l * om for l, om in zip(self._levels(lam2), self.omegas)])

    def solve(self, lam2) -> tuple[np.ndarray, float, bool]:
        """Return ``(theta, tr H, full_rank)`` for ``(B^T B/n + 2P) theta = B^T (y - ybar)/n``.

        Solved as the stacked least-squares problem
        ``[B / sqrt(n); sqrt(2) P^{1/2}] theta ~ [(y - ybar) / sqrt(n); 0]`` by SVD,
        which squares away the conditioning of the normal matrix and gives the
        minimum-norm solution when it is singular. ``tr H`` includes the
        intercept.
        """
        n = self.n
        root = linalg.block_diag(*[l * r for l, r in zip(self._levels(lam2), self.roots)])
        stacked = np.vstack([self.B / math.sqrt(n), math.sqrt(2.0) * root])
        target = np.concatenate([(self.y - self.y_bar) / math.sqrt(n), np.zeros(root.shape[0])])
        u, sv, vt = np.linalg.svd(stacked, full_matrices=False)
        keep = sv > sv[0] * max(stacked.shape) * np.finfo(float).eps if sv.size and sv[0] > 0 else sv > 0
        theta = vt[keep].T @ ((u[:, keep].T @ target) / sv[keep])
        trace = float((u[:n, keep] ** 2).sum()) + 1.0
        return theta, trace, bool(keep.all())


def _system(dataset: Dataset, T_hat, spec: BasisSpec) -> _System:
    T = tuple(sorted(int(j) for j in T_hat))
    for j in T:
        if not 0 <= j < dataset.d:
            raise ValueError(f"covariate index {j} outside 0..{dataset.d - 1}")
    bases, means, blocks, omegas = [], [], [], []
    for j in T:
        b = spec.build(dataset.z[:, j])
        x = b(dataset.z[:, j])
        mu = x.mean(axis=0)
        bases.append(b)
        means.append(mu)
        blocks.append(x - mu)
        omegas.append(sobolev_penalty_matrix(b, spec.nu).omega)
    roots = [sym_sqrt_and_pinv(om)[0] for om in omegas]
    n = dataset.n
    B = np.concatenate(blocks, axis=1) if blocks else np.zeros((n, 0))
    y_bar = float(dataset.y.mean())
    yc = dataset.y - y_bar
    return _System(T, bases, means, B, omegas, roots, [bb.m for bb in bases], B.T @ B / n, B.T @ yc / n,
                   dataset.y, y_bar)


def _assemble(sys: _System, theta, lam2, method, dataset, gcv=None, flags=None) -> AdditiveFit:
    comps = {}
    start = 0
    for j, b, mu, size in zip(sys.T, sys.bases, sys.means, sys.sizes):
        comps[j] = Component(b, mu, theta[start:start + size].copy())
        start += size
    fitted = sys.y_bar + sys.B @ theta
    return AdditiveFit(sys.y_bar, comps, float(np.max(lam2)) if np.ndim(lam2) else float(lam2),
                       gcv, method, dataset.d, dataset.rescale, fitted, dict(flags or {}))


def _intercept_only(dataset: Dataset, method: str) -> AdditiveFit:
    y_bar = float(dataset.y.mean())
    return AdditiveFit(y_bar, {}, 0.0, None, method, dataset.d, dataset.rescale,
                       np.full(dataset.n, y_bar), {"empty_selection": True})


def fit_penalized(dataset: Dataset, T_hat, basis_spec: BasisSpec = BasisSpec(), lambda2: float = 0.1,
                  method: str = "penalized") -> AdditiveFit:
    """Roughness-penalized least squares at a fixed shared ``lambda2``.

    An empty selection gives an intercept-only fit flagged ``empty_selection``;
    a singular system is solved in the minimum-norm sense and flagged
    ``min_norm``.
    """
    if np.any(np.asarray(lambda2) < 0):
        raise ValueError("lambda2 must be >= 0")
    if len(T_hat) == 0:
        return _intercept_only(dataset, method)
    sys = _system(dataset, T_hat, basis_spec)
    theta, _, full_rank = sys.solve(lambda2)
    flags = {} if full_rank else {"min_norm": True}
    if np.ndim(lambda2):
        flags["lambda2_per_component"] = dict(zip(sys.T, np.asarray(lambda2, dtype=float).tolist()))
    return _assemble(sys, theta, lambda2, method, dataset, flags=flags)


def fit_sieve(dataset: Dataset, T_hat, basis_spec: BasisSpec = BasisSpec()) -> AdditiveFit:
    """Unpenalized least squares on the centered blocks of the selected covariates."""
    return fit_penalized(dataset, T_hat, basis_spec, 0.0, method="sieve")


def normal_equation_residual(dataset: Dataset, fit: AdditiveFit, basis_spec: BasisSpec = BasisSpec()) -> float:
    """``||(B^T B/n + 2P) theta - B^T (y - ybar)/n||`` for a penalized fit (rebuilds its system)."""
    sys = _system(dataset, fit.active_set, basis_spec)
    lam2 = fit.flags.get("lambda2_per_component")
    lam2 = [lam2[j] for j in sys.T] if lam2 else fit.lambda2
    theta = np.concatenate([fit.components[j].coefficients for j in sys.T])
    a = sys.gram + 2.0 * sys.penalty(lam2)
    return float(np.linalg.norm(a @ theta - sys.rhs))


def influence(dataset: Dataset, T_hat, basis_spec: BasisSpec, lambda2) -> InfluenceSummary:
    """Effective degrees of freedom (intercept included) and RSS at ``lambda2``."""
    sys = _system(dataset, T_hat, basis_spec)
    theta, tr, _ = sys.solve(lambda2)
    r = sys.y - sys.y_bar - sys.B @ theta
    return InfluenceSummary(tr, float(r @ r))


def default_lambda2_grid(n: int, nu: int = 2, n_points: int = 30, log_range=(-4.0, 1.0)) -> np.ndarray:
    """Log-spaced ``lambda2`` values over ``10**log_range`` times ``n^(-nu/(2nu+1))``."""
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    lo, hi = log_range
    return np.logspace(lo, hi, n_points) * n ** (-nu / (2 * nu + 1))


def _gcv(sys: _System, lam2):
    theta, tr, _ = sys.solve(lam2)
    r = sys.y - sys.y_bar - sys.B @ theta
    rss = float(r @ r)
    n = sys.n
    if tr >= n:
        return None, theta, tr, rss
    return n * rss / (n - tr) ** 2, theta, tr, rss


def fit_penalized_gcv(dataset: Dataset, T_hat, basis_spec: BasisSpec = BasisSpec(), n_points: int = 30,
                      log_range=(-4.0, 1.0), grid=None, per_component: bool = False,
                      max_rounds: int = 5) -> AdditiveFit:
    """Choose ``lambda2`` by GCV on a log grid and refit there.

    ``GCV = n RSS / (n - tr H)^2`` with the intercept counted in ``tr H``.
    Ties go to the larger ``lambda2``. With ``per_component`` each
    component's level is then improved in turn over the same grid, starting
    from the shared optimum, for at most ``max_rounds`` passes.
    """
    if len(T_hat) == 0:
        return _intercept_only(dataset, "penalized")
    sys = _system(dataset, T_hat, basis_spec)
    if grid is None:
        grid = default_lambda2_grid(dataset.n, basis_spec.nu, n_points, log_range)
    grid = np.sort(np.asarray(grid, dtype=float))[::-1]
    best = None
    skipped = 0
    for lam in grid:
        score, theta, tr, _ = _gcv(sys, lam)
        if score is None:
            skipped += 1
            continue
        if best is None or score < best[0]:
            best = (score, float(lam), theta, tr)
    if best is None:
        raise ValueError("every grid point has tr(H) >= n")
    if skipped:
        warnings.warn(f"{skipped} GCV grid point(s) skipped with tr(H) >= n", stacklevel=2)
    score, lam, theta, tr = best
    flags = {"trace_H": tr}
    if not per_component or len(sys.T) == 1:
        return _assemble(sys, theta, lam, "penalized", dataset, gcv=score, flags=flags)

    levels = np.full(len(sys.T), lam)
    for _ in range(max_rounds):
        changed = False
        for k in range(len(sys.T)):
            for cand in grid:
                trial = levels.copy()
                trial[k] = cand
                s, th, tr2, _ = _gcv(sys, trial)
                if s is not None and s < score:
                    score, theta, levels, tr, changed = s, th, trial, tr2, True
        if not changed:
            break
    flags = {"trace_H": tr, "lambda2_per_component": dict(zip(sys.T, levels.tolist()))}
    return _assemble(sys, theta, levels, "penalized", dataset, gcv=score, flags=flags)


# --- prediction and persistence ----------------------------------------------

def predict(fit: AdditiveFit, z_new, rescaled: bool = False) -> np.ndarray:
    """Mean response at new covariate rows.

    Raw covariates are mapped through the stored rescale map first unless
    ``rescaled`` says they are already in [0, 1].
    """
    z = np.atleast_2d(np.asarray(z_new, dtype=float))
    if fit.d is not None and z.shape[1] != fit.d:
        raise ValueError(f"expected {fit.d} covariate columns, got {z.shape[1]}")
    if fit.rescale is not None and not rescaled:
        z = fit.rescale.apply(z)
    bad = np.argwhere(~((z >= 0.0) & (z <= 1.0)))
    if bad.size:
        listed = ", ".join(f"({i}, {j})={z[i, j]:.6g}" for i, j in bad[:10])
        raise ValueError(f"{len(bad)} covariate value(s) outside [0, 1]: {listed}")
    out = np.full(z.shape[0], fit.intercept)
    for j, comp in fit.components.items():
        out += comp(z[:, j])
    return out


def _to_jsonable(value):
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else repr(v)
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def fit_to_dict(fit: AdditiveFit) -> dict:
    return {
        "version": MODEL_VERSION,
        "intercept": fit.intercept,
        "lambda2": fit.lambda2,
        "gcv": fit.gcv,
        "method": fit.method,
        "d": fit.d,
        "components": [
            {"index": j, "degree": c.basis.degree, "knots": list(c.basis.interior_knots),
             "column_means": c.column_means.tolist(), "coefficients": c.coefficients.tolist()}
            for j, c in sorted(fit.components.items())
        ],
        "rescale": fit.rescale.to_dict() if fit.rescale is not None else None,
        "flags": _to_jsonable(fit.flags),
    }


def fit_from_dict(payload: dict) -> AdditiveFit:
    if not isinstance(payload, dict):
        raise ModelFileError("model file must hold a JSON object")
    version = payload.get("version")
    if version != MODEL_VERSION:
        raise ModelFileError(f"unsupported model version {version!r}; expected {MODEL_VERSION!r}")
    try:
        comps = {}
        for c in payload["components"]:
            basis = SplineBasis(int(c["degree"]), tuple(float(k) for k in c["knots"]))
            means = np.asarray(c["column_means"], dtype=float)
            coefs = np.asarray(c["coefficients"], dtype=float)
            if means.shape != (basis.m,) or coefs.shape != (basis.m,):
                raise ModelFileError(f"component {c['index']}: arrays do not match basis size {basis.m}")
            comps[int(c["index"])] = Component(basis, means, coefs)
        rescale = Rescale.from_dict(payload["rescale"]) if payload.get("rescale") else None
        return AdditiveFit(float(payload["intercept"]), comps, float(payload["lambda2"]), payload.get("gcv"),
                           str(payload["method"]), payload.get("d"), rescale, None, payload.get("flags") or {})
    except ModelFileError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed model file: {exc}") from None


def save_model(fit: AdditiveFit, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fit_to_dict(fit), fh, indent=2)


def load_model(path) -> AdditiveFit:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not valid JSON ({exc})") from None
    return fit_from_dict(payload)


def from_group_fit(design, coefficients, intercept: float, method: str, dataset: Dataset | None = None,
                   fitted=None, flags=None) -> AdditiveFit:
    """Wrap first-step coefficients (group Lasso, adaptive, MGB) as an :class:`AdditiveFit`.

    Designs built with a ``transform`` are folded into the coefficients so the
    stored model only needs the plain basis.
    """
    blocks = coefficients.as_blocks()
    comps = {}
    for j in coefficients.active_set:
        beta = blocks[j]
        means = design.column_means[j]
        if design.transform is not None:
            t = design.transform if design.transform.ndim == 2 else design.transform[j]
            beta = t @ beta
            means = np.linalg.lstsq(t.T, means, rcond=None)[0]
        comps[j] = Component(design.basis, np.asarray(means, dtype=float), np.asarray(beta, dtype=float))
    return AdditiveFit(float(intercept), comps, 0.0, None, method, design.d,
                       dataset.rescale if dataset is not None else None,
                       None if fitted is None else np.asarray(fitted), dict(flags or {}))
