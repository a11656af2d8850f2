"""First-step group Lasso over centered spline blocks.

The problem solved is

    min_beta  (1/2n) ||y - ybar - X beta||^2 + (sqrt(m) lambda1 / n) sum_j ||Sigma_j^{1/2} beta_j||

where ``Sigma_j`` is the empirical Gram matrix of block ``j``. Working in the
coordinates ``gamma_j = Sigma_j^{1/2} beta_j`` makes every block orthonormal,
so each coordinate update is an exact group soft-threshold.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._bcd import block_cd, block_gram_eig
from .data import CenteredDesign, center_response

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 10_000


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class GroupCoefficients:
    """Stacked coefficient vector with one contiguous slice of length ``m`` per covariate."""

    beta: np.ndarray
    m: int

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).ravel()
        if self.beta.size % self.m:
            raise ValueError("coefficient length is not a multiple of the group size")

    @property
    def d(self) -> int:
        return self.beta.size // self.m

    def group(self, j: int) -> np.ndarray:
        return self.beta[j * self.m:(j + 1) * self.m]

    def as_blocks(self) -> np.ndarray:
        return self.beta.reshape(self.d, self.m)

    @property
    def active_set(self) -> tuple[int, ...]:
        return tuple(np.flatnonzero(np.any(self.as_blocks() != 0.0, axis=1)).tolist())

    @classmethod
    def zeros(cls, d: int, m: int) -> "GroupCoefficients":
        return cls(np.zeros(d * m), m)


@dataclass
class GlassoFit:
    coefficients: GroupCoefficients
    intercept: float
    lambda1: float
    objective: float
    n_iterations: int
    kkt_residual: float
    fitted: np.ndarray
    converged: bool = True
    flags: dict = field(default_factory=dict)

    @property
    def active_set(self) -> tuple[int, ...]:
        return self.coefficients.active_set


def penalty_scale(design: CenteredDesign) -> float:
    """Factor turning ``lambda1`` into the per-group threshold ``sqrt(m) lambda1 / n``."""
    return math.sqrt(design.m) / design.n


def _blocks(design: CenteredDesign, normalized: bool) -> np.ndarray:
    return design.whitened if normalized else design.blocks


def lambda_max(design: CenteredDesign, y, normalized: bool = True) -> float:
    """Smallest ``lambda1`` at which every group is zero.

    With ``normalized=False`` the threshold is for the variant whose penalty
    is ``||beta_j||`` instead of ``||Sigma_j^{1/2} beta_j||``.
    """
    _, yc = center_response(y)
    W = _blocks(design, normalized)
    scores = np.einsum("jik,i->jk", W, yc) / design.n
    return float(np.linalg.norm(scores, axis=1).max() / penalty_scale(design))


def group_objective(design: CenteredDesign, y, beta, lambda1: float) -> float:
    """Objective in the original ``beta`` coordinates."""
    _, yc = center_response(y)
    b = np.asarray(beta, dtype=float).reshape(design.d, design.m)
    res = yc - np.einsum("jik,jk->i", design.blocks, b)
    pen = np.linalg.norm(np.einsum("jkl,jl->jk", design.gram_sqrt, b), axis=1).sum()
    return float(res @ res / (2 * design.n) + penalty_scale(design) * lambda1 * pen)


def kkt_residual(design: CenteredDesign, y, fit: GlassoFit) -> float:
    """Largest violation of the group-Lasso optimality conditions (0 at an exact solution)."""
    _, yc = center_response(y)
    b = fit.coefficients.as_blocks()
    gamma = np.einsum("jkl,jl->jk", design.gram_sqrt, b)
    res = yc - np.einsum("jik,jk->i", design.blocks, b)
    scores = np.einsum("jik,i->jk", design.whitened, res) / design.n
    lam = penalty_scale(design) * fit.lambda1
    gnorm = np.linalg.norm(gamma, axis=1)
    act = gnorm > 0
    out = np.zeros(design.d)
    if act.any():
        unit = gamma[act] / gnorm[act, None]
        out[act] = np.linalg.norm(scores[act] - lam * unit, axis=1)
    out[~act] = np.maximum(0.0, np.linalg.norm(scores[~act], axis=1) - lam)
    return float(out.max())


def fit(design: CenteredDesign, y, lambda1: float, tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER, warm_start: GroupCoefficients | None = None) -> GlassoFit:
    """Solve the group Lasso at ``lambda1`` by blockwise coordinate descent.

    A fit that hits ``max_iter`` is returned with ``converged=False`` and a
    :class:`ConvergenceWarning`; the caller decides what to do with it.
    """
    if lambda1 < 0:
        raise ValueError("lambda1 must be >= 0")
    y = np.asarray(y, dtype=float)
    y_bar, yc = center_response(y)
    gamma0 = None
    if warm_start is not None:
        gamma0 = np.einsum("jkl,jl->jk", design.gram_sqrt, warm_start.as_blocks())
    lam = penalty_scale(design) * lambda1
    res = block_cd(design.whitened, yc, lam, gamma0=gamma0, orthonormal=True, tol=tol, max_iter=max_iter,
                   step_tol=10.0 * tol)
    beta = np.einsum("jkl,jl->jk", design.gram_sqrt_pinv, res.gamma)
    # exact zeros come from the threshold; keep them exact through the back-transform
    beta[~np.any(res.gamma != 0.0, axis=1)] = 0.0
    coefs = GroupCoefficients(beta.ravel(), design.m)
    out = GlassoFit(coefs, y_bar, float(lambda1), res.objective, res.n_iterations,
                    0.0, y_bar + (yc - res.residual), res.converged)
    out.kkt_residual = kkt_residual(design, y, out)
    if not res.converged:
        warnings.warn(f"group Lasso did not converge in {max_iter} sweeps "
                      f"(KKT residual {out.kkt_residual:.3g})", ConvergenceWarning, stacklevel=2)
    return out


def lambda_grid(lam_max: float, n_lambda: int = 50, ratio: float = 0.01) -> np.ndarray:
    """Geometric grid from ``lam_max`` down to ``ratio * lam_max``."""
    if n_lambda < 1:
        raise ValueError("n_lambda must be >= 1")
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    if n_lambda == 1:
        return np.array([lam_max])
    return lam_max * ratio ** (np.arange(n_lambda) / (n_lambda - 1))


def aic(n: int, m: int, rss: float, n_active: int) -> float:
    """``n log(RSS / n) + 2 m |active|``."""
    return n * math.log(rss / n) + 2 * m * n_active if rss > 0 else -math.inf


@dataclass
class PathPoint:
    lambda1: float
    n_active: int
    aic: float
    converged: bool


def fit_path_aic(design: CenteredDesign, y, n_lambda: int = 50, ratio: float = 0.01,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Warm-started path from ``lambda_max`` downwards; returns ``(chosen_fit, path)``.

    The AIC residual uses fitted values at the training points. Ties go to
    the larger ``lambda1``.
    """
    y = np.asarray(y, dtype=float)
    grid = lambda_grid(lambda_max(design, y), n_lambda, ratio)
    best, best_aic, path = None, math.inf, []
    warm = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        for lam in grid:
            f = fit(design, y, float(lam), tol=tol, max_iter=max_iter, warm_start=warm)
            warm = f.coefficients
            rss = float(((y - f.fitted) ** 2).sum())
            a = aic(design.n, design.m, rss, len(f.active_set))
            path.append(PathPoint(float(lam), len(f.active_set), a, f.converged))
            if best is None or a < best_aic:
                best, best_aic = f, a
    best.flags["aic"] = best_aic
    best.flags["path_nonconverged"] = sum(not p.converged for p in path)
    return best, path


# --- adaptive group Lasso -----------------------------------------------------

def _fit_weighted(design, yc, pen, tol, max_iter, eligible=None, eig=None):
    res = block_cd(design.blocks, yc, pen, eig=eig, tol=tol, max_iter=max_iter, eligible=eligible,
                   step_tol=10.0 * tol)
    return res


def fit_adaptive(design: CenteredDesign, y, lambda1_init: float, lambdaA: float,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, eig=None) -> GlassoFit:
    """Adaptive group Lasso with weights ``1 / ||beta0_j||`` from an unnormalized first fit.

    Groups the initial fit sets to zero get infinite weight and stay exactly
    zero. ``lambda1`` on the returned fit holds ``lambdaA``; the initial
    penalty and the weights are in ``flags``.
    """
    if lambda1_init < 0 or lambdaA < 0:
        raise ValueError("penalty levels must be >= 0")
    y = np.asarray(y, dtype=float)
    _, yc = center_response(y)
    if eig is None:
        eig = block_gram_eig(design.blocks)
    stage1 = _fit_weighted(design, yc, penalty_scale(design) * lambda1_init, tol, max_iter, eig=eig)
    return _adaptive_stage2(design, y, stage1.gamma, lambdaA, tol, max_iter, eig,
                            {"lambda1_init": float(lambda1_init), "stage1_converged": stage1.converged})


def _adaptive_stage2(design, y, beta0, lambdaA, tol, max_iter, eig, flags):
    y_bar, yc = center_response(y)
    norms = np.linalg.norm(beta0, axis=1)
    keep = norms > 0
    weights = np.full(design.d, np.inf)
    weights[keep] = 1.0 / norms[keep]
    flags = dict(flags, weights=weights, stage1_active=tuple(np.flatnonzero(keep).tolist()))
    if not keep.any():
        flags["empty_initial_set"] = True
        coefs = GroupCoefficients.zeros(design.d, design.m)
        fitted = np.full(design.n, y_bar)
        return GlassoFit(coefs, y_bar, float(lambdaA), float(yc @ yc) / (2 * design.n),
                         0, 0.0, fitted, True, flags)
    pen = np.where(keep, lambdaA * np.where(keep, weights, 0.0), np.inf)
    res = _fit_weighted(design, yc, pen, tol, max_iter, eligible=keep, eig=eig)
    coefs = GroupCoefficients(res.gamma.ravel(), design.m)
    # optimality in beta coordinates with Gram Sigma_j and the weighted penalty
    score = np.einsum("jik,i->jk", design.blocks, res.residual) / design.n
    bn = np.linalg.norm(res.gamma, axis=1)
    kkt = np.zeros(design.d)
    act = bn > 0
    kkt[act] = np.linalg.norm(score[act] - pen[act, None] * res.gamma[act] / bn[act, None], axis=1)
    idle = keep & ~act
    kkt[idle] = np.maximum(0.0, np.linalg.norm(score[idle], axis=1) - pen[idle])
    flags["lambdaA"] = float(lambdaA)
    return GlassoFit(coefs, y_bar, float(lambdaA), res.objective, res.n_iterations,
                     float(kkt.max()), y_bar + (yc - res.residual), res.converged, flags)


def fit_adaptive_aic(design: CenteredDesign, y, n_lambda: int = 50, ratio: float = 0.01,
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> GlassoFit:
    """Adaptive group Lasso with both penalty levels chosen by the same AIC rule.

    Stage 1 runs the unnormalized path and keeps its AIC minimizer; stage 2
    scans ``lambdaA`` from the weighted zero-threshold down by ``ratio``.
    """
    y = np.asarray(y, dtype=float)
    _, yc = center_response(y)
    n, m = design.n, design.m
    eig = block_gram_eig(design.blocks)
    lam0 = lambda_max(design, y, normalized=False)
    best = None
    warm = None
    for lam in lambda_grid(lam0, n_lambda, ratio):
        r = _fit_weighted(design, yc, penalty_scale(design) * lam, tol, max_iter, eig=eig) \
            if warm is None else block_cd(design.blocks, yc, penalty_scale(design) * lam, gamma0=warm,
                                          eig=eig, tol=tol, max_iter=max_iter, step_tol=10.0 * tol)
        warm = r.gamma
        k = int(np.any(r.gamma != 0, axis=1).sum())
        a = aic(n, m, float(r.residual @ r.residual), k)
        if best is None or a < best[0]:
            best = (a, float(lam), r.gamma.copy())
    _, lam1, beta0 = best
    norms = np.linalg.norm(beta0, axis=1)
    keep = norms > 0
    flags = {"lambda1_init": lam1}
    if not keep.any():
        return _adaptive_stage2(design, y, beta0, 0.0, tol, max_iter, eig, flags)
    scores = np.einsum("jik,i->jk", design.blocks[keep], yc) / n
    lamA_max = float((np.linalg.norm(scores, axis=1) * norms[keep]).max())
    chosen = None
    for lamA in lambda_grid(lamA_max, n_lambda, ratio):
        f = _adaptive_stage2(design, y, beta0, float(lamA), tol, max_iter, eig, flags)
        rss = float(((y - f.fitted) ** 2).sum())
        a = aic(n, m, rss, len(f.active_set))
        if chosen is None or a < chosen[0]:
            chosen = (a, f)
    chosen[1].flags["aic"] = chosen[0]
    return chosen[1]
