"""Design-quality quantities of the centered blockwise design.

All quantities refer to ``Sigma = X^T X / n`` of the centered design, so
``||Sigma^{1/2} a||^2 = ||X a||^2 / n``; nothing here forms ``Sigma^{1/2}``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .data import CenteredDesign, make_rng

DEFAULT_BUDGET = 10**6
OMEGA0_THRESHOLD = 0.5
CONE_CONSTANT = 21.0


class EnumerationBudgetError(RuntimeError):
    """Exact subset enumeration would exceed the configured budget."""


@dataclass(frozen=True)
class SparseEigenvalue:
    """Group-sparse maximum eigenvalue; ``exact`` is false for a sampled lower bound."""

    value: float
    exact: bool
    n_subsets: int

    def __float__(self) -> float:
        return self.value


@dataclass
class DesignDiagnostics:
    omega0_holds: bool
    per_group_deviation: np.ndarray
    phi_max: dict[int, float] = field(default_factory=dict)
    phi_min: dict[tuple[int, ...], float] = field(default_factory=dict)
    kappa_upper_bound: float | None = None
    delta: float | None = None


def _scaled_design(design: CenteredDesign) -> np.ndarray:
    """``X / sqrt(n)`` with groups side by side, shape ``(n, d m)``."""
    return design.stacked() / math.sqrt(design.n)


def _columns(groups, m: int) -> np.ndarray:
    return (np.asarray(groups, dtype=np.int64)[:, None] * m + np.arange(m)).ravel()


def omega0_check(design: CenteredDesign, threshold: float = OMEGA0_THRESHOLD) -> tuple[bool, np.ndarray]:
    """Whether every ``||Sigma_j^{1/2} - I||`` (operator norm) is at most ``threshold``."""
    w = np.linalg.eigvalsh(0.5 * (design.gram + np.swapaxes(design.gram, 1, 2)))
    dev = np.abs(np.sqrt(np.clip(w, 0.0, None)) - 1.0).max(axis=1)
    return bool(np.all(dev <= threshold)), dev


def group_sparse_max_eigenvalue(design: CenteredDesign, s: int, *, budget: int = DEFAULT_BUDGET,
                                randomized: bool = False, n_samples: int = 10_000,
                                seed: int = 0) -> SparseEigenvalue:
    """Largest ``||Sigma^{1/2} a||`` over unit ``a`` supported on at most ``s`` groups.

    The supremum is attained on supports of size exactly ``min(s, d)``, so
    those are enumerated and the top singular value of each stacked
    submatrix is taken. With ``randomized`` the subsets are sampled instead
    (``n_samples`` distinct ones) and the result is a lower bound unless the
    sample covers every subset.

    Raises
    ------
    EnumerationBudgetError
        ``C(d, s) > budget`` and ``randomized`` is not set.
    """
    d, m = design.d, design.m
    if s < 1:
        raise ValueError("s must be >= 1")
    s = min(int(s), d)
    total = math.comb(d, s)
    if randomized and n_samples < total:
        subsets = _sample_subsets(d, s, n_samples, seed)
        exact = False
    elif total <= budget or randomized:
        subsets = itertools.combinations(range(d), s)
        exact = True
    else:
        raise EnumerationBudgetError(
            f"C({d}, {s}) = {total} subsets exceeds the budget {budget}; use the randomized mode"
        )
    x = _scaled_design(design)
    best, count = 0.0, 0
    if d * m <= 2000:
        gram = x.T @ x
        for sub in subsets:
            cols = _columns(sub, m)
            best = max(best, float(np.linalg.eigvalsh(gram[np.ix_(cols, cols)])[-1]))
            count += 1
        best = math.sqrt(max(best, 0.0))
    else:
        for sub in subsets:
            best = max(best, float(np.linalg.norm(x[:, _columns(sub, m)], 2)))
            count += 1
    return SparseEigenvalue(best, exact, count)


def _sample_subsets(d: int, s: int, count: int, seed: int) -> list[tuple[int, ...]]:
    rng = make_rng(seed)
    seen: set[tuple[int, ...]] = set()
    while len(seen) < count:
        seen.add(tuple(sorted(rng.choice(d, size=s, replace=False).tolist())))
    return sorted(seen)


def sparse_min_eigenvalue(design: CenteredDesign, T) -> float:
    """Smallest ``||Sigma^{1/2} a||`` over unit ``a`` supported on the groups in ``T``."""
    T = sorted(set(int(j) for j in T))
    if not T:
        raise ValueError("T must be non-empty")
    x = _scaled_design(design)[:, _columns(T, design.m)]
    if x.shape[1] > x.shape[0]:
        return 0.0
    return float(np.linalg.svd(x, compute_uv=False)[-1])


def _cone_project(alpha: np.ndarray, inside: np.ndarray, c0: float) -> np.ndarray | None:
    """Shrink the off-``T`` part until the cone holds, then normalize; ``None`` if impossible."""
    norms = np.linalg.norm(alpha, axis=1)
    on, off = norms[inside].sum(), norms[~inside].sum()
    if on <= 0.0:
        return None
    a = alpha.copy()
    if off > c0 * on:
        a[~inside] *= c0 * on / off
    return a / np.linalg.norm(a)


def restricted_eigenvalue_upper(design: CenteredDesign, T_star, c0: float = CONE_CONSTANT,
                                restarts: int = 10, seed: int = 0) -> float:
    """Upper bound on the cone-restricted eigenvalue by local search.

    Minimizes ``||Sigma^{1/2} a||`` over unit vectors with
    ``sum_{j not in T} ||a_j|| <= c0 sum_{j in T} ||a_j||`` by SLSQP from a
    smallest-eigenvector start and ``restarts`` random starts. Each local
    solution is projected onto the cone and the sphere before it is scored,
    so the returned value is attained by a feasible vector. The problem is
    nonconvex; the value is an upper bound, not a certificate.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    d, m = design.d, design.m
    inside = np.zeros(d, dtype=bool)
    inside[sorted(set(int(j) for j in T_star))] = True
    if not inside.any():
        raise ValueError("T_star must be non-empty")
    x = _scaled_design(design)
    gram = x.T @ x if d * m <= 4000 else None

    def value(a):
        v = a.ravel()
        return float(v @ (gram @ v)) if gram is not None else float(np.sum((x @ v) ** 2))

    def grad(a):
        v = a.ravel()
        return 2.0 * (gram @ v if gram is not None else x.T @ (x @ v))

    def cone(v):
        norms = np.sqrt((v.reshape(d, m) ** 2).sum(axis=1) + 1e-300)
        return c0 * norms[inside].sum() - norms[~inside].sum()

    rng = make_rng(seed)
    starts = []
    if gram is not None:
        starts.append(np.linalg.eigh(gram)[1][:, 0].reshape(d, m))
    for _ in range(restarts):
        starts.append(rng.standard_normal((d, m)))

    best = math.inf
    for a0 in starts:
        a0 = _cone_project(a0, inside, c0)
        if a0 is None:
            # start had no mass on T; restart from a vector supported on T
            a0 = np.zeros((d, m))
            a0[inside] = rng.standard_normal((int(inside.sum()), m))
            a0 = _cone_project(a0, inside, c0)
        best = min(best, value(a0))
        res = minimize(value, a0.ravel(), jac=grad, method="SLSQP",
                       constraints=[{"type": "eq", "fun": lambda v: v @ v - 1.0, "jac": lambda v: 2 * v},
                                    {"type": "ineq", "fun": cone}],
                       options={"maxiter": 500, "ftol": 1e-12})
        a = _cone_project(res.x.reshape(d, m), inside, c0)
        if a is not None:
            best = min(best, value(a))
    return math.sqrt(max(best, 0.0))


def delta(n: int, d: int, nu: int = 2) -> float:
    """``max(n^{-nu/(2 nu + 1)}, sqrt(log d / n))``."""
    if n < 2 or d < 2:
        raise ValueError("need n >= 2 and d >= 2")
    return max(n ** (-nu / (2 * nu + 1)), math.sqrt(math.log(d) / n))


def diagnose(design: CenteredDesign, s_values=(1,), T_sets=(), T_star=None, nu: int = 2,
             budget: int = DEFAULT_BUDGET, restarts: int = 10, seed: int = 0) -> DesignDiagnostics:
    """Collect the design quantities; ``T_star`` (default: the first of ``T_sets``) sets the cone."""
    holds, dev = omega0_check(design)
    out = DesignDiagnostics(holds, dev)
    for s in sorted(set(int(s) for s in s_values)):
        out.phi_max[s] = group_sparse_max_eigenvalue(design, s, budget=budget).value
    for T in T_sets:
        key = tuple(sorted(set(int(j) for j in T)))
        out.phi_min[key] = sparse_min_eigenvalue(design, key)
    if T_star is None and T_sets:
        T_star = T_sets[0]
    if T_star is not None:
        out.kappa_upper_bound = restricted_eigenvalue_upper(design, T_star, restarts=restarts, seed=seed)
    out.delta = delta(design.n, max(design.d, 2), nu)
    return out
