"""Univariate B-spline bases on [0, 1] and their Sobolev roughness penalties.

A basis exposes ``m = full_dim - 1`` functions: the last B-spline of the full
clamped basis is dropped so that, together with empirical centering, the
constant direction is removed from every additive component.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline


class OutOfDomainError(ValueError):
    """Raised when a covariate value lies outside [0, 1]."""


@dataclass(frozen=True)
class SplineBasis:
    """Clamped B-spline basis on [0, 1] with the last function excluded.

    Attributes
    ----------
    degree : int
        Polynomial degree (3 for cubic splines).
    interior_knots : tuple of float
        Strictly increasing knots in the open interval (0, 1).
    boundary : tuple of float
        Always ``(0.0, 1.0)``.
    metadata : dict
        Construction notes, e.g. which quantile knots were nudged apart.
    """

    degree: int
    interior_knots: tuple[float, ...]
    boundary: tuple[float, float] = (0.0, 1.0)
    metadata: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError(f"degree must be >= 1, got {self.degree}")
        knots = np.asarray(self.interior_knots, dtype=float)
        if knots.size and (knots.min() <= 0.0 or knots.max() >= 1.0):
            raise ValueError("interior knots must lie strictly inside (0, 1)")
        if knots.size > 1 and np.any(np.diff(knots) <= 0):
            raise ValueError("interior knots must be strictly increasing")
        object.__setattr__(self, "interior_knots", tuple(float(k) for k in knots))
        object.__setattr__(self, "boundary", (0.0, 1.0))

    @property
    def full_dim(self) -> int:
        return self.degree + 1 + len(self.interior_knots)

    @property
    def m(self) -> int:
        return self.full_dim - 1

    @property
    def knot_vector(self) -> np.ndarray:
        """Full clamped knot vector (boundary knots repeated ``degree + 1`` times)."""
        k = self.degree + 1
        return np.concatenate([np.zeros(k), self.interior_knots, np.ones(k)])

    @property
    def breakpoints(self) -> np.ndarray:
        return np.concatenate([[0.0], self.interior_knots, [1.0]])

    def _spline(self) -> BSpline:
        return BSpline(self.knot_vector, np.eye(self.full_dim), self.degree, extrapolate=False)

    def evaluate_full(self, z, deriv: int = 0) -> np.ndarray:
        """All ``full_dim`` B-splines (or their derivatives) at ``z``; shape ``z.shape + (full_dim,)``."""
        z = _check_domain(z)
        out = self._spline()(z.ravel(), nu=deriv)
        return out.reshape(z.shape + (self.full_dim,))

    def __call__(self, z, deriv: int = 0) -> np.ndarray:
        return self.evaluate_full(z, deriv)[..., : self.m]

    def to_dict(self) -> dict:
        return {"degree": self.degree, "knots": list(self.interior_knots)}

    @classmethod
    def from_dict(cls, payload: dict) -> "SplineBasis":
        return cls(int(payload["degree"]), tuple(payload["knots"]))


@dataclass(frozen=True)
class PenaltyMatrix:
    """``omega[k, l] = int_0^1 psi_k^(nu)(z) psi_l^(nu)(z) dz`` over the exposed functions."""

    nu: int
    omega: np.ndarray

    def quadratic_form(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        return float(theta @ self.omega @ theta)


def _check_domain(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    bad = ~((z >= 0.0) & (z <= 1.0))
    if np.any(bad):
        idx = np.argwhere(bad)[:5]
        raise OutOfDomainError(
            f"{int(bad.sum())} value(s) outside [0, 1], first at index {idx[0].tolist()}: "
            f"{z[tuple(idx[0])]!r}"
        )
    return z


def _separate_ties(knots: np.ndarray) -> tuple[np.ndarray, list[int]]:
    # Nudge duplicate or boundary-touching knots to the midpoint of their neighbours.
    knots = knots.copy()
    nudged = []
    for k in range(knots.size):
        prev = knots[k - 1] if k > 0 else 0.0
        if knots[k] > prev and knots[k] < 1.0:
            continue
        later = knots[k + 1 :]
        later = later[later > prev]
        upper = later[0] if later.size and later[0] < 1.0 else 1.0
        knots[k] = 0.5 * (prev + upper)
        nudged.append(k)
    # a nudge can land above a following knot; repeat until strictly increasing
    if knots.size > 1 and np.any(np.diff(knots) <= 0):
        knots, more = _separate_ties(knots)
        nudged = sorted(set(nudged) | set(more))
    return knots, nudged


def make_bspline_basis(degree: int = 3, n_interior: int = 4, placement: str = "even",
                       data_column=None) -> SplineBasis:
    """Build a clamped B-spline basis on [0, 1].

    ``placement="even"`` puts knots at ``k / (n_interior + 1)``;
    ``placement="quantile"`` uses empirical quantiles of ``data_column`` at
    the same probability levels.
    """
    if degree < 1:
        raise ValueError(f"degree must be >= 1, got {degree}")
    if n_interior < 0:
        raise ValueError(f"n_interior must be >= 0, got {n_interior}")
    probs = np.arange(1, n_interior + 1) / (n_interior + 1)
    if placement == "even":
        return SplineBasis(degree, tuple(probs))
    if placement != "quantile":
        raise ValueError(f"unknown knot placement {placement!r}")
    if data_column is None or np.size(data_column) == 0:
        raise ValueError("quantile placement needs a non-empty data column")
    col = _check_domain(np.ravel(data_column))
    knots = np.quantile(col, probs) if n_interior else np.empty(0)
    knots, nudged = _separate_ties(knots)
    return SplineBasis(degree, tuple(knots), metadata={"nudged_knots": nudged} if nudged else {})


def eval_basis(basis: SplineBasis, z) -> np.ndarray:
    """Exposed basis values ``(psi_1(z), ..., psi_m(z))``, right-closed at ``z = 1``."""
    return basis(z)


def gauss_nodes_needed(degree: int, nu: int) -> int:
    """Gauss-Legendre nodes that integrate a polynomial of degree ``2 (degree - nu)`` exactly."""
    return max(1, math.ceil((2 * (degree - nu) + 1) / 2))


def sobolev_penalty_matrix(basis: SplineBasis, nu: int = 2, n_nodes: int | None = None) -> PenaltyMatrix:
    """Exact roughness Gram matrix of the ``nu``-th derivatives of the exposed functions."""
    if nu < 1 or nu > basis.degree:
        raise ValueError(f"need 1 <= nu <= degree={basis.degree}, got nu={nu}")
    needed = gauss_nodes_needed(basis.degree, nu)
    if n_nodes is None:
        n_nodes = needed
    elif n_nodes < needed:
        raise ValueError(f"{n_nodes} nodes cannot integrate exactly; need >= {needed}")
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    bp = basis.breakpoints
    lo, hi = bp[:-1, None], bp[1:, None]
    nodes = (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel()
    weights = (0.5 * (hi - lo) * w).ravel()
    # nodes are interior to each knot interval, so the piecewise derivative is unambiguous
    d = basis(nodes, deriv=nu)
    omega = (d * weights[:, None]).T @ d
    return PenaltyMatrix(nu, 0.5 * (omega + omega.T))


def population_gram(basis: SplineBasis, n_nodes: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the exposed basis under ``z ~ Uniform[0, 1]``.

    Returns ``(mean, cov)`` with ``cov = E[(psi - E psi)(psi - E psi)^T]``;
    used to whiten designs so each population block covariance is the identity.
    """
    x, w = np.polynomial.legendre.leggauss(max(n_nodes, basis.degree + 1))
    bp = basis.breakpoints
    lo, hi = bp[:-1, None], bp[1:, None]
    nodes = (0.5 * (hi - lo) * x + 0.5 * (hi + lo)).ravel()
    weights = (0.5 * (hi - lo) * w).ravel()
    vals = basis(nodes)
    mean = weights @ vals
    second = (vals * weights[:, None]).T @ vals
    return mean, second - np.outer(mean, mean)
