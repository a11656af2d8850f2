"""Block coordinate descent for  (1/2n)||y - sum_j W_j g_j||^2 + sum_j pen_j ||g_j||.

Each block subproblem is solved exactly. When ``W_j^T W_j / n`` is an
orthogonal projector (whitened group-Lasso blocks) the update is the closed
form group soft-threshold; otherwise the stationarity condition is reduced to
a scalar secular equation in the norm of the block and solved by Newton's
method.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ._linalg import sym_eigh

SECULAR_TOL = 1e-12


@dataclass
class BcdResult:
    gamma: np.ndarray        # (d, m)
    residual: np.ndarray     # y - sum_j W_j gamma_j
    objective: float
    n_iterations: int
    converged: bool


def solve_block(eigvals, eigvecs, b, lam):
    """Exact minimizer of ``0.5 g^T A g - b^T g + lam ||g||`` with ``A = V diag(e) V^T``.

    Returns ``(g, t)`` where ``t = ||g||``.
    """
    bnorm = np.sqrt(b @ b)
    if bnorm <= lam:
        return np.zeros_like(b), 0.0
    c = eigvecs.T @ b
    pos = eigvals > 0
    # directions with zero curvature carry no signal once b is in the range of W^T
    c = np.where(pos, c, 0.0)
    e = eigvals
    cnorm = np.sqrt(c @ c)
    if cnorm <= lam:
        return np.zeros_like(b), 0.0
    if lam == 0.0:
        g = eigvecs @ np.divide(c, e, out=np.zeros_like(c), where=pos)
        return g, float(np.sqrt(g @ g))
    c2 = c * c
    t = (cnorm - lam) / e.max()
    hi = (cnorm - lam) / e[pos].min()
    # psi(t) = 1/sqrt(S(t)) - 1 with S(t) = sum c^2 / (e t + lam)^2 is concave and
    # increasing, so Newton from the left bracket climbs monotonically to the root.
    for _ in range(100):
        q = e * t + lam
        s = (c2 / (q * q)).sum()
        ds = -2.0 * (c2 * e / (q * q * q)).sum()
        psi = 1.0 / np.sqrt(s) - 1.0
        dpsi = -0.5 * ds / s ** 1.5
        t_new = min(t - psi / dpsi, hi)
        if abs(t_new - t) <= SECULAR_TOL * max(t_new, 1e-300):
            t = t_new
            break
        t = t_new
    g = eigvecs @ (c * t / (e * t + lam))
    return g, t


@numba.njit(cache=True)
def _secular_root(e, c2, cnorm, lam):
    t = (cnorm - lam) / e.max()
    emin = np.inf
    for k in range(e.size):
        if e[k] > 0 and c2[k] > 0 and e[k] < emin:
            emin = e[k]
    hi = (cnorm - lam) / emin
    for _ in range(100):
        s = 0.0
        ds = 0.0
        for k in range(e.size):
            q = e[k] * t + lam
            s += c2[k] / (q * q)
            ds -= 2.0 * c2[k] * e[k] / (q * q * q)
        psi = 1.0 / np.sqrt(s) - 1.0
        dpsi = -0.5 * ds / (s * np.sqrt(s))
        t_new = t - psi / dpsi
        if t_new > hi:
            t_new = hi
        if abs(t_new - t) <= SECULAR_TOL * max(t_new, 1e-300):
            return t_new
        t = t_new
    return t


@numba.njit(cache=True, fastmath=True)
def _score(wt, r, out):
    m, n = wt.shape
    for k in range(m):
        s = 0.0
        for i in range(n):
            s += wt[k, i] * r[i]
        out[k] = s / n


@numba.njit(cache=True, fastmath=True)
def _subtract(wt, c, r):
    m, n = wt.shape
    for k in range(m):
        ck = c[k]
        for i in range(n):
            r[i] -= wt[k, i] * ck


@numba.njit(cache=True)
def _sweep(WT, residual, gamma, order, pen, evals, evecs, orthonormal):
    """One cyclic pass over ``order``; updates ``residual`` and ``gamma`` in place.

    Returns the largest block change ``||gamma_j_new - gamma_j_old||``.
    ``WT`` holds the blocks transposed, shape ``(d, m, n)``, so that both the
    block score and the residual update run over contiguous memory.
    """
    m = WT.shape[1]
    b = np.empty(m)
    c = np.empty(m)
    c2 = np.empty(m)
    g = np.empty(m)
    biggest = 0.0
    for j in order:
        wj = WT[j]
        lam = pen[j]
        _score(wj, residual, b)
        if orthonormal:
            bn2 = 0.0
            for k in range(m):
                b[k] += gamma[j, k]
                bn2 += b[k] * b[k]
            bn = np.sqrt(bn2)
            if bn > lam:
                scale = 1.0 - lam / bn
                for k in range(m):
                    g[k] = scale * b[k]
            else:
                g[:] = 0.0
        else:
            e = evals[j]
            v = evecs[j]
            # b += A gamma_old, A = V diag(e) V^T
            for k in range(m):
                s = 0.0
                for l in range(m):
                    s += v[l, k] * gamma[j, l]
                c[k] = e[k] * s
            bn2 = 0.0
            for k in range(m):
                s = 0.0
                for l in range(m):
                    s += v[k, l] * c[l]
                b[k] += s
                bn2 += b[k] * b[k]
            if np.sqrt(bn2) <= lam:
                g[:] = 0.0
            else:
                cn2 = 0.0
                for k in range(m):
                    s = 0.0
                    for l in range(m):
                        s += v[l, k] * b[l]
                    c[k] = s if e[k] > 0 else 0.0
                    c2[k] = c[k] * c[k]
                    cn2 += c2[k]
                cnorm = np.sqrt(cn2)
                if cnorm <= lam:
                    g[:] = 0.0
                else:
                    if lam == 0.0:
                        for k in range(m):
                            c[k] = c[k] / e[k] if e[k] > 0 else 0.0
                    else:
                        t = _secular_root(e, c2, cnorm, lam)
                        for k in range(m):
                            c[k] = c[k] * t / (e[k] * t + lam)
                    for k in range(m):
                        s = 0.0
                        for l in range(m):
                            s += v[k, l] * c[l]
                        g[k] = s
        step2 = 0.0
        for k in range(m):
            c[k] = g[k] - gamma[j, k]
            step2 += c[k] * c[k]
            gamma[j, k] = g[k]
        if step2 > 0.0:
            _subtract(wj, c, residual)
            biggest = max(biggest, np.sqrt(step2))
    return biggest


def block_gram_eig(W):
    """Eigendecompositions of ``W_j^T W_j / n`` for every block."""
    n = W.shape[1]
    a = np.einsum("jik,jil->jkl", W, W) / n
    return sym_eigh(a)


def objective(residual, gamma, pen):
    n = residual.shape[0]
    return float(residual @ residual / (2 * n) + (pen * np.linalg.norm(gamma, axis=1)).sum())


def block_cd(W, y, pen, *, gamma0=None, eig=None, orthonormal=False, tol=1e-7,
             max_iter=10_000, eligible=None, max_enter=10, step_tol=None) -> BcdResult:
    """Minimize the group-penalized least-squares objective by active-set block CD.

    Parameters
    ----------
    W : ndarray, shape (d, n, m)
        Design blocks.
    y : ndarray, shape (n,)
        Centered response.
    pen : ndarray, shape (d,)
        Per-group penalty weights; ``inf`` forces a group to zero.
    orthonormal : bool
        Blocks satisfy ``W_j^T W_j / n = P_j`` (a projector) and the closed
        form soft-threshold is used.
    eligible : boolean mask, optional
        Groups allowed to enter; the rest stay exactly zero.
    max_enter : int
        A screen admits at most ``max(max_enter, |working set|)`` new groups,
        strongest violations first, so the working set roughly doubles per
        round instead of jumping to every violator of a cold start.
    step_tol : float, optional
        Also require the largest block change of the last sweep to be at most
        this; it turns the objective rule into an iterate fixed-point rule.

    The sweep schedule is: a vectorized KKT screen of all groups, cyclic
    sweeps over the working set until the relative objective decrease falls
    below ``tol`` (and, when ``step_tol`` is given, no block moved by more
    than ``step_tol``), then another screen; it stops when a screen finds no
    violators.
    """
    d, n, m = W.shape
    pen = np.broadcast_to(np.asarray(pen, dtype=float), (d,)).copy()
    if eligible is not None:
        pen[~np.asarray(eligible, dtype=bool)] = np.inf
    gamma = np.zeros((d, m)) if gamma0 is None else np.array(gamma0, dtype=float).reshape(d, m)
    gamma[~np.isfinite(pen)] = 0.0
    if not orthonormal and eig is None:
        eig = block_gram_eig(W)
    W = np.asarray(W, dtype=float)
    WT = np.ascontiguousarray(W.transpose(0, 2, 1))
    if orthonormal:
        ev, evec = np.zeros((1, m)), np.zeros((1, m, m))
    else:
        ev, evec = np.ascontiguousarray(eig[0]), np.ascontiguousarray(eig[1])
    flat = WT.reshape(d * m, n)
    residual = y - gamma.ravel() @ flat
    fin_pen = np.where(np.isfinite(pen), pen, 0.0)

    def obj():
        return float(residual @ residual / (2 * n) + (fin_pen * np.linalg.norm(gamma, axis=1)).sum())

    active = set(np.flatnonzero(np.linalg.norm(gamma, axis=1) > 0).tolist())
    sweeps = 0
    converged = False
    f_old = obj()
    while sweeps < max_iter:
        scores = (flat @ residual).reshape(d, m) / n
        snorm = np.linalg.norm(scores, axis=1)
        # strict violations only; ties at the threshold keep the group at zero
        margin = 1e-12 * np.maximum(fin_pen, 1e-300)
        viol = np.flatnonzero((snorm > pen + margin) & np.isfinite(pen))
        new = [j for j in viol.tolist() if j not in active]
        if not new and sweeps > 0:
            converged = True
            break
        # largest violations first keeps the working set small
        new.sort(key=lambda j: -snorm[j] / max(pen[j], 1e-300))
        new = new[:max(max_enter, len(active))]
        order = sorted(active) + new
        order_arr = np.asarray(order, dtype=np.int64)
        active.update(new)
        while sweeps < max_iter:
            sweeps += 1
            step = _sweep(WT, residual, gamma, order_arr, pen, ev, evec, orthonormal)
            f_new = obj()
            done = (f_old - f_new) <= tol * max(abs(f_new), 1e-300)
            if step_tol is not None:
                done = done and step <= step_tol
            f_old = f_new
            if done:
                break
        active = {j for j in order if np.any(gamma[j])}
    # recompute the residual from scratch to shed accumulated rounding
    residual = y - gamma.ravel() @ flat
    return BcdResult(gamma, residual, obj(), sweeps, converged)
