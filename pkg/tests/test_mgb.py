"""Doubly penalized competitor: transformed group Lasso and the candidate grid."""

import warnings

import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import minimize

from conftest import tiny_instance
from oracles import group_prox_grad
from twostep import glasso
from twostep._bcd import block_cd, block_gram_eig, solve_block
from twostep.basis import make_bspline_basis, sobolev_penalty_matrix
from twostep.data import SimulationScenario, build_centered_design, generate
from twostep.mgb import (LAMBDA2_TILDES, LAMBDA_CHECKS, MgbProblem, fit_mgb, grid_eval, mgb_objective,
                         selection_counts, stationarity_residual)


@pytest.fixture
def cubic_instance():
    ds, truth = generate(SimulationScenario("model1", n=60, d=8, seed=3))
    basis = make_bspline_basis(3, 4)
    return ds, truth, build_centered_design(ds, basis), sobolev_penalty_matrix(basis, 2)


def _penalty(design):
    # linear splines have no second derivative; use the nu = 1 roughness
    return sobolev_penalty_matrix(design.basis, 1)


class TestFit:
    @pytest.mark.parametrize("seed", range(5))
    def test_reduces_to_group_lasso(self, seed):
        ds, d = tiny_instance(seed)
        lam1 = 0.3 * glasso.lambda_max(d, ds.y)
        g = glasso.fit(d, ds.y, lam1, tol=1e-13)
        f = fit_mgb(d, _penalty(d), ds.y, np.sqrt(d.m) * lam1 / d.n, 0.0, tol=1e-13, step_tol=1e-12)
        assert f.active_set == g.active_set
        np.testing.assert_allclose(f.coefficients.beta, g.coefficients.beta, atol=1e-8)

    @pytest.mark.parametrize("lt2", [0.0, 0.01, 0.5])
    def test_zero_threshold(self, lt2):
        ds, d = tiny_instance(4)
        prob = MgbProblem(d, _penalty(d), lt2)
        thr = prob.threshold(ds.y)
        yc = ds.y - ds.y.mean()
        ref = max(np.linalg.norm(prob.root_pinv[j].T @ d.blocks[j].T @ yc) / d.n for j in range(d.d))
        assert thr == pytest.approx(ref, rel=1e-12)
        assert prob.fit(ds.y, thr * 1.0001, tol=1e-12).active_set == ()
        assert len(prob.fit(ds.y, thr * 0.999, tol=1e-12).active_set) >= 1

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_proximal_gradient(self, seed):
        ds, d = tiny_instance(seed)
        prob = MgbProblem(d, _penalty(d), 0.05)
        lt1 = 0.3 * prob.threshold(ds.y)
        f = prob.fit(ds.y, lt1, tol=1e-13)
        _, obj = group_prox_grad(prob.W, ds.y - ds.y.mean(), lt1)
        assert abs(f.objective - obj) <= 1e-7

    def test_objective_from_parts(self, cubic_instance):
        ds, _, d, pen = cubic_instance
        prob = MgbProblem(d, pen, 0.01)
        lt1 = 0.2 * prob.threshold(ds.y)
        f = prob.fit(ds.y, lt1, tol=1e-10)
        ref = mgb_objective(d, pen, ds.y, f.coefficients.beta, lt1, 0.01)
        assert f.objective == pytest.approx(ref, rel=1e-10)
        gn = np.linalg.norm(f.coefficients.as_blocks(), axis=1)
        assert set(f.active_set) == set(np.flatnonzero(gn > 0))

    def test_stationarity(self, cubic_instance):
        ds, _, d, pen = cubic_instance
        prob = MgbProblem(d, pen, 0.02)
        f = prob.fit(ds.y, 0.1 * prob.threshold(ds.y), tol=1e-12)
        assert stationarity_residual(prob, ds.y, f) <= 1e-5

    def test_objective_monotone_across_sweeps(self, cubic_instance):
        ds, _, d, pen = cubic_instance
        prob = MgbProblem(d, pen, 0.01)
        lt1 = 0.05 * prob.threshold(ds.y)
        yc = ds.y - ds.y.mean()
        objs = [block_cd(prob.W, yc, lt1, eig=prob.eig, tol=0.0, max_iter=k).objective for k in range(1, 25)]
        assert np.all(np.diff(objs) <= 1e-14 * objs[0])

    def test_invalid_levels(self, cubic_instance):
        ds, _, d, pen = cubic_instance
        with pytest.raises(ValueError):
            MgbProblem(d, pen, -0.1)
        with pytest.raises(ValueError):
            MgbProblem(d, pen, 0.1).fit(ds.y, -1.0)

    def test_roughness_decreases_in_lambda2(self, cubic_instance):
        # soft diagnostic: recorded as a warning when an instance violates it
        ds, _, d, pen = cubic_instance
        lt1 = 0.05 * glasso.lambda_max(d, ds.y) / d.n
        rough = []
        for lt2 in sorted(LAMBDA2_TILDES):
            b = fit_mgb(d, pen, ds.y, lt1, lt2, tol=1e-10).coefficients.as_blocks()
            rough.append(float(np.einsum("jk,kl,jl->", b, pen.omega, b)))
        if np.any(np.diff(rough) > 1e-8 * max(rough)):
            warnings.warn(f"roughness not monotone in lambda2_tilde: {rough}")
        assert all(r >= 0 for r in rough)


class TestBlockSolve:
    @given(st.integers(1, 5).flatmap(lambda m: st.tuples(
        arrays(float, (m, m), elements=st.floats(-2, 2)),
        arrays(float, m, elements=st.floats(-3, 3)),
        st.floats(0.0, 2.0))))
    @example((np.array([[0.5, -1.79832567, 1.9, -0.47056359, 0.59276848]] + [[0.59276848] * 5] * 4),
              np.array([-1.59353628, 2.0, -0.54035661, -1.38742119, 2.11264729]), 1.2678097503866265e-18))
    def test_exact_minimizer(self, args):
        a, b, lam = args
        A = a @ a.T + 1e-3 * np.eye(len(b))
        e, v = np.linalg.eigh(A)
        g, t = solve_block(e, v, b, lam)

        def f(x):
            return 0.5 * x @ A @ x - b @ x + lam * np.sqrt(x @ x)

        if np.linalg.norm(b) <= lam:
            assert np.all(g == 0)
            return
        assert t == pytest.approx(np.linalg.norm(g), rel=1e-12)
        # stationarity of the smooth branch
        r = A @ g - b + lam * g / np.linalg.norm(g)
        assert np.linalg.norm(r) <= 1e-10 * max(1.0, np.linalg.norm(b))
        best = minimize(f, np.linalg.solve(A, b), method="Nelder-Mead",
                        options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000})
        # relative margin: |f| reaches 1e3+ when A is nearly singular
        assert f(g) <= best.fun + 1e-9 * max(1.0, abs(best.fun))

    def test_kernel_matches_reference(self):
        ds, d = tiny_instance(2, d=3, m=3)
        pen = _penalty(d)
        prob = MgbProblem(d, pen, 0.1)
        yc = ds.y - ds.y.mean()
        lam = 0.2 * prob.threshold(ds.y)
        # one group only: one sweep from zero is one exact block solve
        W = prob.W[:1]
        res = block_cd(W, yc, lam, eig=block_gram_eig(W), tol=0.0, max_iter=1)
        e, v = block_gram_eig(W)
        g, _ = solve_block(e[0], v[0], W[0].T @ yc / d.n, lam)
        np.testing.assert_allclose(res.gamma[0], g, atol=1e-12)

    def test_unpenalized_block(self):
        A = np.diag([2.0, 0.5])
        g, _ = solve_block(*np.linalg.eigh(A), np.array([1.0, 1.0]), 0.0)
        np.testing.assert_allclose(g, [0.5, 2.0])


class TestGrid:
    def test_sixteen_candidates(self, cubic_instance):
        ds, truth, d, pen = cubic_instance
        rows = grid_eval(d, pen, ds.y, truth)
        assert len(rows) == 16
        assert {(r.lambda_check, r.lambda2_tilde) for r in rows} == \
            {(a, b) for a in LAMBDA_CHECKS for b in LAMBDA2_TILDES}
        for r in rows:
            assert r.nv == len(truth.active_set) + r.fp - r.fn
            assert r.sq_error >= 0
            assert r.label.startswith("MGB(l1=")

    def test_candidate_matches_direct_fit(self, cubic_instance):
        ds, truth, d, pen = cubic_instance
        rows = grid_eval(d, pen, ds.y, truth, lambda_checks=(0.08,), lambda2_tildes=(0.02,), tol=1e-12)
        f = fit_mgb(d, pen, ds.y, 0.08 * glasso.lambda_max(d, ds.y) / d.n, 0.02, tol=1e-12)
        nv, fp, fn = selection_counts(f.active_set, truth.active_set)
        assert (rows[0].nv, rows[0].fp, rows[0].fn) == (nv, fp, fn)
        assert rows[0].sq_error == pytest.approx(np.mean((f.fitted - truth.mu) ** 2), rel=1e-6)

    def test_all_zero_rows(self, cubic_instance):
        ds, truth, d, pen = cubic_instance
        rows = grid_eval(d, pen, ds.y, truth, lam_max=1e6 * glasso.lambda_max(d, ds.y))
        for r in rows:
            assert (r.nv, r.fp, r.fn) == (0, 0, len(truth.active_set))

    def test_selection_counts(self):
        assert selection_counts({1, 2, 9}, (1, 2, 3, 4)) == (3, 1, 2)
        assert selection_counts((), (0, 1)) == (0, 0, 2)
