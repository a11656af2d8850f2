"""Evaluate the 16 doubly penalized (MGB) candidates on one simulated dataset.

Run with ``python demos/mgb_grid.py``. Small first-step levels keep the
error low but admit many false positives.
"""

from twostep.basis import make_bspline_basis, sobolev_penalty_matrix
from twostep.data import SimulationScenario, build_centered_design, generate
from twostep.mgb import grid_eval


def main():
    ds, truth = generate(SimulationScenario("model1", n=400, d=200, seed=2))
    basis = make_bspline_basis(3, 4)
    design = build_centered_design(ds, basis)
    rows = grid_eval(design, sobolev_penalty_matrix(basis, 2), ds.y, truth)
    print(f"{'candidate':<26}{'NV':>5}{'FP':>5}{'FN':>5}{'sq. error':>11}")
    for r in sorted(rows, key=lambda r: (r.lambda2_tilde, -r.lambda_check)):
        print(f"{r.label:<26}{r.nv:>5}{r.fp:>5}{r.fn:>5}{r.sq_error:>11.4f}")


if __name__ == "__main__":
    main()
