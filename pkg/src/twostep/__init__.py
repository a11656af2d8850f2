"""High-dimensional additive regression by group-Lasso selection and penalized spline refitting.

Typical use::

    from twostep import data, basis, glasso, refit

    ds, truth = data.generate(data.SimulationScenario("model1", n=400, d=1000))
    design = data.build_centered_design(ds, basis.make_bspline_basis(3, 4))
    first, _ = glasso.fit_path_aic(design, ds.y)
    model = refit.fit_penalized_gcv(ds, first.active_set)
"""

from . import basis, data, diagnostics, glasso, harness, mgb, refit
from .basis import make_bspline_basis, sobolev_penalty_matrix
from .data import Dataset, SimulationScenario, build_centered_design, generate, load_csv
from .refit import fit_penalized, fit_penalized_gcv, fit_sieve, load_model, predict, save_model

__version__ = "0.1.0"

__all__ = [
    "basis", "data", "diagnostics", "glasso", "harness", "mgb", "refit",
    "make_bspline_basis", "sobolev_penalty_matrix", "Dataset", "SimulationScenario",
    "build_centered_design", "generate", "load_csv", "fit_penalized", "fit_penalized_gcv",
    "fit_sieve", "load_model", "predict", "save_model",
]
