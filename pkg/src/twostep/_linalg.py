"""Small symmetric-matrix helpers shared by the solvers."""

import numpy as np

EIG_CLIP = 1e-10


def sym_eigh(a):
    """Eigendecomposition of the symmetrized matrix, eigenvalues below the clip set to zero."""
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    w, v = np.linalg.eigh(a)
    w = np.where(w < EIG_CLIP, 0.0, w)
    return w, v


def sym_sqrt_and_pinv(a):
    """Return ``(A^{1/2}, (A^{1/2})^+)`` for a symmetric PSD matrix or a stack of them.

    Eigenvalues below ``EIG_CLIP`` are treated as exact zeros, so the
    generalized inverse is the inverse on the range of ``A`` and zero on its
    nullspace.
    """
    w, v = sym_eigh(a)
    root = np.sqrt(w)
    inv_root = np.divide(1.0, root, out=np.zeros_like(root), where=root > 0)
    vt = np.swapaxes(v, -1, -2)
    sqrt = (v * root[..., None, :]) @ vt
    pinv = (v * inv_root[..., None, :]) @ vt
    return sqrt, pinv
