"""Datasets, the simulation designs, and the centered blockwise design."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ._linalg import sym_sqrt_and_pinv
from .basis import SplineBasis

DEFAULT_NOISE_SD = math.sqrt(1.74)


class DataLoadError(ValueError):
    """Malformed or out-of-range CSV input."""


@dataclass(frozen=True)
class Rescale:
    """Per-column min-max map ``z01 = (z - minimum) / span``."""

    minimum: np.ndarray
    span: np.ndarray

    def apply(self, z) -> np.ndarray:
        return (np.asarray(z, dtype=float) - self.minimum) / self.span

    def to_dict(self) -> dict:
        return {"min": self.minimum.tolist(), "span": self.span.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "Rescale":
        return cls(np.asarray(payload["min"], dtype=float), np.asarray(payload["span"], dtype=float))


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    z: np.ndarray
    rescale: Rescale | None = None

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float)
        z = np.ascontiguousarray(self.z, dtype=float)
        if z.ndim != 2 or y.ndim != 1 or z.shape[0] != y.shape[0]:
            raise ValueError(f"shape mismatch: y {y.shape}, z {z.shape}")
        if y.shape[0] < 2 or z.shape[1] < 1:
            raise ValueError("need n >= 2 and d >= 1")
        if not np.all(np.isfinite(y)):
            raise ValueError("response contains non-finite values")
        if not np.all((z >= 0.0) & (z <= 1.0)):
            raise ValueError("covariates must lie in [0, 1]")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "z", z)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def d(self) -> int:
        return self.z.shape[1]


# --- simulation designs -------------------------------------------------------

def g1(z):
    return np.asarray(z, dtype=float)


def g2(z):
    return (2.0 * np.asarray(z) - 1.0) ** 2


def g3(z):
    s = np.sin(2.0 * np.pi * np.asarray(z))
    return s / (2.0 - s)


def g4(z):
    a = 2.0 * np.pi * np.asarray(z)
    s, c = np.sin(a), np.cos(a)
    return 0.1 * s + 0.2 * c + 0.3 * s**2 + 0.4 * c**3 + 0.5 * s**4


COMPONENT_FUNCTIONS = {"g1": g1, "g2": g2, "g3": g3, "g4": g4}

MODEL_TERMS = {
    "model1": [(0, 5.0, "g1"), (1, 3.0, "g2"), (2, 4.0, "g3"), (3, 6.0, "g4")],
    "model2": [
        (0, 3.5, "g1"), (1, 2.1, "g2"), (2, 2.8, "g3"), (3, 4.2, "g4"),
        (4, 3.5, "g1"), (5, 2.1, "g2"), (6, 2.8, "g3"), (7, 4.2, "g4"),
    ],
}


@dataclass(frozen=True)
class SimulationScenario:
    """One simulation cell: model, size, correlation level and seed.

    Covariates are ``z_ij = (w_ij + t u_i) / (1 + t)`` with independent
    uniforms, so ``t`` controls the common-factor correlation.
    """

    model_id: str = "model1"
    n: int = 400
    d: int = 1000
    t: float = 0.0
    noise_sd: float = DEFAULT_NOISE_SD
    seed: int = 0

    def __post_init__(self):
        if self.model_id not in MODEL_TERMS:
            raise ValueError(f"unknown model {self.model_id!r}; expected one of {sorted(MODEL_TERMS)}")
        need = len(MODEL_TERMS[self.model_id])
        if self.d < need:
            raise ValueError(f"{self.model_id} needs d >= {need}, got {self.d}")
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.t < 0:
            raise ValueError("t must be >= 0")
        if not self.noise_sd >= 0:
            raise ValueError("noise_sd must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class TrueModel:
    active_set: tuple[int, ...]
    component_functions: tuple[tuple[int, float, str], ...]
    mu: np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream seeded through ``SeedSequence``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def derive_seed(seed: int, replication: int) -> int:
    """64-bit seed for replication ``replication`` of master seed ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replication),))
    return int(ss.generate_state(1, np.uint64)[0])


def generate(scenario: SimulationScenario) -> tuple[Dataset, TrueModel]:
    rng = make_rng(scenario.seed)
    n, d, t = scenario.n, scenario.d, scenario.t
    u = rng.random(n)
    w = rng.random((n, d))
    z = (w + t * u[:, None]) / (1.0 + t)
    eps = rng.standard_normal(n)
    terms = MODEL_TERMS[scenario.model_id]
    mu = np.zeros(n)
    for j, coef, name in terms:
        mu += coef * COMPONENT_FUNCTIONS[name](z[:, j])
    y = mu + scenario.noise_sd * eps
    truth = TrueModel(tuple(j for j, _, _ in terms), tuple(terms), mu)
    return Dataset(y, z), truth


# --- CSV ingestion ------------------------------------------------------------

def _parse_float(cell: str, row: int, col: int) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise DataLoadError(f"non-numeric cell {cell!r} at row {row}, column {col}") from None
    if not math.isfinite(value):
        raise DataLoadError(f"missing or non-finite value {cell!r} at row {row}, column {col}")
    return value


def load_csv(path, response_column: str | int = 0, rescale: bool = False) -> Dataset:
    """Read a numeric CSV (optional header) into a :class:`Dataset`.

    ``response_column`` is a header name or a 0-based index. Covariates must
    already lie in [0, 1] unless ``rescale`` is set, in which case each is
    min-max scaled and the map is kept on the dataset.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataLoadError(f"{path}: empty file")

    header = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    width = len(header) if header else len(rows[0])

    if isinstance(response_column, str) and not response_column.lstrip("-").isdigit():
        if header is None or response_column not in header:
            raise DataLoadError(f"{path}: response column {response_column!r} not found in header")
        ycol = header.index(response_column)
    else:
        ycol = int(response_column)
        if not 0 <= ycol < width:
            raise DataLoadError(f"{path}: response index {ycol} out of range for {width} columns")

    first = 2 if header else 1
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataLoadError(f"row {i + first}: expected {width} fields, got {len(row)}")
        values[i] = [_parse_float(c.strip(), i + first, k) for k, c in enumerate(row)]

    y = values[:, ycol]
    keep = [k for k in range(width) if k != ycol]
    z = values[:, keep]
    names = [header[k] for k in keep] if header else [str(k) for k in keep]
    scale = None
    if rescale:
        lo, hi = z.min(axis=0), z.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        scale = Rescale(lo, span)
        z = np.clip(scale.apply(z), 0.0, 1.0)
    else:
        out = np.flatnonzero(np.any((z < 0.0) | (z > 1.0), axis=0))
        if out.size:
            k = out[0]
            r = int(np.flatnonzero((z[:, k] < 0) | (z[:, k] > 1))[0])
            raise DataLoadError(
                f"covariate column {names[k]!r} has values outside [0, 1] "
                f"(row {r + first}: {z[r, k]!r}); pass rescale=True to min-max scale"
            )
    try:
        return Dataset(y, z, scale)
    except ValueError as exc:
        raise DataLoadError(str(exc)) from None


def save_csv(path, dataset: Dataset, header: bool = True) -> None:
    """Write ``y`` followed by the covariates; the inverse of :func:`load_csv` with response 0."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow(["y"] + [f"z{j}" for j in range(dataset.d)])
        for yi, zi in zip(dataset.y, dataset.z):
            w.writerow([repr(float(yi))] + [repr(float(v)) for v in zi])


# --- centered design ----------------------------------------------------------

def center_response(y) -> tuple[float, np.ndarray]:
    """``(y_bar, y - y_bar)``; a constant response centers to exact zeros."""
    y = np.asarray(y, dtype=float)
    y_bar = float(y[0]) if np.all(y == y[0]) else float(y.mean())
    return y_bar, y - y_bar


@dataclass(frozen=True, eq=False)
class CenteredDesign:
    """Centered basis blocks for every covariate, with their Gram matrices.

    ``blocks[j]`` is the ``n x m`` matrix of centered basis values for
    covariate ``j``; ``gram[j] = blocks[j].T @ blocks[j] / n``.
    """

    basis: SplineBasis
    blocks: np.ndarray
    column_means: np.ndarray
    gram: np.ndarray
    gram_sqrt: np.ndarray
    gram_sqrt_pinv: np.ndarray
    y_bar: float
    transform: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.blocks.shape[1]

    @property
    def d(self) -> int:
        return self.blocks.shape[0]

    @property
    def m(self) -> int:
        return self.blocks.shape[2]

    @cached_property
    def whitened(self) -> np.ndarray:
        """Blocks mapped through the generalized inverse square root of their Gram."""
        return np.ascontiguousarray(self.blocks @ self.gram_sqrt_pinv)

    def stacked(self, groups=None) -> np.ndarray:
        """``n x (|groups| m)`` matrix of the selected blocks side by side."""
        groups = range(self.d) if groups is None else list(groups)
        if not groups:
            return np.zeros((self.n, 0))
        return np.concatenate([self.blocks[j] for j in groups], axis=1)

    def raw_features(self, z) -> np.ndarray:
        """Basis features (before centering) for new covariate rows; shape ``(q, d, m)``."""
        x = self.basis(np.asarray(z, dtype=float))
        if self.transform is not None:
            x = np.einsum("qjk,jkl->qjl", x, self._transform_stack())
        return x

    def _transform_stack(self) -> np.ndarray:
        t = np.asarray(self.transform)
        return np.broadcast_to(t, (self.d,) + t.shape[-2:]) if t.ndim == 2 else t


def build_centered_design(dataset: Dataset, basis: SplineBasis, transform=None) -> CenteredDesign:
    """Evaluate, center and orthonormalize the basis for every covariate.

    ``transform`` optionally right-multiplies each basis block, either one
    ``m x m`` matrix for all covariates or a ``d x m x m`` stack (used for
    whitened designs).
    """
    n, d = dataset.n, dataset.d
    x = basis(dataset.z)                      # (n, d, m)
    if transform is not None:
        t = np.asarray(transform, dtype=float)
        x = np.einsum("njk,jkl->njl", x, np.broadcast_to(t, (d,) + t.shape[-2:]) if t.ndim == 2 else t)
    means = x.mean(axis=0)                    # (d, m)
    blocks = np.ascontiguousarray(np.transpose(x - means, (1, 0, 2)))
    gram = np.einsum("jik,jil->jkl", blocks, blocks) / n
    gram = 0.5 * (gram + np.swapaxes(gram, 1, 2))
    root, pinv = sym_sqrt_and_pinv(gram)
    return CenteredDesign(basis, blocks, means, gram, root, pinv, float(dataset.y.mean()),
                          None if transform is None else np.asarray(transform, dtype=float))
