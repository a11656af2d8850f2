import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from twostep.basis import make_bspline_basis  # noqa: E402
from twostep.data import Dataset, build_centered_design, make_rng  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def tiny_instance(seed: int, n: int | None = None, d: int | None = None, m: int | None = None):
    """Seeded small problem with a sparse smooth signal; sizes drawn from n=20..40, d=3..5, m=2..3."""
    rng = make_rng(1000 + seed)
    n = n or int(rng.integers(20, 41))
    d = d or int(rng.integers(3, 6))
    m = m or int(rng.integers(2, 4))
    z = rng.random((n, d))
    y = 2.0 * np.sin(2 * np.pi * z[:, 0]) + (z[:, 1] - 0.5) + 0.5 * rng.standard_normal(n)
    ds = Dataset(y, z)
    # degree 1 with m - 1 interior knots exposes m functions
    basis = make_bspline_basis(1, m - 1) if m > 1 else make_bspline_basis(1, 0)
    return ds, build_centered_design(ds, basis)


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
