import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hdgpfc.assembly import Discretization  # noqa: E402
from hdgpfc.mesh import build_cartesian_mesh  # noqa: E402


def random_state(disc: Discretization, rng, lo=-0.9, hi=0.9):
    st = disc.zero_state(0.0)
    for n in ("phi", "psi", "mu", "r", "q", "p", "s", "phibar", "psibar", "mubar"):
        setattr(st, n, rng.uniform(lo, hi, getattr(st, n).shape))
    return st


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_disc(nx=2, ny=2, k=1, coupling="edg", periodic=False, L=1.0):
    mesh = build_cartesian_mesh(0.0, L, 0.0, 0.8 * L, nx, ny, periodic, periodic)
    return Discretization(mesh, k, coupling)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
