from dataclasses import dataclass

import numpy as np
import pytest

from optpot.fem import build_structured_mesh


@dataclass(frozen=True)
class Modes:
    """Smooth random data: ``offset + sum a_kl cos(k pi x) cos(l pi y)``, optionally squared."""

    coeffs: tuple
    offset: float = 0.0
    square: bool = False

    def __call__(self, x, y):
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        a = np.asarray(self.coeffs)
        out = np.full(x.shape, self.offset)
        for k in range(a.shape[0]):
            for l in range(a.shape[1]):
                out = out + a[k, l] * np.cos(k * np.pi * x) * np.cos(l * np.pi * y)
        return out**2 if self.square else out


def random_field(rng, kind="mixed", size=4):
    coeffs = tuple(map(tuple, rng.normal(size=(size, size))))
    if kind == "nonneg":
        return Modes(coeffs, square=True)
    return Modes(coeffs, offset=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20171)


@pytest.fixture(scope="session")
def mesh2():
    return build_structured_mesh(2, 2)


@pytest.fixture(scope="session")
def mesh16():
    return build_structured_mesh(16, 16)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
