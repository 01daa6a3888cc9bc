from __future__ import annotations

import numpy as np
import pytest

from wavestab.dn_solver import StripGrid
from wavestab.soliton import Grid1D, build_profile
from wavestab.symbols import Params
from wavestab.waveop import spectral_projection, trace_resonant_modes


class Setup:
    """Parameters, grids, profile and (lazily) the traced curve and projector."""

    def __init__(self, epsilon: float, N: int, M: int = 24, samples: int = 9, a_hat: float = 0.4):
        self.params = Params(epsilon=epsilon, a_hat=a_hat)
        self.grid = Grid1D(30.0 / epsilon, N)
        self.strip = StripGrid(self.grid, M)
        self.profile = build_profile(epsilon, self.grid)
        self.samples = samples
        self._curve = None
        self._projector = None

    @property
    def eta_max(self) -> float:
        return self.params.epsilon**2 * self.params.eta_hat0

    @property
    def curve(self):
        if self._curve is None:
            etas = np.linspace(-self.eta_max, self.eta_max, self.samples)
            self._curve = trace_resonant_modes(self.params, etas, self.strip, self.profile)
        return self._curve

    @property
    def projector(self):
        if self._projector is None:
            self._projector = spectral_projection(self.eta_max, self.curve, self.params, self.strip)
        return self._projector


_SETUPS: dict = {}


def get_setup(epsilon: float, N: int, M: int = 24, samples: int = 9) -> Setup:
    key = (epsilon, N, M, samples)
    if key not in _SETUPS:
        _SETUPS[key] = Setup(epsilon, N, M, samples)
    return _SETUPS[key]


@pytest.fixture(scope="session")
def setup_factory():
    """Shared, memoised setups so that expensive traces run once per session."""
    return get_setup


@pytest.fixture(scope="session")
def small(setup_factory) -> Setup:
    """eps = 0.05 on N = 256 with a 9-sample curve: the workhorse for unit tests."""
    return setup_factory(0.05, 256)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log() -> list[str]:
    """Collects one PASS/FAIL line per acceptance criterion."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
