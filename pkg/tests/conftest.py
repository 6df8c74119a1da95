from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sphereproc.densities import sample_uniform_sphere
from sphereproc.pattern import BoxWindow, SpaceSpherePattern
from sphereproc.sim import make_rng, sim_poisson

settings.register_profile(
    "default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_pattern(rng, n, d=1, k=2, sides=None):
    """Uniform pattern of exactly ``n`` points in a box with the given sides."""
    sides = np.ones(d) if sides is None else np.asarray(sides, dtype=float)
    window = BoxWindow(np.zeros(d), sides)
    y = rng.random((n, d)) * sides
    u = sample_uniform_sphere(n, k, rng)
    return SpaceSpherePattern(y, u, window, k)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def unit_window():
    return BoxWindow.unit(1)


@pytest.fixture
def poisson_pattern():
    """About 250 points on [0, 1] x S^2."""
    return sim_poisson(20.0, BoxWindow.unit(1), 2, make_rng(5))


@pytest.fixture
def toy_pattern():
    """Two points at spatial lag 0.4 and geodesic lag pi/2."""
    return SpaceSpherePattern([[0.2], [0.6]], [[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]], BoxWindow.unit(1), 2)


@pytest.fixture
def small_grids():
    return np.linspace(0.02, 0.2, 6), np.linspace(0.2, math.pi, 6)


# ---------------------------------------------------------------- acceptance reporting

ACCEPTANCE_LINES: list[str] = []


class Criterion:
    """Collects the sub-checks of one acceptance criterion into a single PASS/FAIL line."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.parts: list[str] = []
        self.ok = True
        self.done = False

    def check(self, condition, detail: str) -> None:
        condition = bool(condition)
        self.ok &= condition
        self.parts.append(detail if condition else f"FAILED {detail}")

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} criterion {self.number:>2}: {self.title} | " + "; ".join(self.parts)

    def finish(self) -> None:
        self.done = True
        text = self.line()
        ACCEPTANCE_LINES.append(text)
        print(text)
        assert self.ok, text


@pytest.fixture
def criterion():
    made: list[Criterion] = []

    def make(number: int, title: str) -> Criterion:
        c = Criterion(number, title)
        made.append(c)
        return c

    yield make
    for c in made:
        if not c.done:
            c.ok = False
            c.parts.append("did not complete")
            ACCEPTANCE_LINES.append(c.line())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for text in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(text)
