import numpy as np
import pytest
from hypothesis import settings

from trailer_nav.geometry import make_polygon

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_convex_polygon(rng, n_min=3, n_max=8, radius=(0.5, 3.0)):
    """Vertices on a circle at sorted random angles, so the polygon is convex."""
    while True:
        n = int(rng.integers(n_min, n_max + 1))
        ang = np.sort(rng.uniform(0.0, 2 * np.pi, n))
        gaps = np.diff(np.concatenate([ang, ang[:1] + 2 * np.pi]))
        if gaps.min() < 0.05 or gaps.max() > 0.95 * np.pi:
            continue
        r = rng.uniform(*radius)
        c = rng.uniform(-2, 2, 2)
        return make_polygon(c + r * np.column_stack([np.cos(ang), np.sin(ang)]))


@pytest.fixture
def unit_square():
    return make_polygon([(0, 0), (1, 0), (1, 1), (0, 1)])


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
