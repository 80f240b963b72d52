import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from geosep import Dataset


def random_instance(rng, dim=None, classes=None, max_points=200):
    """A random labeled training set plus a query point near it."""
    dim = dim or int(rng.integers(1, 11))
    classes = classes or int(rng.integers(2, 6))
    n = int(rng.integers(classes, max_points + 1))
    centers = rng.normal(scale=1.0, size=(classes, dim))
    labels = np.concatenate([np.arange(classes), rng.integers(0, classes, n - classes)])
    feats = centers[labels] + rng.normal(scale=0.7, size=(n, dim))
    data = Dataset(feats, [f"k{c}" for c in labels])
    x = feats[rng.integers(n)] + rng.normal(scale=0.5, size=dim)
    pred = f"k{int(rng.integers(classes))}"
    return data, x, pred


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def toy_index():
    from geosep import build_index

    return build_index(Dataset([[1.0], [3.0]], ["A", "B"]))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
