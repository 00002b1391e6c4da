from pathlib import Path

import numpy as np
import pytest

from concgram.model import MixtureModel
from concgram.numerics import RngStream

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def stream():
    return RngStream(20240611, 0)


def random_model(rng, p=None, k=None, counts=None, mean_scale=1.0):
    """Small random mixture with PSD second moments."""
    p = p or int(rng.integers(3, 12))
    k = k or int(rng.integers(1, 4))
    means = mean_scale * rng.standard_normal((p, k))
    covs = []
    for _ in range(k):
        A = rng.standard_normal((p, p)) / np.sqrt(p)
        covs.append(A @ A.T + 0.1 * np.eye(p))
    if counts is None:
        counts = rng.integers(2, 9, size=k)
    return MixtureModel.from_covariances(means, np.stack(covs), counts)


@pytest.fixture
def make_model():
    return random_model


# one line per acceptance criterion, repeated in the terminal summary so the
# verdicts stay visible when pytest captures test output
ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
