import numpy as np
import pytest

from gpmdl.latents import MultiLatentBatch


def make_batch(rng, b=40, d=3, K=1, C=2, spread=1.0):
    mu = [rng.normal(scale=spread, size=(b, d)) for _ in range(K)]
    sigma = [rng.uniform(0.3, 1.5, (b, d)) for _ in range(K)]
    y = np.arange(b) % C
    rng.shuffle(y)
    return MultiLatentBatch(mu, sigma, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
