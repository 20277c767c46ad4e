import numpy as np
import pytest

from weaksupcon.losses import ContrastiveBatch


def central_differences(f, x, h=1e-4):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f(x)
        x[idx] = old - h
        down = f(x)
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def max_rel_err(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def random_batch(rng, n=None, d=None, tau=None, labels=None):
    n = n or int(rng.integers(2, 9))
    d = d or int(rng.integers(3, 17))
    tau = tau or float(rng.choice([0.1, 0.5, 1.0]))
    if labels is None:
        labels = rng.integers(0, 2, size=n)
    z = rng.standard_normal((2 * n, d))
    return ContrastiveBatch.from_pairs(z, np.concatenate([labels, labels]), tau)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


VERDICTS = []


def record_verdict(name, ok, detail):
    VERDICTS.append((name, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
