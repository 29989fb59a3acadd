import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_spd(rng, K, cond=50.0):
    """Random SPD matrix with eigenvalues spread over [1, cond]."""
    Q, _ = np.linalg.qr(rng.standard_normal((K, K)))
    lam = np.exp(rng.uniform(0, np.log(cond), K))
    return (Q * lam) @ Q.T


def mc_z(values, target):
    """Standardized distance of a sample mean from ``target``."""
    v = np.asarray(values, dtype=float)
    return (v.mean() - target) / (v.std(ddof=1) / np.sqrt(v.size))


ACCEPTANCE_LINES = []


def report(number, title, ok, detail):
    """Record and print a one-line acceptance verdict."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title} | {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
