import mpmath
import numpy as np
import pytest


def fd_grad(f, x, h=1e-6):
    """Central finite differences of scalar ``f`` at ``x`` (test-side oracle)."""
    x = np.array(x, dtype=np.float64, copy=True)
    g = np.zeros_like(x)
    xf, gf = x.reshape(-1), g.reshape(-1)
    for j in range(xf.size):
        orig = xf[j]
        xf[j] = orig + h
        fp = f(x)
        xf[j] = orig - h
        fm = f(x)
        xf[j] = orig
        gf[j] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def naive_weighted_loss(s, positives, tau, reward=None, dps=50):
    """Mean weighted-softmax loss by direct summation in arbitrary precision (no log-sum-exp)."""
    with mpmath.workdps(dps):
        total = mpmath.mpf(0)
        n, m = s.shape
        for i in range(n):
            p = int(positives[i])
            num = mpmath.exp(mpmath.mpf(s[i, p]) / tau)
            den = num
            for j in range(m):
                if j == p:
                    continue
                r = 0 if reward is None else mpmath.mpf(reward[i, j])
                den += mpmath.exp(mpmath.mpf(s[i, j]) / tau + r)
            total += -mpmath.log(num / den)
        return float(total / n)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
