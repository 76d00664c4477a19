import numpy as np
import pytest
from hypothesis import strategies as st
from scipy import stats

from odlab.dynamics import Configuration


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@st.composite
def configurations(draw, max_n=60, max_k=6, allow_zero=True):
    k = draw(st.integers(1, max_k))
    lo = 0 if allow_zero else 1
    counts = draw(st.lists(st.integers(lo, max_n), min_size=k, max_size=k))
    if sum(counts) == 0:
        counts[0] = 1
    return Configuration(counts)


def chi_square_pvalue(observed: dict, expected: dict, draws: int, min_expected: float = 5.0) -> float:
    """Goodness of fit of sampled count vectors against an exact PMF.

    Cells with expected count below ``min_expected`` are pooled into one bin.
    """
    obs, exp = [], []
    pool_obs = pool_exp = 0.0
    for key, p in expected.items():
        e = p * draws
        o = observed.get(key, 0)
        if e < min_expected:
            pool_obs += o
            pool_exp += e
        else:
            obs.append(o)
            exp.append(e)
    stray = sum(v for key, v in observed.items() if key not in expected)
    assert stray == 0, "sampler produced a count vector outside the exact support"
    if pool_exp > 0:
        obs.append(pool_obs)
        exp.append(pool_exp)
    exp = np.array(exp)
    exp *= sum(obs) / exp.sum()
    return float(stats.chisquare(obs, exp).pvalue)


ACCEPTANCE_LINES: list = []


def report(criterion: int, title: str, passed: bool, detail: str) -> None:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion:>2}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
