import itertools
import math

import numpy as np
import pytest

from nafaudit.core import sequence_logprob

_ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, title, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    _ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {title}" + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def brute_force_law(model, prompt, length, n_tokens):
    """Probability of every sequence over the first ``n_tokens`` ids, by independent chain-rule products."""
    out = {}
    for y in itertools.product(range(n_tokens), repeat=length):
        ctx = list(prompt)
        prob = 1.0
        for t in y:
            prob *= float(model.next_distribution(tuple(ctx))[t])
            ctx.append(t)
        out[y] = prob
    return out


def random_dist(rng, k, full_support=True):
    d = rng.dirichlet(np.ones(k))
    if full_support:
        d = np.maximum(d, 1e-6)
        d /= d.sum()
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
