import math
from collections import Counter

import numpy as np
import pytest

from aqtc.data import SyntheticConfig, generate_synthetic
from aqtc.model import ModelParams


def central_diff(fn, x, step=1e-5):
    """Numeric gradient of the scalar numpy function ``fn`` at ``x``."""
    grad = np.zeros_like(x)
    for k in range(x.size):
        plus, minus = x.copy(), x.copy()
        plus.flat[k] += step
        minus.flat[k] -= step
        grad.flat[k] = (fn(plus) - fn(minus)) / (2 * step)
    return grad


def brute_force_weights(docs, question):
    """Dict-and-loop tf-idf cosine, clamped and sum-normalized."""
    n = len(docs)
    vocab = sorted({t for d in docs for t in d})
    df = {t: sum(1 for d in docs if t in d) for t in vocab}
    idf = {t: math.log((1 + n) / (1 + df[t])) + 1 for t in vocab}

    def vec(tokens):
        counts = Counter(t for t in tokens if t in idf)
        return {t: c * idf[t] for t, c in counts.items()}

    def cosine(a, b):
        na = math.sqrt(sum(v * v for v in a.values()))
        nb = math.sqrt(sum(v * v for v in b.values()))
        if na == 0 or nb == 0:
            return 0.0
        return sum(a[t] * b.get(t, 0.0) for t in a) / (na * nb)

    q = vec(question)
    sims = [max(0.0, cosine(q, vec(d))) for d in docs]
    total = sum(sims)
    if total < 1e-12:
        return [1.0 / n] * n
    return [s / total for s in sims]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_ds():
    return generate_synthetic(SyntheticConfig(num_videos=3, m=4, d=8, samples_per_video=4,
                                              steps_per_sample=2, n_candidates=3, noise_sigma=0.05,
                                              vocab_per_function=4, seed=5))


@pytest.fixture(scope="session")
def small_params():
    return ModelParams.init(8, 3)


# one summary line per acceptance criterion

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when == "teardown" and report.passed:
        return
    n, title = mark.args
    if report.failed or report.when == "call":
        prev = _CRITERIA.get(n, (title, True))[1]
        _CRITERIA[n] = (title, prev and report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, ok = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}")
