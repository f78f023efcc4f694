import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from missreg.patterns import group_by_pattern

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.register_profile("ci", parent=settings.get_profile("default"), max_examples=15)
settings.load_profile("default")


def random_missing_arrays(seed, p, n, obs_prob, N=0):
    """(X with nan, y, U). Row 0 is complete so every variable pair is observed."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    y = X @ rng.standard_normal(p) + rng.standard_normal(n)
    mask = rng.random((n, p)) < obs_prob
    mask[0] = True
    empty = ~mask.any(axis=1)
    mask[empty, rng.integers(0, p, empty.sum())] = True
    Xm = np.where(mask, X, np.nan)
    U = rng.standard_normal((N, p))
    return Xm, y, U


@st.composite
def missing_arrays(draw, p_max=5, n_max=40, N_max=10):
    seed = draw(st.integers(0, 2 ** 32 - 1))
    p = draw(st.integers(2, p_max))
    n = draw(st.integers(p + 2, n_max))
    obs = draw(st.floats(0.4, 0.95))
    N = draw(st.integers(0, N_max))
    return random_missing_arrays(seed, p, n, obs, N)


@st.composite
def missing_datasets(draw, **kw):
    X, y, U = draw(missing_arrays(**kw))
    return group_by_pattern(X, y, U if len(U) else None)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria register here; the summary hook prints one line each
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
