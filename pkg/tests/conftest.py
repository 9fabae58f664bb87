import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from distlr.synth import PanelConfig, generate_panel
from distlr.traces import TraceMatrix, normalize_log

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_matrix(X, subjects, mode="raw", genders=None):
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    reps = []
    seen = {}
    for s in subjects:
        seen[s] = seen.get(s, 0) + 1
        reps.append(f"r{seen[s]}")
    genders = genders or ["unknown"] * n
    return TraceMatrix(X, tuple(subjects), tuple(reps), tuple(genders), (None,) * n,
                       tuple(f"f_{k + 1}" for k in range(X.shape[1])), mode)


@pytest.fixture(scope="session")
def small_panel():
    cfg = PanelConfig(n_subjects=30, n_features=12, n_informative=4, within_subject_sd=0.3,
                      seed=11)
    return normalize_log(generate_panel(cfg))


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion."""

    def emit(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
