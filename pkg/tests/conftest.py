import time
from contextlib import contextmanager

import numpy as np
import pytest

from zipdefense.schedule import make_linear_schedule

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sched1000():
    return make_linear_schedule(1000, 1e-4, 0.02)


@pytest.fixture(scope="session")
def sched50():
    return make_linear_schedule(50, 1e-4, 0.02)


@contextmanager
def _record(label: str, budget_s: float | None):
    start = time.perf_counter()
    ok, note = False, ""
    try:
        yield
        elapsed = time.perf_counter() - start
        ok = budget_s is None or elapsed < budget_s
        note = f"{elapsed:.2f}s" + ("" if budget_s is None else f" (budget {budget_s:g}s)")
        if not ok:
            raise AssertionError(f"{label}: took {elapsed:.2f}s, budget {budget_s}s")
    except BaseException as exc:
        note = note or f"{type(exc).__name__}: {exc}"
        raise
    finally:
        _ACCEPTANCE.append((label, ok, note))


@pytest.fixture
def criterion():
    """``with criterion("1. operator laws", budget_s=1): ...`` records a pass/fail line."""
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, note in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  [{note}]")
