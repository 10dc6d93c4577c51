import numpy as np
import pytest

from spacenet.config import parse_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_config():
    def make(**overrides):
        base = {"seed": 3, "n_receivers": 40, "epochs": 3}
        base.update(overrides)
        return parse_config(base)

    return make


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record a one-line verdict for an acceptance criterion."""

    def record(n: int, ok: bool, detail: str) -> bool:
        _CRITERIA[n] = f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_CRITERIA[n])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])
