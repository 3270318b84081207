import numpy as np
import pytest

from laminar import tensor as T


@pytest.fixture(scope="session", autouse=True)
def dataset_cache(tmp_path_factory):
    root = tmp_path_factory.mktemp("cache")
    mp = pytest.MonkeyPatch()
    mp.setenv("LAMINAR_CACHE", str(root))
    yield root
    mp.undo()


@pytest.fixture(autouse=True)
def fresh_tape():
    T.get_tape().clear()
    T.set_seed(0)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def report():
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""
    def _report(n: int, title: str, ok: bool, detail: str = ""):
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        _CRITERIA[n] = line
        print(line)
        assert ok, line
    return _report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[n])
