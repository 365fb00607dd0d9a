import numpy as np
import pytest

from simcon.numerics import l2_normalize_rows


def unit_rows(rng, n, d):
    return np.array(l2_normalize_rows(rng.standard_normal((n, d))))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail), filled through the ``acceptance`` fixture
_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record a criterion's verdict (printed after the run) and assert it."""
    verdicts = request.config.stash.setdefault(_VERDICTS, {})

    def record(k, ok, detail):
        verdicts[k] = (bool(ok), detail)
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    verdicts = terminalreporter.config.stash.get(_VERDICTS, {})
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(verdicts):
        ok, detail = verdicts[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
