import contextlib
import time

import pytest

_RESULTS: dict[int, tuple[bool, str, str]] = {}


class _Outcome:
    def __init__(self):
        self.detail = ""


@pytest.fixture
def criterion():
    """Context manager that records one acceptance criterion's outcome.

    Usage: ``with criterion(3, "name") as out: ...; out.detail = "..."``.
    A failing assertion inside the block is recorded and re-raised.
    """

    @contextlib.contextmanager
    def record(number: int, name: str):
        out = _Outcome()
        start = time.perf_counter()
        try:
            yield out
        except BaseException as exc:
            msg = str(exc).strip().splitlines()[0] if str(exc).strip() else type(exc).__name__
            _RESULTS[number] = (False, name, f"{msg} after {time.perf_counter() - start:.1f}s")
            raise
        _RESULTS[number] = (True, name, out.detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        ok, name, detail = _RESULTS[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {name}: {detail}")
