import pytest

N_CRITERIA = 9


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for an acceptance criterion, then assert it."""
    results = request.config.stash.setdefault(_KEY, {})

    def record(k: int, ok: bool, detail: str):
        results[k] = (bool(ok), detail)
        assert ok, f"criterion {k}: {detail}"

    return record


_KEY = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_KEY, None)
    if results is None:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        if k in results:
            ok, detail = results[k]
            terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {k}: FAIL  (no result recorded)")
