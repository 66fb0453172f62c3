import pytest

_RESULTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def record_criterion(request):
    """Store the one-line verdict for an acceptance criterion (printed at the end of the run)."""
    results = request.config.stash[_RESULTS]

    def record(number, passed, detail):
        results[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(results[number])
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
