import pytest

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request):
    """``report(number, title, ok, detail)`` prints one PASS/FAIL line and asserts."""

    def report(number, title, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} ({title}): {detail}"
        print(line)
        request.config.stash[ACCEPTANCE_LINES].append(line)
        assert ok, line

    return report
