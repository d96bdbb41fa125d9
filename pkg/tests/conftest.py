import pytest

AC_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[AC_LINES] = []


@pytest.fixture
def acceptance_report(request):
    """Record one pass/fail line per acceptance criterion; printed at the end of the run."""
    def record(criterion: str, passed: bool, detail: str):
        line = f"{criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        request.config.stash[AC_LINES].append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(AC_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0][2:])):
            terminalreporter.write_line(line)
