import pytest

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion; the caller still asserts."""
    lines = request.config.stash[_LINES]

    def record(tag, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {tag}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
