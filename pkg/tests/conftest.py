import pytest

from cavityreadout.params import device_config

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def device():
    return device_config()


@pytest.fixture(scope="session")
def p(device):
    return device[0]


@pytest.fixture(scope="session")
def chain(device):
    return device[1]


@pytest.fixture
def verdict():
    """Record one acceptance line: verdict(label, ok, detail)."""

    def record(label, ok, detail):
        line = f"{label}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        _ACCEPTANCE.append((label, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(_ACCEPTANCE, key=lambda r: int(r[0].split()[1].rstrip("abc"))):
        terminalreporter.write_line(f"{label}: {'PASS' if ok else 'FAIL'} - {detail}")
