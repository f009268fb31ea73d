import pytest

from helpers import mock_gateway


@pytest.fixture(scope="session")
def gateway():
    """One shared mock-embedding gateway; its cache is append-only, so sharing is safe."""
    return mock_gateway(dim=64)


_ACCEPTANCE_RESULTS = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and report.when == "call":
        _ACCEPTANCE_RESULTS[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid in sorted(_ACCEPTANCE_RESULTS):
        name = nodeid.split("::")[-1]
        outcome = _ACCEPTANCE_RESULTS[nodeid].upper()
        terminalreporter.write_line(f"{'PASS' if outcome == 'PASSED' else outcome}: {name}")
