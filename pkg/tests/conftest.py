import sys

import pytest

from ladderdoh.certs import init_ca


@pytest.fixture(scope="session")
def ca():
    return init_ca("Test Root")


@pytest.fixture
def root_pem(ca, tmp_path):
    path = tmp_path / "root.pem"
    ca.export(path)
    return path


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.REPORT:
        terminalreporter.write_line(line)
