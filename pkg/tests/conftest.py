import pytest

ACCEPTANCE_LINES = []


def pytest_addoption(parser):
    parser.addoption("--long", action="store_true", default=False, help="run the slow acceptance criteria")


def pytest_configure(config):
    config.addinivalue_line("markers", "long: slow test, only run with --long")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--long"):
        return
    skip = pytest.mark.skip(reason="needs --long")
    for item in items:
        if "long" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
