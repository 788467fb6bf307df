import pytest

from sdsim import ClusterConfig, Job


def job(id, submit=0, req=100, runtime=None, nodes=1, malleable=True, rpn=1, prio=None):
    return Job(id, submit, req, req if runtime is None else runtime, nodes, rpn, malleable,
               id if prio is None else prio)


@pytest.fixture
def two_nodes():
    return ClusterConfig(2)


@pytest.fixture
def small():
    return ClusterConfig(4, 2, 4)


# (criterion, passed, detail) rows filled in by test_acceptance.py
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
