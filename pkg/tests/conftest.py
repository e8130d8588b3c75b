import numpy as np
import pytest

from ascapower.design import build_coding_matrix, build_run_table, degrees_of_freedom, reference_model

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def ref_model():
    return reference_model()


@pytest.fixture(scope="session")
def ref_table(ref_model):
    return build_run_table(ref_model)


@pytest.fixture(scope="session")
def ref_coding(ref_table):
    return build_coding_matrix(ref_table)


@pytest.fixture(scope="session")
def ref_dof(ref_model, ref_table):
    return degrees_of_freedom(ref_model, ref_table)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance_report():
    def report(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
