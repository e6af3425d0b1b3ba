from pathlib import Path

import numpy as np
import pytest

from lstmq88.cli import reference_model_path
from lstmq88.model_io import load_model_file
from lstmq88.pwl import default_tables

# filled by test_acceptance.py, printed once at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tables():
    return default_tables()


@pytest.fixture(scope="session")
def reference_model():
    return load_model_file(reference_model_path())


@pytest.fixture(scope="session")
def reference_model_bytes():
    return Path(reference_model_path()).read_bytes()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
