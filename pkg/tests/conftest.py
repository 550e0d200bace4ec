import os
import warnings
from pathlib import Path

import pytest

import acceptance_log
import bank_like

FIXTURES = Path(__file__).parent / "fixtures"
OFFLINE = FIXTURES / "offline"
REPO = Path(__file__).resolve().parent.parent

def bank_csv_path():
    """Location of the UCI bank-additional-full.csv file, or None when absent."""
    candidates = [os.environ.get("BOOLRULE_BANK_CSV"), REPO / "data" / "bank-additional-full.csv"]
    for c in candidates:
        if c and Path(c).is_file():
            return Path(c)
    return None


@pytest.fixture(scope="session")
def bank_like_csv(tmp_path_factory):
    return bank_like.write_csv(tmp_path_factory.mktemp("data") / "bank_like.csv", n=3000, seed=7)


@pytest.fixture
def offline_dir():
    return OFFLINE


@pytest.fixture
def quiet_lt():
    """Silence the '<' normalisation warning for rules copied from print."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def pytest_terminal_summary(terminalreporter):
    lines = acceptance_log.LINES
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(lines):
        terminalreporter.write_line(lines[number])
