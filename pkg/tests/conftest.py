import json
from pathlib import Path

import pytest

from scamp.priors import SignalPrior

ORACLES = json.loads((Path(__file__).parent / "oracles" / "frozen_values.json").read_text())


@pytest.fixture(scope="session")
def oracles():
    return ORACLES


@pytest.fixture(scope="session")
def bg():
    return SignalPrior.bernoulli_gaussian(0.1)


@pytest.fixture(scope="session")
def binary():
    return SignalPrior.discrete([(-1.0, 0.5), (1.0, 0.5)])


@pytest.fixture(scope="session")
def three_point():
    return SignalPrior.mixture([(-1.0, 0.25), (1.0, 0.25)], 0.5)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def report(criterion: int, ok: bool, detail: str):
    ACCEPTANCE[criterion] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
