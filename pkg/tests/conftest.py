import numpy as np
import pytest

from phev_ems.cycle import repeat, synth_cycle
from phev_ems.powertrain import Powertrain


@pytest.fixture(scope="session")
def pt():
    return Powertrain.default()


@pytest.fixture(scope="session")
def synth():
    return synth_cycle(0)


@pytest.fixture(scope="session")
def synth3(synth):
    return repeat(synth, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated in the terminal summary
_CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    def record(number: int, ok: bool, detail: str) -> bool:
        prev = _CRITERIA.get(number)
        ok = bool(ok) and (prev is None or prev[0])
        detail = detail if prev is None else f"{prev[1]}; {detail}"
        _CRITERIA[number] = (ok, detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
