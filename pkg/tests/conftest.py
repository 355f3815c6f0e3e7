import sys

import pytest

from dartvb.panel import MarketCalendar
from dartvb.synth import synth_panel


@pytest.fixture(scope="session")
def small_panel():
    panel, truth = synth_panel(3, 24 * 12)
    return panel, truth


@pytest.fixture(scope="session")
def nyiso():
    return MarketCalendar.for_market("NYISO")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
