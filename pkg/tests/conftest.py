import json

import pytest

from dcflow import Scenario, parse_scenario, scenario_path

# scoreboard lines contributed by the acceptance tests, echoed as a
# terminal section so they survive output capture
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance")
        for line in VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fig5() -> Scenario:
    return parse_scenario(scenario_path("fig5").read_text(), name="fig5")


@pytest.fixture(scope="session")
def fig5_json() -> dict:
    return json.loads(scenario_path("fig5").read_text())
