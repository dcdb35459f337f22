import copy
import sys

import pytest

from throttlesim.config import parse_config

CHAIN = {
    "seed": 5,
    "app": {
        "services": [
            {"id": "front", "quota_max": 4, "demand": {"req": 2}},
            {"id": "mid", "quota_max": 4, "demand": {"req": 5}},
            {"id": "db", "quota_max": 4, "demand": {"req": 20}},
        ],
        "call_graph": {"req": [["front"], ["mid"], ["db"]]},
        "composition": {"req": 1.0},
    },
    "trace": {"kind": "constant", "duration_s": 600, "rps_min": 30, "rps_avg": 30, "rps_max": 30},
    "durations": {"warmup_step_s": 1, "warmup_hold_s": 2, "measure_hours": 0.05},
}


@pytest.fixture
def chain_data():
    return copy.deepcopy(CHAIN)


@pytest.fixture
def chain_cfg(chain_data):
    return parse_config(chain_data)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
