import math

import numpy as np
import pytest

from mmpoint.array import build_virtual_array, default_layout
from mmpoint.echo import RadarParams

ACCEPTANCE_KEY = pytest.StashKey[list]()


def polar(r, az_deg, el_deg=0.0):
    az, el = math.radians(az_deg), math.radians(el_deg)
    return (r * math.cos(el) * math.sin(az), r * math.cos(el) * math.cos(az), r * math.sin(el))


def closing(az_deg, v, el_deg=0.0):
    """Velocity vector with radial closing speed ``v`` along the line of sight."""
    u = np.array(polar(1.0, az_deg, el_deg))
    return tuple(-v * u)


@pytest.fixture(scope="session")
def array():
    return build_virtual_array(default_layout())


@pytest.fixture(scope="session")
def params():
    return RadarParams()


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
