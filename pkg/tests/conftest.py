import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from darkdet.netcfg import load_cfg, parse_cfg, shipped_cfg  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = Path(__file__).parent / "golden"

MINIMAL_CFG = """\
[net]
width=8
height=8
channels=3

[convolutional]
filters=2
size=1
stride=1
pad=0
activation=linear
"""


@pytest.fixture
def minimal_graph():
    return parse_cfg(MINIMAL_CFG)


@pytest.fixture(scope="session")
def yolov3c_graph():
    return load_cfg(shipped_cfg("yolov3-c"))


@pytest.fixture(scope="session")
def yolov3_graph():
    return load_cfg(shipped_cfg("yolov3"))
