"""
Shared pytest fixtures. Living in the repository root, this file also puts
the root on sys.path so the tests import the modules directly.
"""
from pathlib import Path

import pytest

from beams import ModeSpec
from detector import DetectorGeometry

CONFIGS = Path(__file__).parent / "configs"


@pytest.fixture
def noiseless_geometry():
    """
    Default geometry without timing jitter: every tag is exact.
    """
    return DetectorGeometry(jitter_sigma=0.0)


@pytest.fixture
def smf28_spec():
    return ModeSpec.gaussian(10.4)


@pytest.fixture
def tec_spec():
    return ModeSpec.from_weights([0.93, 0.07], 30.0)
