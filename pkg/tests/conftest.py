"""
ShellRig Test Fixtures
"""

from pathlib import Path

import numpy as np
import pytest

from shellrig.families import PlaneFamily
from shellrig.immersions import GridDomain
from shellrig.target_space import flat

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def config_dir() -> Path:
    return CONFIG_DIR


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def unit_square():
    return GridDomain(2, 1.0, 17)


@pytest.fixture
def flat3():
    return flat(3)


@pytest.fixture
def plane(unit_square, flat3):
    return PlaneFamily().build(unit_square, flat3)


@pytest.fixture
def write_config(tmp_path):
    """Write TOML text to a scenario file and return its path"""

    def write(text: str, name: str = "scenario.toml") -> Path:
        path = tmp_path / name
        path.write_text(text)
        return path

    return write
