import json

import pytest

from app.services.symfunc import PSpec


@pytest.fixture
def spec32():
    return PSpec(3, 2)


@pytest.fixture
def disk_config():
    """n=2, p=2 on the disk of radius 0.8 with f = 1: the exact solution is the cap of radius 2."""
    return {
        "n": 2,
        "p": 2,
        "domain": {"type": "ball", "params": {"radius": 0.8}},
        "f": "1",
        "grid": {"h": 0.1},
    }


@pytest.fixture
def write_config(tmp_path):
    def _write(data, name="problem.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return str(path)
    return _write
