"""
Shared test fixtures: small seeded geometries, layouts and Q/K/V heads.
Everything is deterministic so oracle comparisons use fixed tolerances.
"""
import json
from pathlib import Path

import numpy as np
import pytest

from vmoba.partition import LatentGeometry, PartitionSpec, build_layout

ROOT = Path(__file__).resolve().parents[2]
FIXTURES = ROOT / "fixtures"


def make_qkv(seed, s, d, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return tuple(rng.standard_normal((s, d)).astype(dtype) for _ in range(3))


def make_layout(grid=(5, 6, 8), spec=None):
    spec = spec or PartitionSpec.spatio_temporal(2, 3, 4)
    return build_layout(LatentGeometry(*grid), spec)


@pytest.fixture
def small_geometry():
    return LatentGeometry(5, 6, 8, hidden=16, heads=2)


@pytest.fixture
def layout_3d():
    return make_layout()


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def write_config(tmp_path):
    """Writes a config dict to a JSON file and returns its path."""

    def _write(payload, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def small_config_payload(tmp_path):
    return {
        "geometry": {"frames": 4, "height": 6, "width": 8, "hidden": 16, "heads": 2},
        "partitions": [
            {"scheme": "1d", "block": [2]},
            {"scheme": "2d", "block": [3, 4]},
            {"scheme": "3d", "block": [2, 3, 4]},
        ],
        "selection": {"scope": "global", "rule": "threshold", "tau": 0.25},
        "seed": 3,
        "out_dir": str(tmp_path / "out"),
        "verify": {"fixtures": 6, "grad_fixtures": 3, "max_seq": 256},
        "bench": {"frames": 2, "lengths": [64, 96, 128, 130], "repeats": 5, "head_dim": 8},
    }
