import copy

import pytest

from leofl.config import parse_scenario
from leofl.data import load_mnist, resolve_data_dir

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def mnist():
    root = resolve_data_dir()
    if not (root / "train-images.idx3-ubyte").exists():
        pytest.skip(f"MNIST IDX files not found in {root}; set LEOFL_DATA_DIR")
    return load_mnist(root)


SHELL_500 = {"name": "low", "altitude_km": 500.0, "inclination_deg": 80.0, "total": 5, "planes": 5,
             "phasing": 1, "raan_offset_deg": 0.0}
SHELL_2000 = {"name": "high", "altitude_km": 2000.0, "inclination_deg": 80.0, "total": 5, "planes": 5,
              "phasing": 1, "raan_offset_deg": 36.0}
BREMEN = {"name": "Bremen", "latitude_deg": 53.07, "longitude_deg": 8.80, "altitude_km": 0.0,
          "min_elevation_deg": 10.0}
NORTH_POLE = {"name": "North Pole", "latitude_deg": 90.0, "longitude_deg": 0.0, "altitude_km": 0.0,
              "min_elevation_deg": 10.0}

BASE = {
    "name": "synthetic",
    "constellation": [SHELL_500, SHELL_2000],
    "ground_station": NORTH_POLE,
    "data": {
        "source": "synthetic",
        "synthetic": {"classes": 10, "per_class": 100, "test_per_class": 20, "dim": 20, "separation": 1.0, "seed": 3},
        "partition": {"mode": "iid", "seed": 0},
    },
    "training": {"learning_rate": 0.1, "prox_weight": 0.0, "batch_size": 10, "local_epochs": 1},
    "strategy": {"name": "fedsat"},
    "simulation": {"horizon_s": 12 * 3600.0, "seed": 0},
}


def make_scenario_dict(**overrides) -> dict:
    """Small synthetic scenario; keyword overrides replace top-level sections."""
    d = copy.deepcopy(BASE)
    d.update(copy.deepcopy(overrides))
    return d


@pytest.fixture
def scenario_dict():
    return make_scenario_dict


@pytest.fixture
def scenario():
    def build(**overrides):
        return parse_scenario(make_scenario_dict(**overrides))

    return build
