import time
from pathlib import Path

import pytest

from umpc.cli import load_scenario
from umpc.sim import run_scenario

REPO_ROOT = Path(__file__).resolve().parent.parent
SCENARIO_DIR = REPO_ROOT / "scenarios"


@pytest.fixture(scope="session")
def chicken_config():
    return load_scenario(SCENARIO_DIR / "chicken.toml")


@pytest.fixture(scope="session")
def crossing_config():
    return load_scenario(SCENARIO_DIR / "crossing.toml")


@pytest.fixture(scope="session")
def chicken_run(chicken_config):
    """(SimLog, wall seconds) for the bundled chicken scenario."""
    t0 = time.monotonic()
    log = run_scenario(chicken_config)
    return log, time.monotonic() - t0


@pytest.fixture(scope="session")
def crossing_run(crossing_config):
    t0 = time.monotonic()
    log = run_scenario(crossing_config)
    return log, time.monotonic() - t0


@pytest.fixture(scope="session")
def chicken_negative_control():
    """Chicken scenario with keep-out constraints disabled (collides)."""
    config = load_scenario(SCENARIO_DIR / "chicken.toml",
                           disable_obstacle_constraints=True)
    return run_scenario(config)
