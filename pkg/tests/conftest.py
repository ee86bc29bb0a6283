from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from config import BUNDLED_DIR, DB_PATH, SCENARIO_DIR  # noqa: E402
from retrieval import ImpedanceProfile, load_database  # noqa: E402
from scene import load_scenario, scenario_files  # noqa: E402


@pytest.fixture(scope="session")
def bundled_paths() -> list[Path]:
    return scenario_files(BUNDLED_DIR)


@pytest.fixture(scope="session")
def bundled(bundled_paths) -> dict[str, object]:
    """Bundled scenarios keyed by file stem, e.g. '01_static_hard_gate'."""
    return {p.stem: load_scenario(p) for p in bundled_paths}


@pytest.fixture(scope="session")
def all_scenarios() -> list[tuple[str, object]]:
    return [(str(p.relative_to(SCENARIO_DIR)), load_scenario(p)) for p in scenario_files(SCENARIO_DIR)]


@pytest.fixture(scope="session")
def db():
    return load_database(DB_PATH)


@pytest.fixture
def hard_profile() -> ImpedanceProfile:
    return ImpedanceProfile(m=1.2, k=8.5, d=4.0, F=0.55, c=0.35, v_max=1.4)


@pytest.fixture
def soft_profile() -> ImpedanceProfile:
    return ImpedanceProfile(m=5.0, k=0.5, d=1.5, F=0.3, c=0.75, v_max=0.7)
