import hashlib
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tendonleg.controller import collect_babbling
from tendonleg.inverse_map import InverseMap, train
from tendonleg.plant import PlantParams

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SRC = Path(__file__).resolve().parents[1] / "src" / "tendonleg"
DEFAULT_BABBLE_SECONDS = 300.0
DEFAULT_EPOCHS = 2000

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def _code_fingerprint() -> str:
    h = hashlib.sha256()
    for name in ("plant.py", "trajectories.py", "controller.py", "inverse_map.py"):
        h.update((SRC / name).read_bytes())
    return h.hexdigest()[:16]


@pytest.fixture(scope="session")
def params():
    return PlantParams()


@pytest.fixture(scope="session")
def default_map(request, params) -> InverseMap:
    """The map every task uses by default: 300 s of babbling (seed 0), 2000
    epochs (seed 0). Cached across sessions, keyed on the simulator source."""
    cache = Path(request.config.cache.mkdir("tendonleg"))
    path = cache / f"default_map_{_code_fingerprint()}.json"
    if path.exists():
        return InverseMap.load(path)
    data, _, _ = collect_babbling(params, DEFAULT_BABBLE_SECONDS, seed=0)
    net = train(data, seed=0, epochs=DEFAULT_EPOCHS)
    net.save(path)
    return InverseMap.load(path)


@pytest.fixture(scope="session")
def quick_map(params) -> InverseMap:
    """Cheap map for tests that need a plausible but not a good controller."""
    data, _, _ = collect_babbling(params, 30.0, seed=3)
    return train(data, seed=3, epochs=100)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def jobs() -> int:
    return int(os.environ.get("TENDONLEG_JOBS", os.cpu_count() or 1))
