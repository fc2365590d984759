import sys
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from uncgrasp import kernels  # noqa: E402
from uncgrasp.config import PipelineConfig  # noqa: E402
from uncgrasp.evaluation import run_scene  # noqa: E402
from uncgrasp.scene import adversarial_scenes, standard_scenes  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

REPO = Path(__file__).resolve().parents[1]
FIXTURES = REPO / "fixtures"

FLAVOURS = ["numpy"] + (["numba"] if kernels.ensemble_stats_numba is not None else [])


@pytest.fixture(params=FLAVOURS)
def flavour(request):
    """Name of a kernel flavour; tests fetch ``<kernel>_<flavour>``."""
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@lru_cache(maxsize=None)
def standard_runs():
    cfg = PipelineConfig()
    return tuple(run_scene(sc, cfg) for sc in standard_scenes())


@lru_cache(maxsize=None)
def adversarial_set():
    return tuple(adversarial_scenes())


@pytest.fixture(scope="session")
def std_runs():
    return standard_runs()


# ------------------------------------------------------------ acceptance log

ACCEPTANCE: dict = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
