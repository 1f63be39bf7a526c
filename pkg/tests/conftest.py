import numpy as np
import pytest

from bayes_levelset.experiment import ExperimentConfig, noise_study
from bayes_levelset.mesh import generate_disk_mesh

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def tiny_mesh():
    return generate_disk_mesh(1.0, 8, 2, 0.0)


@pytest.fixture(scope="session")
def small_mesh():
    return generate_disk_mesh(1.0, 100, 8, 0.25)


@pytest.fixture(scope="session")
def coarse_mesh():
    return generate_disk_mesh(1.0, 549, 16, 0.25)


@pytest.fixture(scope="session")
def fine_mesh():
    return generate_disk_mesh(1.0, 2129, 16, 0.25)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_study(tmp_path_factory):
    """Three 100k/50k chains at each of 1%, 2% and 4% noise on two_circles.

    Shared by the accuracy, L-infinity and noise-trend criteria; takes several
    minutes on one core.
    """
    out = tmp_path_factory.mktemp("desk_study")
    cfg = ExperimentConfig(seed=2024, output_dir=str(out))
    table, runs = noise_study(cfg, [0.01, 0.02, 0.04], repeats=3)
    return table, runs, out
