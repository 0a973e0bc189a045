import numpy as np
import pytest

from pcatlas.atlas import build_sphere_lattice


@pytest.fixture(scope="session")
def lattice_cache(tmp_path_factory):
    return tmp_path_factory.mktemp("lattices")


@pytest.fixture(scope="session")
def lattice_64(lattice_cache):
    return build_sphere_lattice(64, seed=0, cache_dir=lattice_cache)


@pytest.fixture(scope="session")
def lattice_256(lattice_cache):
    return build_sphere_lattice(256, seed=0, cache_dir=lattice_cache)


@pytest.fixture(scope="session")
def lattice_4096(lattice_cache):
    return build_sphere_lattice(4096, seed=0, cache_dir=lattice_cache)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance tests append their "CRITERION k: ..." lines here so that they are
# shown in the terminal summary even when output capture is on.
CRITERION_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES):
            terminalreporter.write_line(line)
