import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from coplan.instance_io import AlgoParams, load_instance

FIXTURES = Path(__file__).resolve().parents[1] / "src" / "coplan" / "fixtures"


@pytest.fixture(scope="session")
def toy6():
    return load_instance(FIXTURES / "toy6.json")


@pytest.fixture(scope="session")
def toy6s():
    return load_instance(FIXTURES / "toy6s.json")


@pytest.fixture()
def params():
    return AlgoParams(seed=7)


@pytest.fixture(scope="session")
def toy6_path():
    return FIXTURES / "toy6.json"


@pytest.fixture(scope="session")
def toy6s_path():
    return FIXTURES / "toy6s.json"
