import numpy as np
import pytest

from tools.tensor.tensor import set_strict


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run long training experiments"
    )


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "slow: long-running training experiment")


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True, scope="session")
def strict_numerics():
    """Every test runs with non-finite checking on."""
    set_strict(True)
    yield
    set_strict(False)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
