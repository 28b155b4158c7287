import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from autosparse.data import save_idx

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def mnist_idx(tmp_path_factory):
    """The 5000-image MNIST subset bundled with mlxtend, written out as IDX files."""
    mlxtend_data = pytest.importorskip("mlxtend.data")
    X, y = mlxtend_data.mnist_data()
    d = tmp_path_factory.mktemp("mnist")
    images, labels = d / "images-idx3-ubyte", d / "labels-idx1-ubyte"
    save_idx(images, labels, X.reshape(-1, 28, 28).astype(np.uint8), y.astype(np.uint8))
    return images, labels


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
