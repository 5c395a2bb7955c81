import numpy as np
import pytest

from channel_model import make_simplified_instance


@pytest.fixture
def two_link():
    """K=2, C=2, grid 0..10 in steps of 2; the least satisfying level is index 2 (p=4)."""
    return make_simplified_instance(2, 2, 6, 10.0, 1.0, 3.0, 3.0)


@pytest.fixture
def fig5_instance():
    return make_simplified_instance(4, 5, 8, 10.0, 1.0, 3.0, 5.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def workdirs(tmp_path, monkeypatch):
    results = tmp_path / "results"
    data = tmp_path / "data"
    monkeypatch.setenv("TE_RESULTS_DIR", str(results))
    monkeypatch.setenv("TE_DATA_DIR", str(data))
    return results, data
