import os

import numpy as np
import pytest

from bunca.dataset import save_dataset
from bunca.synth import toy_dataset
from tests.helpers import make_model


@pytest.fixture
def toy():
    return toy_dataset()


@pytest.fixture
def toy_dir(tmp_path, toy):
    return save_dataset(toy, tmp_path / "toy")


@pytest.fixture
def toy_model(toy):
    return make_model(toy)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    """Keep host BUNCA_* settings out of config precedence."""
    for key in list(os.environ):
        if key.startswith("BUNCA_") and key != "BUNCA_YOUSHU_DIR":
            monkeypatch.delenv(key)
