from pathlib import Path

import numpy as np
import pytest

import settings
import zoo
from data_load import load_dataset

DATA = Path(__file__).resolve().parents[1] / "data"


def zoo_columns(name):
    """Bundled dataset for a registry entry, or its seed-0 synthetic stand-in."""
    entry = zoo.get(name)
    path = DATA / entry.dataset
    if path.exists():
        return load_dataset(path, entry.schema)
    return zoo.synthetic_dataset(Path(entry.dataset).stem, seed=0)


def zoo_model(name):
    return zoo.get(name).build(zoo_columns(name))


@pytest.fixture
def data_dir(monkeypatch):
    monkeypatch.setattr(settings, "DATA_DIR", DATA)
    return DATA


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
