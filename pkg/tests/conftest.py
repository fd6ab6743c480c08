from datetime import datetime, timezone

import numpy as np
import pytest

from loadbench.core import BuildingRecord, BuildingType, LoadSeries
from loadbench.store import write_corpus
from loadbench.synth import SynthConfig, generate_corpus

T0 = datetime(2018, 1, 1, tzinfo=timezone.utc)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def commercial():
    return BuildingRecord("b1", BuildingType.COMMERCIAL, 40.0, -105.0, "R00", "demo")


def series_of(values, start=T0) -> LoadSeries:
    return LoadSeries(start, np.asarray(values, dtype=float))


@pytest.fixture
def small_corpus(tmp_path):
    config = SynthConfig(n_residential=3, n_commercial=3, n_days=60, seed=3, noise_scale=0.1)
    root = tmp_path / "corpus"
    write_corpus(root, generate_corpus(config))
    return root
