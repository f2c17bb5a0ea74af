"""Shared fixtures.  Trained models are session-scoped: training is the
slowest step in the suite and every consumer uses the same seeds."""

import pytest

from tenserecon import lstm
from tenserecon.simulator import DEFAULT_NOISE_BAND
from tenserecon.topology import build_canonical


@pytest.fixture(scope="session")
def topo():
    return build_canonical(0.30)


@pytest.fixture(scope="session")
def clean_model_and_report():
    data = lstm.make_stretch_dataset(seed=0, noise_band=None)
    return lstm.train(data, epochs=150, seed=0)


@pytest.fixture(scope="session")
def clean_model(clean_model_and_report):
    return clean_model_and_report[0]


@pytest.fixture(scope="session")
def noisy_model():
    data = lstm.make_stretch_dataset(seed=0, noise_band=DEFAULT_NOISE_BAND)
    model, _ = lstm.train(data, epochs=60, seed=0)
    return model
