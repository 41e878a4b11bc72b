import numpy as np
import pytest
from hypothesis import settings

from virtualbid.estimation import TrainingSet

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def make_training_set(weather, diffs, start="2022-01-01", hour=17):
    from datetime import date, timedelta

    weather = np.asarray(weather, dtype=float)
    T, n, k = weather.shape
    d0 = date.fromisoformat(start)
    return TrainingSet(
        tuple(d0 + timedelta(days=i) for i in range(T)),
        tuple(f"N{i + 1}" for i in range(n)),
        tuple(f"v{j + 1}" for j in range(k)),
        weather,
        diffs,
        hour,
    )


def random_training_set(rng, n, k, T, noise=0.3):
    weather = rng.normal(size=(T, n, k))
    coef = rng.normal(scale=0.5, size=(n, k + 1))
    diffs = coef[:, 0] + np.einsum("tij,ij->ti", weather, coef[:, 1:]) + noise * rng.normal(size=(T, n))
    return make_training_set(weather, diffs)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
