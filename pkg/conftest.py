import os

import numpy as np
import pytest

from market_core import MarketInstance, MarketParams, load_instance

ROOT = os.path.dirname(os.path.abspath(__file__))
INSTANCES = os.path.join(ROOT, "instances")
PROFILES = os.path.join(ROOT, "profiles")

UNIT_PARAMS = MarketParams(c=1.0, mu=1.0, s=4.0, t=1.0)


def fixture_path(name: str) -> str:
    return os.path.join(INSTANCES, name)


def make_instance(a, b, weights=None, params=UNIT_PARAMS) -> MarketInstance:
    n = len(a)
    if weights is None:
        weights = np.zeros((n, n))
    return MarketInstance.from_arrays(a, b, weights, params)


def random_market(rng: np.random.Generator, n: int, ratio: float = 0.8, density: float = 0.6,
                  a_range=(2.0, 4.0), params=MarketParams(c=1.0, mu=1.0, s=4.0, t=0.5)) -> MarketInstance:
    """
    Mercado aleatorio que cumple el Supuesto 1 con cociente máximo `ratio`.
    Con a > c y r >= 0 el equilibrio es interior (K = (B - G)^-1 es no negativa).
    """
    a = rng.uniform(*a_range, size=n)
    b = rng.uniform(1.0, 2.0, size=n)
    upper = np.triu(rng.uniform(0.0, 1.0, size=(n, n)) * (rng.uniform(size=(n, n)) < density), k=1)
    weights = upper + upper.T
    if n > 1 and weights.sum() > 0:
        worst = float(np.max(weights.sum(axis=1) / (2.0 * b)))
        weights = weights * (ratio * rng.uniform(0.5, 1.0) / worst)
    return MarketInstance.from_arrays(a, b, weights, params)


@pytest.fixture
def single_mu() -> MarketInstance:
    return load_instance(fixture_path("single_mu.json"))


@pytest.fixture
def two_mu() -> MarketInstance:
    return load_instance(fixture_path("two_mu.json"))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
