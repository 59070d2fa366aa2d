import json
from importlib import resources

import numpy as np
import pytest

from markov_quantile.families import ExplicitFamily, family_from_json
from markov_quantile.measure import from_mixture


def load_fixture(name: str):
    text = resources.files("markov_quantile").joinpath("fixtures", f"{name}.json").read_text()
    return family_from_json(json.loads(text))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def flag():
    return load_fixture("flag")


@pytest.fixture
def diffuse():
    return load_fixture("diffuse")


def random_atomic_measure(rng, den: int = 64):
    """Measure with dyadic level breakpoints: a few atoms, maybe one uniform piece."""
    k = int(rng.integers(1, 4))
    cuts = np.sort(rng.choice(np.arange(1, den), k - 1, replace=False)) / den if k > 1 else np.array([])
    w = np.diff(np.concatenate([[0.0], cuts, [1.0]]))
    xs = np.sort(rng.choice(np.arange(-4, 5), k, replace=False)).astype(float)
    if rng.random() < 0.3:
        # the last piece becomes a uniform segment to the right of every atom
        return from_mixture(list(zip(xs[:-1], w[:-1])), [(xs[-1], xs[-1] + 1.0, w[-1])])
    return from_mixture(list(zip(xs, w)))


def random_explicit_family(rng, max_times: int = 6, den: int = 64, min_times: int = 1):
    """Explicit family with up to ``max_times`` atomic times and diffuse gaps."""
    m = int(rng.integers(min_times, max_times + 1))
    ts = np.sort(rng.choice(np.arange(-8, 9), m, replace=False)).astype(float)
    return ExplicitFamily([(t, random_atomic_measure(rng, den)) for t in ts])
