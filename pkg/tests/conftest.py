import numpy as np
import pytest

import featadv as fa


@pytest.fixture(scope="session")
def net7():
    """Headless refnet-32, orthonormal weights, seed 7."""
    return fa.init_network(fa.refnet32(), seed=7, scheme="orthonormal")


@pytest.fixture(scope="session")
def net7_head():
    return fa.init_network(fa.refnet32(with_head=True), seed=7,
                           scheme="orthonormal")


@pytest.fixture(scope="session")
def small_corpus():
    """4 classes x 6 images, enough for rank statistics at K=3."""
    return fa.generate_corpus(11, classes=4, per_class=6)


@pytest.fixture(scope="session")
def full_corpus():
    return fa.generate_corpus(0)


def random_image(rng, shape=(3, 32, 32), lo=5.0, hi=250.0):
    return rng.uniform(lo, hi, size=shape)
