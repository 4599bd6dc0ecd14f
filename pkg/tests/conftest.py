import warnings

import numpy as np
import pytest

from leakywave.errors import AccuracyLoss, StiffnessWarning

K = 3.0


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AccuracyLoss)
        warnings.simplefilter("ignore", StiffnessWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
