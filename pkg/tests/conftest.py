import numpy as np
import pytest

from tempz.core import TemperatureLadder
from tempz.rbm import RbmModel, RbmParams, random_rbm, uniform_base
from tempz.toy import two_state_model


@pytest.fixture
def ladder10():
    return TemperatureLadder.make(10)


@pytest.fixture
def toy2():
    return two_state_model()


@pytest.fixture
def small_rbm():
    """4-visible / 3-hidden RBM with uniform base; fully enumerable."""
    params = random_rbm(4, 3, seed=42, scale=0.7)
    return RbmModel(params, uniform_base(4))


@pytest.fixture
def tiny_rbm_params():
    return RbmParams(np.array([[0.3, -0.2], [0.1, 0.4]]),
                     np.array([0.05, -0.1]), np.array([0.2, -0.3]))
