import numpy as np
import pytest

from xai_ran.model import ModelParams, Normalizer, train
from xai_ran.trace import BurstConfig, generate_trace


@pytest.fixture(scope="session")
def default_trace():
    return generate_trace(BurstConfig())


@pytest.fixture(scope="session")
def trained(default_trace):
    params, norm, report = train(default_trace)
    return params, norm, report


def make_toy_params(n=2, h=4, seed=1, weight_scale=3.0):
    """A small nonlinear model with saturating tanh units."""
    params = ModelParams.init(n=n, h=h, seed=seed)
    params.embed_w = params.embed_w * weight_scale
    params.attn_v = params.attn_v * weight_scale
    params.out_w = params.out_w * weight_scale
    return params


@pytest.fixture
def toy_2x2():
    """W=2, n=2 model plus a fixed window, identity normalization."""
    rng = np.random.default_rng(7)
    params = make_toy_params(n=2, h=4, seed=1)
    window = rng.normal(0.0, 1.0, size=(2, 2))
    return params, window, Normalizer.identity(2)
