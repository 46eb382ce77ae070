import os
import warnings

import numpy as np
import pytest
import torch

from disco.backend import make_oracle_generator
from disco.contrastor import Encoder
from disco.navigator import Navigator

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def identity_gen():
    return make_oracle_generator(4, "oracle_linear", 0, False)


@pytest.fixture
def entangled_gen():
    return make_oracle_generator(4, "oracle_linear", 13, True)


def band_readout_encoder(gen, dtype=torch.float64, bias=False):
    """Linear encoder that returns the band means of an oracle_linear image."""
    h, w, c = gen.image_shape
    K = gen.num_factors
    enc = Encoder(gen.image_shape, K, preset="linear", bias=bias).to(dtype)
    band = (np.arange(h) * K) // h
    weight = np.zeros((K, c, h, w))
    for k in range(K):
        weight[k, :, band == k, :] = 1.0 / ((band == k).sum() * w * c)
    with torch.no_grad():
        enc.net[1].weight.copy_(torch.as_tensor(weight.reshape(K, -1)))
        if bias:
            enc.net[1].bias.zero_()
    return enc


def identity_navigator(K, dtype=torch.float64):
    nav = Navigator("unit_columns", K, K).to(dtype)
    with torch.no_grad():
        nav.matrix.copy_(torch.eye(K, dtype=dtype))
    return nav


def random_unit_rows(gen, rows, n, nonneg=True):
    x = gen.random((rows, n)) if nonneg else gen.standard_normal((rows, n))
    x = x / np.linalg.norm(x, axis=1, keepdims=True)
    return torch.as_tensor(x, dtype=torch.float64)
