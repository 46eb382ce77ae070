"""Hand-built checkpoints with known-perfect parameters.

Useful as sanity fixtures for the evaluation pipeline: a model whose encoder
reads out the oracle's factors exactly should score MIG close to 1.
"""

from __future__ import annotations

import numpy as np
import torch

from .backend import make_oracle_generator
from .config import RunConfig
from .trainer import init_state, to_checkpoint


def identity_config(K: int = 4, image_shape=(16, 16, 1), seed: int = 0) -> RunConfig:
    return RunConfig.from_dict(
        {
            "backend": {"kind": "oracle_linear", "num_factors": K, "entangle": False, "image_shape": list(image_shape)},
            "navigator": {"kind": "unit_columns", "num_directions": K},
            "encoder": {"preset": "linear", "output_dim": K},
            "trainer": {"seed": seed, "steps": 1},
        }
    ).resolved()


def identity_checkpoint(K: int = 4, image_shape=(16, 16, 1), seed: int = 0):
    """Checkpoint whose encoder returns the band means of an unentangled linear oracle.

    The navigator is the identity, so direction ``d`` moves factor ``d`` only.
    Returns ``(checkpoint, generator)``.
    """
    cfg = identity_config(K, image_shape, seed)
    gen = make_oracle_generator(K, "oracle_linear", 0, False, tuple(image_shape))
    state = init_state(cfg, gen)
    h, w, c = gen.image_shape
    band = (np.arange(h) * K) // h
    readout = np.zeros((K, c, h, w))
    for k in range(K):
        rows = band == k
        readout[k, :, rows, :] = 1.0 / (rows.sum() * w * c)
    linear = state.encoder.net[1]
    with torch.no_grad():
        linear.weight.copy_(torch.as_tensor(readout.reshape(K, -1)))
        linear.bias.zero_()
        state.navigator.matrix.copy_(torch.eye(K))
    return to_checkpoint(state, gen), gen
