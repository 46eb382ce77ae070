"""Query / positive / negative batch construction in the Variation Space."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .backend import GeneratorHandle, sample_latent_array
from .contrastor import ZERO_NORM, raw_pair
from .errors import BatchError, ConfigError

log = logging.getLogger(__name__)

RESAMPLE_ATTEMPTS = 10


@dataclass
class BatchSpec:
    """Everything random about one step, before any image is rendered.

    Directions are zero-based. ``direction`` is shared by queries and
    positives; every entry of ``negative_directions`` differs from it.
    """

    direction: int
    negative_directions: np.ndarray
    z_query: np.ndarray
    z_pos: np.ndarray
    z_neg: np.ndarray
    eps_query: np.ndarray
    eps_pos: np.ndarray
    eps_neg: np.ndarray
    eps_max: float

    @property
    def sizes(self):
        return len(self.eps_query), len(self.eps_pos), len(self.eps_neg)

    def stacked(self):
        """Latents, directions and shifts of all slots in Q, K+, K- order."""
        b, n, m = self.sizes
        z = np.concatenate([self.z_query, self.z_pos, self.z_neg])
        d = np.concatenate([np.full(b + n, self.direction), self.negative_directions])
        eps = np.concatenate([self.eps_query, self.eps_pos, self.eps_neg])
        return z, d, eps

    def to_dict(self) -> dict:
        return {
            "direction": int(self.direction),
            "negative_directions": self.negative_directions.tolist(),
            "z_query": self.z_query.tolist(),
            "z_pos": self.z_pos.tolist(),
            "z_neg": self.z_neg.tolist(),
            "eps_query": self.eps_query.tolist(),
            "eps_pos": self.eps_pos.tolist(),
            "eps_neg": self.eps_neg.tolist(),
            "eps_max": self.eps_max,
        }


@dataclass
class ContrastBatch:
    spec: BatchSpec
    queries: torch.Tensor
    positives: torch.Tensor
    negatives: torch.Tensor
    resampled: int = 0
    mode: str = "variation"
    raw: torch.Tensor = field(default=None, repr=False)

    @property
    def directions(self) -> np.ndarray:
        return self.spec.stacked()[1]


def draw_spec(
    rng: np.random.Generator,
    handle: GeneratorHandle,
    num_directions: int,
    B: int,
    N: int,
    M: int,
    eps_max: float,
) -> BatchSpec:
    """Sample directions, latents and shifts for one contrast batch.

    The positive direction is uniform on ``{0..D-1}``; each negative is
    uniform on the remaining ``D-1`` indices, independently. Shifts are
    uniform on ``[-eps_max, eps_max]``.
    """
    if num_directions < 2:
        raise ConfigError("need at least two directions to form negatives")
    if min(B, N, M) < 1:
        raise ConfigError("B, N and M must all be >= 1")
    if not eps_max > 0:
        raise ConfigError("eps_max must be positive")
    d = int(rng.integers(num_directions))
    r = rng.integers(num_directions - 1, size=M)
    negatives = r + (r >= d)
    z_query = sample_latent_array(handle, B, rng)
    z_pos = sample_latent_array(handle, N, rng)
    z_neg = sample_latent_array(handle, M, rng)
    eps_query = rng.uniform(-eps_max, eps_max, size=B)
    eps_pos = rng.uniform(-eps_max, eps_max, size=N)
    eps_neg = rng.uniform(-eps_max, eps_max, size=M)
    return BatchSpec(d, negatives, z_query, z_pos, z_neg, eps_query, eps_pos, eps_neg, float(eps_max))


def _rows(encoder, gen, nav, z, d, eps, mode):
    a, b = raw_pair(encoder, gen, nav, z, d, eps)
    diff = (a - b).abs()
    out = diff if mode == "variation" else torch.cat([a, b], dim=1)
    return out, torch.linalg.vector_norm(diff, dim=1)


def realize_batch(
    spec: BatchSpec,
    encoder,
    gen: GeneratorHandle,
    nav,
    rng: np.random.Generator,
    mode: str = "variation",
    max_attempts: int = RESAMPLE_ATTEMPTS,
) -> ContrastBatch:
    """Render and encode every slot of ``spec`` into Q, K+ and K-.

    Slots whose two encodings coincide are resampled (new latent and shift,
    same direction) up to ``max_attempts`` times. The spec is updated in
    place so it always describes the realized batch.
    """
    if mode not in ("variation", "concat"):
        raise ConfigError(f"unknown variation mode {mode!r}")
    z, d, eps = spec.stacked()
    rows, norms = _rows(encoder, gen, nav, z, d, eps, mode)
    bad = torch.nonzero(norms <= ZERO_NORM).flatten().numpy()
    resampled = 0
    attempts = 0
    while bad.size:
        if attempts >= max_attempts:
            raise BatchError(f"{bad.size} slot(s) still degenerate after {max_attempts} resample attempts")
        attempts += 1
        resampled += int(bad.size)
        z[bad] = sample_latent_array(gen, bad.size, rng)
        eps[bad] = rng.uniform(-spec.eps_max, spec.eps_max, size=bad.size)
        new_rows, new_norms = _rows(encoder, gen, nav, z[bad], d[bad], eps[bad], mode)
        rows = rows.clone()
        rows[torch.as_tensor(bad)] = new_rows
        norms = norms.clone()
        norms[torch.as_tensor(bad)] = new_norms
        bad = bad[(new_norms <= ZERO_NORM).numpy()]
    if resampled:
        log.debug("resampled %d degenerate variation slot(s)", resampled)
        b, n, _ = spec.sizes
        spec.z_query, spec.z_pos, spec.z_neg = z[:b], z[b:b + n], z[b + n:]
        spec.eps_query, spec.eps_pos, spec.eps_neg = eps[:b], eps[b:b + n], eps[b + n:]

    unit = rows / torch.linalg.vector_norm(rows, dim=1, keepdim=True)
    b, n, _ = spec.sizes
    return ContrastBatch(
        spec=spec,
        queries=unit[:b],
        positives=unit[b:b + n],
        negatives=unit[b + n:],
        resampled=resampled,
        mode=mode,
        raw=rows,
    )
