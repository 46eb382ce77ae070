"""Image encoder and the difference operator into the Variation Space.

A variation sample is ``|E(G(z + A(eps e_d))) - E(G(z))|`` normalized to unit
length. Both images of a pair go through the same encoder in one forward
pass, which is what "shared weights" amounts to here.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .backend import GeneratorHandle, LatentCode
from .errors import ConfigError, DegenerateVariationError, InputError
from .navigator import Navigator

ENCODER_PRESETS = ("conv4", "mlp", "linear")
ZERO_NORM = 1e-12


class Encoder(nn.Module):
    """Image encoder ``E`` mapping NCHW images to ``output_dim`` codes.

    Presets:
      * ``conv4`` - four stride-2 conv blocks (32/64/128/256) and an affine
        head; the default for 64x64 inputs.
      * ``mlp`` - one hidden layer of width ``hidden`` with ReLU.
      * ``linear`` - a single affine map (``bias`` optional).
    """

    def __init__(
        self,
        image_shape: Sequence[int],
        output_dim: int,
        preset: str = "conv4",
        hidden: int = 128,
        bias: bool = True,
    ):
        super().__init__()
        if preset not in ENCODER_PRESETS:
            raise ConfigError(f"unknown encoder preset {preset!r}")
        if output_dim < 1:
            raise ConfigError("encoder output_dim must be positive")
        self.image_shape = tuple(int(v) for v in image_shape)
        self.output_dim = output_dim
        self.preset = preset
        h, w, c = self.image_shape
        if preset == "conv4":
            if h % 16 or w % 16:
                raise ConfigError("conv4 encoder needs image sides divisible by 16")
            layers = []
            width_in = c
            for width in (32, 64, 128, 256):
                layers += [nn.Conv2d(width_in, width, 4, stride=2, padding=1), nn.ReLU()]
                width_in = width
            layers += [nn.Flatten(), nn.Linear(256 * (h // 16) * (w // 16), output_dim)]
            self.net = nn.Sequential(*layers)
        elif preset == "mlp":
            self.net = nn.Sequential(
                nn.Flatten(), nn.Linear(h * w * c, hidden), nn.ReLU(), nn.Linear(hidden, output_dim)
            )
        else:
            self.net = nn.Sequential(nn.Flatten(), nn.Linear(h * w * c, output_dim, bias=bias))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        h, w, c = self.image_shape
        if images.ndim != 4 or tuple(images.shape[1:]) != (c, h, w):
            raise InputError(f"encoder expects images of shape (batch, {c}, {h}, {w}), got {tuple(images.shape)}")
        return self.net(images)

    def describe(self) -> dict:
        return {"preset": self.preset, "output_dim": self.output_dim, "image_shape": list(self.image_shape)}


def build_encoder(
    image_shape,
    output_dim: int,
    preset: str = "conv4",
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
    **kwargs,
) -> Encoder:
    """Construct an encoder with parameters drawn from a private seeded stream."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        enc = Encoder(image_shape, output_dim, preset, **kwargs)
    return enc.to(dtype)


def _param_dtype(module: nn.Module) -> torch.dtype:
    return next(module.parameters()).dtype


def encode(encoder: Encoder, images) -> torch.Tensor:
    """Encode images given as NCHW tensors or ``(batch, H, W, C)`` arrays."""
    if isinstance(images, np.ndarray):
        if images.ndim != 4:
            raise InputError("expected a (batch, H, W, C) image array")
        images = torch.as_tensor(images).permute(0, 3, 1, 2)
    return encoder(images.to(_param_dtype(encoder)))


def _as_batch(z, d, eps, dtype):
    if isinstance(z, LatentCode):
        z = z.values
    z = torch.as_tensor(np.asarray(z) if not torch.is_tensor(z) else z, dtype=dtype)
    single = z.ndim == 1
    z = z.reshape(-1, z.shape[-1])
    d = torch.as_tensor(d, dtype=torch.long).reshape(-1).expand(z.shape[0])
    eps = torch.as_tensor(eps, dtype=dtype).reshape(-1).expand(z.shape[0])
    return z, d, eps, single


def raw_pair(encoder: Encoder, gen: GeneratorHandle, nav: Navigator, z, d, eps):
    """Encodings of ``G(z + A(eps e_d))`` and ``G(z)``, computed in one pass."""
    dtype = _param_dtype(encoder)
    z, d, eps, _ = _as_batch(z, d, eps, dtype)
    shifted = z + nav(d, eps).to(dtype)
    images = gen.render(torch.cat([shifted, z], dim=0))
    codes = encoder(images.to(dtype))
    return codes[: z.shape[0]], codes[z.shape[0]:]


def variation_rows(encoder, gen, nav, z, d, eps, mode: str = "variation"):
    """Unnormalized rows: ``|a - b|`` for ``variation``, ``[a, b]`` for ``concat``."""
    a, b = raw_pair(encoder, gen, nav, z, d, eps)
    if mode == "variation":
        return (a - b).abs()
    if mode == "concat":
        return torch.cat([a, b], dim=1)
    raise ConfigError(f"unknown variation mode {mode!r}")


def normalize_rows(rows: torch.Tensor, check: Optional[torch.Tensor] = None):
    """Scale rows to unit length; raise on zero rows.

    ``check`` (defaults to ``rows``) decides degeneracy, so concatenated
    encodings can be flagged when their difference vanishes.
    """
    reference = rows if check is None else check
    ref_norms = torch.linalg.vector_norm(reference, dim=1)
    bad = torch.nonzero(ref_norms <= ZERO_NORM).flatten().tolist()
    if bad:
        raise DegenerateVariationError(bad)
    return rows / torch.linalg.vector_norm(rows, dim=1, keepdim=True)


def variation(encoder, gen, nav, z, d, eps) -> torch.Tensor:
    """Normalized variation vector(s) ``v(z, d, eps)``.

    ``z`` may be a single ``LatentCode``/vector or a ``(batch, latent_dim)``
    array; ``d`` and ``eps`` broadcast against it. The generator is frozen, so
    gradients reach only the encoder and the navigator.
    """
    dtype = _param_dtype(encoder)
    zb, db, eb, single = _as_batch(z, d, eps, dtype)
    if torch.any(eb == 0):
        raise InputError("variation needs a non-zero shift scalar")
    v = normalize_rows(variation_rows(encoder, gen, nav, zb, db, eb))
    return v[0] if single else v


def concat_variation(encoder, gen, nav, z, d, eps) -> torch.Tensor:
    """Ablation: concatenation ``[E(G(z')), E(G(z))]`` instead of the difference."""
    dtype = _param_dtype(encoder)
    zb, db, eb, single = _as_batch(z, d, eps, dtype)
    if torch.any(eb == 0):
        raise InputError("variation needs a non-zero shift scalar")
    a, b = raw_pair(encoder, gen, nav, zb, db, eb)
    if torch.any(torch.linalg.vector_norm(a - b, dim=1) <= ZERO_NORM):
        raise DegenerateVariationError(
            torch.nonzero(torch.linalg.vector_norm(a - b, dim=1) <= ZERO_NORM).flatten().tolist()
        )
    out = torch.cat([a, b], dim=1)
    return out[0] if single else out
