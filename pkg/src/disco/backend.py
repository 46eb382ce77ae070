"""Frozen generators behind one small interface.

Two families are provided:

* oracle generators with known ground-truth factors (``oracle_linear`` and
  ``oracle_shapes``), optionally entangled through a fixed random rotation
  ``z = R f + b``;
* an external adapter that loads a TorchScript generator from a checkpoint
  directory described by ``manifest.json``.

Every handle exposes a differentiable ``render(z)`` returning NCHW images so
gradients can flow back to the latent shift, while the generator's own
parameters never receive updates.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from scipy.stats import ortho_group
from torch import nn

from .errors import ConfigError, InputError, UnsupportedError

LATENT_SPACES = ("Z", "W")
ORACLE_KINDS = ("oracle_linear", "oracle_shapes")
HANDLE_KINDS = ("external_adapter",) + ORACLE_KINDS

# Factor order for oracle_shapes; factors beyond K are held at these defaults.
SHAPE_FACTORS = ("x", "y", "size", "hue", "background", "saturation", "value", "elongation")
_SHAPE_DEFAULTS = (0.5, 0.5, 0.5, 0.0, 0.0, 1.0, 1.0, 0.5)


@dataclass(frozen=True)
class LatentCode:
    """A point in a generator's latent space, tagged with the space it lives in."""

    values: np.ndarray
    space_tag: str = "Z"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.space_tag not in LATENT_SPACES:
            raise ConfigError(f"unknown latent space tag {self.space_tag!r}")
        if not np.all(np.isfinite(values)):
            raise InputError("latent code has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class GeneratorHandle:
    """Immutable description of a frozen generator ``G: Z -> I``.

    ``image_shape`` is ``(height, width, channels)``. ``prior`` names the
    distribution ``sample_latent`` draws from: ``standard_normal`` for Z-space
    models, ``factor_uniform`` for oracles (uniform factors pushed through the
    mixing), ``mapped_normal`` for W-space adapters.
    """

    kind: str
    latent_dim: int
    latent_space_tag: str
    image_shape: tuple
    seed: int = 0
    prior: str = "standard_normal"
    num_factors: Optional[int] = None
    entangle: bool = False
    renderer: nn.Module = field(default=None, repr=False)
    mapping: Optional[nn.Module] = field(default=None, repr=False)
    mapping_input_dim: Optional[int] = None
    source: Optional[str] = None

    @property
    def is_oracle(self) -> bool:
        return self.kind in ORACLE_KINDS

    @property
    def mixing(self) -> np.ndarray:
        """The oracle rotation ``R`` (identity when not entangled)."""
        self._require_oracle()
        return self.renderer.mixing.detach().cpu().numpy().copy()

    @property
    def offset(self) -> np.ndarray:
        self._require_oracle()
        return self.renderer.offset.detach().cpu().numpy().copy()

    def _require_oracle(self):
        if not self.is_oracle:
            raise UnsupportedError(f"{self.kind} handles have no ground-truth factors")

    def render(self, z: torch.Tensor) -> torch.Tensor:
        """Differentiable render of a ``(batch, latent_dim)`` tensor to NCHW images in [0, 1]."""
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise InputError(f"expected latents of shape (batch, {self.latent_dim}), got {tuple(z.shape)}")
        return self.renderer(z)

    def describe(self) -> dict:
        """JSON-serializable description sufficient to rebuild the handle."""
        out = {
            "kind": self.kind,
            "latent_dim": self.latent_dim,
            "latent_space_tag": self.latent_space_tag,
            "image_shape": list(self.image_shape),
            "prior": self.prior,
        }
        if self.is_oracle:
            out.update(num_factors=self.num_factors, mixing_seed=self.seed, entangle=self.entangle)
        else:
            out["checkpoint"] = self.source
        return out


def _freeze(module: nn.Module) -> nn.Module:
    module.eval()
    for p in module.parameters():
        p.requires_grad_(False)
    return module


class _OracleRenderer(nn.Module):
    """Shared mixing logic: ``f = clip(R^T (z - b), 0, 1)``."""

    def __init__(self, mixing: np.ndarray, offset: np.ndarray):
        super().__init__()
        self.register_buffer("mixing", torch.as_tensor(mixing, dtype=torch.float64))
        self.register_buffer("offset", torch.as_tensor(offset, dtype=torch.float64))

    def factors(self, z: torch.Tensor) -> torch.Tensor:
        mixing = self.mixing.to(z.dtype)
        return ((z - self.offset.to(z.dtype)) @ mixing).clamp(0.0, 1.0)


class LinearOracleRenderer(_OracleRenderer):
    """Image = sum_k f_k * P_k with P_k the indicator of horizontal band k.

    Bands are disjoint, so the patterns are orthogonal and each pixel equals
    exactly one (clipped) factor value.
    """

    def __init__(self, mixing, offset, image_shape):
        super().__init__(mixing, offset)
        h, w, c = image_shape
        k = mixing.shape[0]
        band = (np.arange(h) * k) // h
        patterns = np.zeros((k, h, w, c))
        for i in range(k):
            patterns[i, band == i] = 1.0
        self.image_shape = tuple(image_shape)
        # stored NCHW-flattened so render is one matmul
        self.register_buffer(
            "patterns", torch.as_tensor(patterns.transpose(0, 3, 1, 2).reshape(k, -1))
        )

    def forward(self, z):
        h, w, c = self.image_shape
        f = self.factors(z)
        return (f @ self.patterns.to(z.dtype)).reshape(z.shape[0], c, h, w)


class ShapesOracleRenderer(_OracleRenderer):
    """A soft-edged colored square on a grey background.

    Factor semantics follow ``SHAPE_FACTORS``. Edges use a logistic ramp so the
    render is differentiable in the latent.
    """

    sharpness = 2.0
    margin = 16.0

    def __init__(self, mixing, offset, image_shape):
        super().__init__(mixing, offset)
        h, w, c = image_shape
        if c != 3:
            raise ConfigError("oracle_shapes renders RGB images (channels=3)")
        self.image_shape = tuple(image_shape)
        self.register_buffer("rows", torch.arange(h, dtype=torch.float64) + 0.5)
        self.register_buffer("cols", torch.arange(w, dtype=torch.float64) + 0.5)
        self.register_buffer("defaults", torch.tensor(_SHAPE_DEFAULTS, dtype=torch.float64))

    def full_factors(self, z):
        f = self.factors(z)
        k = f.shape[1]
        rest = self.defaults[k:].to(z.dtype).expand(z.shape[0], -1)
        return torch.cat([f, rest], dim=1)

    def forward(self, z):
        h, w, _ = self.image_shape
        dtype = z.dtype
        fx, fy, fsize, fhue, fbg, fsat, fval, felong = self.full_factors(z).unbind(1)
        cx = self.margin + fx * (w - 2 * self.margin)
        cy = self.margin + fy * (h - 2 * self.margin)
        half = 0.5 * (8.0 + 24.0 * fsize)
        hx = half * (0.5 + felong)
        hy = half * (1.5 - felong)
        cols = self.cols.to(dtype)
        rows = self.rows.to(dtype)
        mx = torch.sigmoid(self.sharpness * (hx[:, None] - (cols[None, :] - cx[:, None]).abs()))
        my = torch.sigmoid(self.sharpness * (hy[:, None] - (rows[None, :] - cy[:, None]).abs()))
        mask = my[:, :, None] * mx[:, None, :]  # (B, H, W)

        # HSV -> RGB, hue restricted to [0, 5/6] so the factor does not wrap
        hue6 = fhue * 5.0
        channels = []
        for n in (5.0, 3.0, 1.0):
            kk = torch.remainder(n + hue6, 6.0)
            ramp = torch.minimum(torch.minimum(kk, 4.0 - kk), torch.ones_like(kk)).clamp(min=0.0)
            channels.append(fval - fval * fsat * ramp)
        color = torch.stack(channels, dim=1)  # (B, 3)
        background = (0.5 * fbg)[:, None, None, None]
        img = background * (1.0 - mask[:, None]) + color[:, :, None, None] * mask[:, None]
        return img.clamp(0.0, 1.0)


def make_oracle_generator(
    K: int,
    kind: str = "oracle_linear",
    mixing_seed: int = 0,
    entangle: bool = False,
    image_shape: Optional[Sequence[int]] = None,
) -> GeneratorHandle:
    """Build an oracle generator with ``K`` ground-truth factors.

    With ``entangle=False`` the latent is the factor vector itself. Otherwise
    ``z = R f + b`` for a Haar-random rotation ``R`` drawn from ``mixing_seed``
    and ``b = -R (0.5, ..., 0.5)`` so the latent prior is centred at zero.
    """
    if kind not in ORACLE_KINDS:
        raise UnsupportedError(f"unsupported oracle kind {kind!r}; expected one of {ORACLE_KINDS}")
    if not 2 <= K <= 8:
        raise ConfigError(f"oracle factor count must be in [2, 8], got {K}")
    if entangle:
        mixing = ortho_group.rvs(K, random_state=np.random.RandomState(mixing_seed))
        offset = -mixing @ np.full(K, 0.5)
    else:
        mixing = np.eye(K)
        offset = np.zeros(K)

    if kind == "oracle_linear":
        shape = tuple(image_shape or (16, 16, 1))
        if shape[0] < K:
            raise ConfigError("oracle_linear needs at least one pixel row per factor")
        renderer = LinearOracleRenderer(mixing, offset, shape)
    else:
        shape = tuple(image_shape or (64, 64, 3))
        renderer = ShapesOracleRenderer(mixing, offset, shape)

    return GeneratorHandle(
        kind=kind,
        latent_dim=K,
        latent_space_tag="Z",
        image_shape=shape,
        seed=mixing_seed,
        prior="factor_uniform",
        num_factors=K,
        entangle=entangle,
        renderer=_freeze(renderer),
    )


class _ScriptedGenerator(nn.Module):
    def __init__(self, module, out_range, image_shape):
        super().__init__()
        self.module = module
        self.lo, self.hi = (float(v) for v in out_range)
        self.image_shape = tuple(image_shape)

    def forward(self, z):
        param = next(iter(self.module.parameters()), None)
        dtype = param.dtype if param is not None else z.dtype
        img = self.module(z.to(dtype)).to(z.dtype)
        h, w, c = self.image_shape
        img = img.reshape(z.shape[0], c, h, w)
        return ((img - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)


MANIFEST_FIELDS = ("latent_dim", "latent_space_tag", "image_shape", "kind")


def load_adapter(checkpoint_dir) -> GeneratorHandle:
    """Load an external generator checkpoint.

    The directory holds ``manifest.json`` plus TorchScript files. Required
    manifest fields: ``latent_dim``, ``latent_space_tag``, ``image_shape``,
    ``kind`` (only ``"torchscript"`` is understood). Optional: ``prior``
    (defaults to ``standard_normal`` for Z and ``mapped_normal`` for W),
    ``generator`` (file name, default ``generator.pt``), ``mapping`` and
    ``mapping_input_dim`` for W-space models, ``output_range``.
    """
    root = Path(checkpoint_dir)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read adapter manifest in {root}: {exc}") from exc
    missing = [k for k in MANIFEST_FIELDS if k not in manifest]
    if missing:
        raise ConfigError(f"adapter manifest missing fields {missing}")
    if manifest["kind"] != "torchscript":
        raise UnsupportedError(f"unsupported adapter backend {manifest['kind']!r}")
    tag = manifest["latent_space_tag"]
    if tag not in LATENT_SPACES:
        raise ConfigError(f"unknown latent space tag {tag!r}")
    prior = manifest.get("prior", "mapped_normal" if tag == "W" else "standard_normal")
    if prior not in ("standard_normal", "mapped_normal"):
        raise ConfigError(f"adapter prior must be declared as standard_normal or mapped_normal, got {prior!r}")

    image_shape = tuple(int(v) for v in manifest["image_shape"])
    gen = torch.jit.load(str(root / manifest.get("generator", "generator.pt")), map_location="cpu")
    renderer = _ScriptedGenerator(gen, manifest.get("output_range", (0.0, 1.0)), image_shape)
    mapping = None
    mapping_input_dim = None
    if prior == "mapped_normal":
        if "mapping" not in manifest:
            raise ConfigError("a mapped_normal prior needs a 'mapping' module in the manifest")
        mapping = _freeze(torch.jit.load(str(root / manifest["mapping"]), map_location="cpu"))
        mapping_input_dim = int(manifest.get("mapping_input_dim", manifest["latent_dim"]))
    return GeneratorHandle(
        kind="external_adapter",
        latent_dim=int(manifest["latent_dim"]),
        latent_space_tag=tag,
        image_shape=image_shape,
        prior=prior,
        renderer=_freeze(renderer),
        mapping=mapping,
        mapping_input_dim=mapping_input_dim,
        source=str(root),
    )


def handle_from_description(desc: dict) -> GeneratorHandle:
    """Inverse of ``GeneratorHandle.describe``."""
    kind = desc.get("kind")
    if kind in ORACLE_KINDS:
        return make_oracle_generator(
            int(desc["num_factors"]),
            kind,
            int(desc.get("mixing_seed", 0)),
            bool(desc.get("entangle", False)),
            desc.get("image_shape"),
        )
    if kind == "external_adapter":
        return load_adapter(desc["checkpoint"])
    raise UnsupportedError(f"unsupported generator kind {kind!r}")


def _stack_codes(handle: GeneratorHandle, batch: Sequence[LatentCode]) -> np.ndarray:
    if len(batch) == 0:
        raise InputError("generate needs a non-empty batch")
    for code in batch:
        if code.space_tag != handle.latent_space_tag:
            raise ConfigError(
                f"latent code lives in {code.space_tag} but generator expects {handle.latent_space_tag}"
            )
        if len(code) != handle.latent_dim:
            raise InputError(f"latent code has length {len(code)}, expected {handle.latent_dim}")
    return np.stack([code.values for code in batch])


def generate(handle: GeneratorHandle, batch: Sequence[LatentCode]) -> np.ndarray:
    """Render a batch of latent codes to ``(batch, H, W, C)`` images in [0, 1]."""
    z = _stack_codes(handle, batch)
    return generate_array(handle, z)


def generate_array(handle: GeneratorHandle, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise InputError("latent codes contain non-finite entries")
    with torch.no_grad():
        img = handle.render(torch.as_tensor(z))
    return img.permute(0, 2, 3, 1).numpy()


def sample_latent_array(handle: GeneratorHandle, count: int, rng: np.random.Generator) -> np.ndarray:
    if count < 1:
        raise InputError(f"count must be >= 1, got {count}")
    if handle.prior == "standard_normal":
        return rng.standard_normal((count, handle.latent_dim))
    if handle.prior == "factor_uniform":
        f = rng.random((count, handle.num_factors))
        return factors_to_latent(handle, f)
    if handle.prior == "mapped_normal":
        z = rng.standard_normal((count, handle.mapping_input_dim))
        with torch.no_grad():
            w = handle.mapping(torch.as_tensor(z, dtype=torch.float32))
        return w.double().numpy().reshape(count, handle.latent_dim)
    raise ConfigError(f"unknown prior {handle.prior!r}")


def sample_latent(handle: GeneratorHandle, count: int, rng: np.random.Generator) -> list:
    """Draw ``count`` codes from the handle's declared prior."""
    z = sample_latent_array(handle, count, rng)
    return [LatentCode(row, handle.latent_space_tag) for row in z]


def factors_to_latent(handle: GeneratorHandle, factors: np.ndarray) -> np.ndarray:
    """Map factor vectors to latents, ``z = R f + b``."""
    handle._require_oracle()
    f = np.asarray(factors, dtype=np.float64)
    return f @ handle.mixing.T + handle.offset


def true_factors_array(handle: GeneratorHandle, z: np.ndarray) -> np.ndarray:
    handle._require_oracle()
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return np.clip((z - handle.offset) @ handle.mixing, 0.0, 1.0)


def oracle_true_factors(handle: GeneratorHandle, z: LatentCode) -> np.ndarray:
    """Ground-truth factors ``f = clip(R^-1 (z - b), 0, 1)`` of an oracle latent."""
    handle._require_oracle()
    if len(z) != handle.latent_dim:
        raise InputError(f"latent code has length {len(z)}, expected {handle.latent_dim}")
    return true_factors_array(handle, z.values)[0]


def pattern_weights(handle: GeneratorHandle, images: np.ndarray) -> np.ndarray:
    """Recover per-band weights from ``oracle_linear`` images (band means)."""
    if handle.kind != "oracle_linear":
        raise UnsupportedError("pattern weights are defined for oracle_linear only")
    images = np.asarray(images)
    h = handle.image_shape[0]
    band = (np.arange(h) * handle.num_factors) // h
    return np.stack([images[:, band == k].mean(axis=(1, 2, 3)) for k in range(handle.num_factors)], axis=1)


def parameter_hash(handle: GeneratorHandle) -> str:
    """SHA-256 over every tensor the generator holds, in state-dict order."""
    digest = hashlib.sha256()
    for module in (handle.renderer, handle.mapping):
        if module is None:
            continue
        for name, tensor in module.state_dict().items():
            digest.update(name.encode())
            digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()
