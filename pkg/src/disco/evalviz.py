"""File-emitting diagnostics: traversal grids, direction similarity, response
profiles and 3-D scatter exports.

Every writer is deterministic for a fixed seed: PNGs carry no metadata chunks
and CSV floats are written with ``repr`` precision.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from PIL import Image

from . import metrics
from .backend import (
    GeneratorHandle,
    LatentCode,
    factors_to_latent,
    generate_array,
    sample_latent_array,
    true_factors_array,
)
from .contrastor import ZERO_NORM, Encoder, encode, variation_rows
from .errors import ConfigError, InputError
from .navigator import Navigator

log = logging.getLogger(__name__)

GUTTER = 2
MIN_SIMILARITY_SAMPLES = 16


def _to_uint8(images: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)


def _save_png(array: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if array.ndim == 3 and array.shape[2] == 1:
        array = array[:, :, 0]
    Image.fromarray(array).save(path, format="PNG", optimize=False)
    return path


def _fmt(value) -> str:
    value = float(value)
    return "" if np.isnan(value) else repr(value)


def _write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return path


def _latent_rows(gen: GeneratorHandle, z_rows) -> np.ndarray:
    rows = []
    for z in z_rows:
        if isinstance(z, LatentCode):
            if z.space_tag != gen.latent_space_tag:
                raise ConfigError(f"latent code lives in {z.space_tag}, generator expects {gen.latent_space_tag}")
            z = z.values
        rows.append(np.asarray(z, dtype=np.float64).reshape(-1))
    if not rows:
        raise InputError("traversal grid needs at least one base latent")
    z = np.stack(rows)
    if z.shape[1] != gen.latent_dim:
        raise InputError(f"base latents must have length {gen.latent_dim}")
    return z


def traversal_cells(gen: GeneratorHandle, nav: Navigator, z_rows, d: int, eps_steps: Sequence[float]) -> np.ndarray:
    """Images ``G(z_r + A(eps_c e_d))`` as a ``(rows, cols, H, W, C)`` array."""
    z = _latent_rows(gen, z_rows)
    eps = np.asarray(list(eps_steps), dtype=np.float64)
    if eps.size == 0:
        raise InputError("traversal grid needs at least one shift value")
    with torch.no_grad():
        shifts = np.stack([nav.shift(d, float(e)).double().numpy() for e in eps])
    latents = (z[:, None, :] + shifts[None, :, :]).reshape(-1, gen.latent_dim)
    images = generate_array(gen, latents)
    return images.reshape(z.shape[0], eps.size, *images.shape[1:])


def traversal_grid(gen, nav, z_rows, d: int, eps_steps, path) -> Path:
    """Write a PNG grid: one row per base latent, one column per shift.

    Cells are laid out row-major and separated by 2-pixel white gutters (no
    outer border).
    """
    cells = _to_uint8(traversal_cells(gen, nav, z_rows, d, eps_steps))
    rows, cols, h, w, c = cells.shape
    grid = np.full((rows * h + (rows - 1) * GUTTER, cols * w + (cols - 1) * GUTTER, c), 255, dtype=np.uint8)
    for r in range(rows):
        for k in range(cols):
            y, x = r * (h + GUTTER), k * (w + GUTTER)
            grid[y:y + h, x:x + w] = cells[r, k]
    return _save_png(grid, path)


def direction_means(
    encoder: Encoder,
    gen: GeneratorHandle,
    nav: Navigator,
    rng: np.random.Generator,
    samples: int = 64,
    eps_max: float = 3.0,
):
    """Mean normalized variation per direction, plus the number of samples used.

    Returns ``(means, counts)`` with shapes ``(D, n)`` and ``(D,)``. Samples
    whose variation vanishes are dropped from the mean rather than resampled.
    """
    if samples < 1:
        raise InputError("samples must be positive")
    D = nav.num_directions
    means, counts = [], []
    for d in range(D):
        z = sample_latent_array(gen, samples, rng)
        eps = rng.uniform(-eps_max, eps_max, size=samples)
        with torch.no_grad():
            rows = variation_rows(encoder, gen, nav, z, np.full(samples, d), eps).double()
        norms = torch.linalg.vector_norm(rows, dim=1)
        keep = norms > ZERO_NORM
        counts.append(int(keep.sum()))
        if counts[-1] == 0:
            means.append(np.zeros(rows.shape[1]))
        else:
            means.append((rows[keep] / norms[keep, None]).mean(dim=0).numpy())
    return np.stack(means), np.asarray(counts)


def direction_similarity_matrix(means, counts=None) -> np.ndarray:
    """Cosine similarity between per-direction mean variation vectors.

    Directions whose mean is degenerate (zero, non-finite, or built from fewer
    than 16 samples) get ``NaN`` entries, meaning "missing".
    """
    means = np.asarray(means, dtype=np.float64)
    if means.ndim != 2 or means.shape[0] < 2:
        raise InputError("need a (D, n) matrix of mean vectors with D >= 2")
    norms = np.linalg.norm(means, axis=1)
    valid = np.isfinite(norms) & (norms > ZERO_NORM)
    if counts is not None:
        counts = np.asarray(counts)
        if counts.shape != (means.shape[0],):
            raise InputError("counts must hold one entry per direction")
        valid &= counts >= MIN_SIMILARITY_SAMPLES
    unit = np.zeros_like(means)
    unit[valid] = means[valid] / norms[valid, None]
    sim = np.clip(unit @ unit.T, -1.0, 1.0)
    np.fill_diagonal(sim, 1.0)
    sim[~valid, :] = np.nan
    sim[:, ~valid] = np.nan
    return sim


def similarity_heatmap(matrix, path, cell: int = 16) -> Path:
    """Render a similarity matrix as a PNG (viridis, missing entries grey)."""
    from matplotlib import colormaps

    m = np.asarray(matrix, dtype=np.float64)
    missing = ~np.isfinite(m)
    rgba = colormaps["viridis"](np.where(missing, 0.0, np.clip(m, 0.0, 1.0)))
    rgb = _to_uint8(rgba[..., :3])
    rgb[missing] = 128
    big = np.repeat(np.repeat(rgb, cell, axis=0), cell, axis=1)
    return _save_png(big, path)


def write_similarity_csv(matrix, path) -> Path:
    m = np.asarray(matrix)
    header = ["direction"] + [f"d{j}" for j in range(m.shape[1])]
    return _write_csv(path, header, ([str(i)] + list(row) for i, row in enumerate(m)))


def _require_oracle(gen: GeneratorHandle, what: str):
    if not gen.is_oracle:
        raise ConfigError(f"{what} needs an oracle generator with known factors")


def _encode_factors(encoder: Encoder, gen: GeneratorHandle, factors: np.ndarray) -> np.ndarray:
    images = generate_array(gen, factors_to_latent(gen, factors))
    with torch.no_grad():
        return encode(encoder, images).double().numpy()


def variation_response_profile(
    encoder: Encoder,
    gen: GeneratorHandle,
    factor: int,
    sweep: Sequence[float],
    path,
    bases: int = 16,
    seed: int = 0,
) -> Path:
    """CSV of the mean ``|E(x(f_k = s)) - E(x(f_k = sweep[0]))|`` per code dimension.

    ``bases`` random factor vectors are drawn, the chosen factor is swept over
    ``sweep`` while the others stay fixed, and the absolute code change is
    averaged over bases.
    """
    _require_oracle(gen, "variation_response_profile")
    K = gen.num_factors
    if not 0 <= factor < K:
        raise InputError(f"factor index must be in [0, {K})")
    sweep = np.asarray(list(sweep), dtype=np.float64)
    if sweep.size == 0:
        raise InputError("sweep must contain at least one value")
    rng = np.random.default_rng(seed)
    base = rng.random((bases, K))
    grid = np.repeat(base[:, None, :], sweep.size, axis=1)
    grid[:, :, factor] = sweep[None, :]
    codes = _encode_factors(encoder, gen, grid.reshape(-1, K)).reshape(bases, sweep.size, -1)
    response = np.abs(codes - codes[:, :1, :]).mean(axis=0)
    header = ["factor_value"] + [f"dim_{j}" for j in range(response.shape[1])]
    return _write_csv(path, header, ([s] + list(r) for s, r in zip(sweep, response)))


def matched_dimensions(encoder, gen, factors: Sequence[int], samples: int = 2000, bins: int = 20, seed: int = 0):
    """Code dimension with the largest mutual information for each factor."""
    rng = np.random.default_rng(seed)
    z = sample_latent_array(gen, samples, rng)
    with torch.no_grad():
        codes = encode(encoder, generate_array(gen, z)).double().numpy()
    mi = metrics.mutual_info_matrix(codes, true_factors_array(gen, z), bins)
    return [int(np.argmax(mi[:, k])) for k in factors]


def latent_scatter_export(
    encoder: Encoder,
    gen: GeneratorHandle,
    factors: Sequence[int],
    resolution: int,
    path,
    dims: Optional[Sequence[int]] = None,
    seed: int = 0,
) -> Path:
    """Sweep a 3-factor grid and export the matched code dimensions as CSV.

    Unswept factors sit at 0.5. Columns: the three factor values (for
    colouring) followed by the three code values.
    """
    _require_oracle(gen, "latent_scatter_export")
    K = gen.num_factors
    if K < 3:
        raise ConfigError("latent scatter export needs an oracle with at least 3 factors")
    factors = [int(f) for f in factors]
    if len(factors) != 3 or len(set(factors)) != 3 or not all(0 <= f < K for f in factors):
        raise ConfigError(f"need three distinct factor indices in [0, {K})")
    if resolution < 2:
        raise InputError("resolution must be >= 2")
    if dims is None:
        dims = matched_dimensions(encoder, gen, factors, seed=seed)
    levels = np.linspace(0.0, 1.0, resolution)
    mesh = np.stack(np.meshgrid(levels, levels, levels, indexing="ij"), axis=-1).reshape(-1, 3)
    grid = np.full((mesh.shape[0], K), 0.5)
    grid[:, factors] = mesh
    codes = _encode_factors(encoder, gen, grid)[:, list(dims)]
    header = [f"factor_{f}" for f in factors] + [f"code_{j}_for_factor_{f}" for j, f in zip(dims, factors)]
    return _write_csv(path, header, (list(m) + list(c) for m, c in zip(mesh, codes)))
