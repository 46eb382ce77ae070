"""Learnable direction provider ``A(d, eps) = A(eps * e_d)``.

Direction indices are zero-based throughout the Python API.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, DegenerateParameterError, InputError, UnsupportedError

NAVIGATOR_KINDS = ("unit_columns", "orthonormal", "mlp3")
LINEAR_KINDS = ("unit_columns", "orthonormal")


def project_matrix(matrix, kind: str):
    """Project a ``latent_dim x D`` matrix onto the constraint set of ``kind``.

    ``unit_columns`` rescales each column to unit norm; ``orthonormal`` returns
    the polar factor ``U V^T`` of the SVD, the nearest matrix with orthonormal
    columns in Frobenius norm. Works on numpy arrays and torch tensors.
    """
    if kind not in LINEAR_KINDS:
        raise UnsupportedError(f"no constraint projection for navigator kind {kind!r}")
    is_numpy = isinstance(matrix, np.ndarray)
    m = torch.as_tensor(matrix)
    if kind == "unit_columns":
        norms = torch.linalg.vector_norm(m, dim=0)
        if torch.any(norms == 0):
            bad = torch.nonzero(norms == 0).flatten().tolist()
            raise DegenerateParameterError(f"zero column(s) {bad} cannot be normalized")
        out = m / norms
    else:
        u, _, vh = torch.linalg.svd(m, full_matrices=False)
        out = u @ vh
    return out.numpy() if is_numpy else out


class Navigator(nn.Module):
    """Global navigator over ``num_directions`` candidate directions.

    Linear kinds hold a ``latent_dim x D`` matrix whose column ``d`` is the
    traversal direction. ``mlp3`` is three bias-free affine layers with tanh
    between them (hidden width ``latent_dim``), so ``A(0) = 0``.
    """

    def __init__(self, kind: str, num_directions: int, latent_dim: int, hidden: Optional[int] = None):
        super().__init__()
        if kind not in NAVIGATOR_KINDS:
            raise ConfigError(f"unknown navigator kind {kind!r}")
        if num_directions < 1 or latent_dim < 1:
            raise ConfigError("navigator dimensions must be positive")
        if kind == "orthonormal" and num_directions > latent_dim:
            raise ConfigError(
                f"orthonormal navigator needs D <= latent_dim, got D={num_directions} > {latent_dim}"
            )
        self.kind = kind
        self.num_directions = num_directions
        self.latent_dim = latent_dim
        if kind in LINEAR_KINDS:
            self.matrix = nn.Parameter(torch.empty(latent_dim, num_directions))
            self.net = None
        else:
            width = hidden or latent_dim
            self.matrix = None
            self.net = nn.Sequential(
                nn.Linear(num_directions, width, bias=False),
                nn.Tanh(),
                nn.Linear(width, width, bias=False),
                nn.Tanh(),
                nn.Linear(width, latent_dim, bias=False),
            )

    @property
    def is_linear(self) -> bool:
        return self.kind in LINEAR_KINDS

    def _check_directions(self, d: torch.Tensor):
        if d.numel() and (int(d.min()) < 0 or int(d.max()) >= self.num_directions):
            raise InputError(f"direction index out of range [0, {self.num_directions})")

    def forward(self, d, eps) -> torch.Tensor:
        """Batched shift: rows ``A(eps_i * e_{d_i})`` of shape ``(batch, latent_dim)``."""
        d = torch.as_tensor(d, dtype=torch.long).reshape(-1)
        self._check_directions(d)
        dtype = self.matrix.dtype if self.is_linear else self.net[0].weight.dtype
        eps = torch.as_tensor(eps, dtype=dtype).reshape(-1)
        if eps.shape[0] != d.shape[0]:
            raise InputError("direction and shift batches differ in length")
        if self.is_linear:
            return eps[:, None] * self.matrix.t()[d]
        code = torch.zeros(d.shape[0], self.num_directions, dtype=dtype)
        code[torch.arange(d.shape[0]), d] = 1.0
        return self.net(eps[:, None] * code)

    def shift(self, d: int, eps: float) -> torch.Tensor:
        """Single displacement vector ``A(eps * e_d)``."""
        if not np.isfinite(eps):
            raise InputError("shift scalar must be finite")
        return self.forward([int(d)], [float(eps)])[0]

    def directions(self) -> torch.Tensor:
        """Unit-shift displacement for every direction, as columns (``latent_dim x D``)."""
        with torch.no_grad():
            if self.is_linear:
                return self.matrix.detach().clone()
            d = torch.arange(self.num_directions)
            return self.forward(d, torch.ones(self.num_directions)).t()

    @torch.no_grad()
    def project_(self) -> "Navigator":
        """Re-impose the column constraint in place (no-op for ``mlp3``)."""
        if self.is_linear:
            self.matrix.copy_(project_matrix(self.matrix.detach(), self.kind))
        return self

    def constraint_violation(self) -> float:
        """Max deviation from the declared constraint (0 for ``mlp3``)."""
        if not self.is_linear:
            return 0.0
        m = self.matrix.detach()
        if self.kind == "unit_columns":
            return float((torch.linalg.vector_norm(m, dim=0) - 1).abs().max())
        eye = torch.eye(m.shape[1], dtype=m.dtype)
        return float((m.t() @ m - eye).abs().max())


def project_constraints(nav: Navigator) -> Navigator:
    """Return a copy of ``nav`` with its column constraint enforced."""
    if not nav.is_linear:
        raise UnsupportedError("constraint projection applies to linear navigators only")
    out = Navigator(nav.kind, nav.num_directions, nav.latent_dim).to(nav.matrix.dtype)
    with torch.no_grad():
        out.matrix.copy_(project_matrix(nav.matrix.detach(), nav.kind))
    return out


def init_navigator(
    kind: str,
    num_directions: int,
    latent_dim: int,
    generator: Optional[torch.Generator] = None,
    dtype: torch.dtype = torch.float32,
) -> Navigator:
    """Random initialization followed by constraint projection for linear kinds."""
    nav = Navigator(kind, num_directions, latent_dim)
    with torch.no_grad():
        if nav.is_linear:
            nav.matrix.copy_(torch.randn(latent_dim, num_directions, generator=generator, dtype=torch.float64))
        else:
            for layer in nav.net:
                if isinstance(layer, nn.Linear):
                    bound = 1.0 / np.sqrt(layer.in_features)
                    w = torch.rand(layer.weight.shape, generator=generator, dtype=torch.float64)
                    layer.weight.copy_((2 * w - 1) * bound)
    nav = nav.to(dtype)
    return nav.project_()
