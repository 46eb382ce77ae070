"""Contrastive and domination objectives, all in minimization form.

Inputs are row-stacked unit vectors: queries ``(B, n)``, positives
``(N, n)``, negatives ``(M, n)``. Similarities are dot products divided by
the temperature ``tau``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Tuple

import torch
import torch.nn.functional as F

from .errors import ConfigError

LOSS_VARIANTS = ("nce", "bce_logits")


@dataclass
class LossConfig:
    tau: float = 0.1
    lam: float = 1.0
    threshold: float = 9.0  # cosine 0.9 at tau = 0.1
    flipping_enabled: bool = True
    domination_enabled: bool = True
    variant: str = "bce_logits"

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if self.lam < 0:
            raise ConfigError("domination weight must be non-negative")
        if self.variant not in LOSS_VARIANTS:
            raise ConfigError(f"unknown loss variant {self.variant!r}")
        if math.isnan(self.threshold):
            raise ConfigError("flip threshold must not be NaN")


@dataclass
class LossReport:
    total: float
    contrastive_part: float
    domination_part: float
    flipped_count: int
    lam: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


def _check_tau(tau):
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")


def _logits(queries, keys, tau):
    return queries @ keys.t() / tau


def nce_loss(queries, positives, negatives, tau: float) -> torch.Tensor:
    """``-mean_i [logsumexp_j(q_i.k+_j / tau) - logsumexp_m(q_i.k-_m / tau)]``."""
    _check_tau(tau)
    pos = torch.logsumexp(_logits(queries, positives, tau), dim=1)
    neg = torch.logsumexp(_logits(queries, negatives, tau), dim=1)
    return -(pos - neg).mean()


def _positive_terms(queries, positives, tau):
    return -F.logsigmoid(_logits(queries, positives, tau)).sum(dim=1)


def bce_logits_loss(queries, positives, negatives, tau: float) -> torch.Tensor:
    """Binary cross-entropy with positives labelled 1 and negatives labelled 0.

    ``log(1 - sigmoid(x))`` is evaluated as ``logsigmoid(-x)``.
    """
    _check_tau(tau)
    neg = -F.logsigmoid(-_logits(queries, negatives, tau))
    return (_positive_terms(queries, positives, tau) + neg.sum(dim=1)).mean()


def flipped_bce_loss(queries, positives, negatives, tau: float, threshold: float) -> Tuple[torch.Tensor, int]:
    """BCE where negatives with logit ``>= threshold`` become soft positives.

    A flipped negative contributes ``-w * log sigmoid(alpha)`` with
    ``w = clamp(alpha * tau, 0, 1)``, its cosine similarity to the query.
    Returns the loss and the number of flipped (query, negative) pairs.
    """
    _check_tau(tau)
    alpha = _logits(queries, negatives, tau)
    flip = alpha >= threshold
    weight = (alpha * tau).clamp(0.0, 1.0)
    neg = torch.where(flip, -weight * F.logsigmoid(alpha), -F.logsigmoid(-alpha))
    loss = (_positive_terms(queries, positives, tau) + neg.sum(dim=1)).mean()
    return loss, int(flip.sum())


def domination_loss(queries, positives) -> torch.Tensor:
    """Shannon entropy of ``softmax(c)``, ``c`` the mean of queries and positives.

    Minimizing it drives the mean variation toward a one-hot vector.
    Bounded by ``[0, log n]``.
    """
    n = queries.shape[1]
    if n < 2:
        raise ConfigError("domination loss needs at least two dimensions")
    c = torch.cat([queries, positives], dim=0).mean(dim=0)
    logp = torch.log_softmax(c, dim=0)
    return -(logp.exp() * logp).sum()


def objective(batch, cfg: LossConfig):
    """Full objective for a realized batch: ``(total tensor, LossReport)``."""
    q, kp, kn = batch.queries, batch.positives, batch.negatives
    flipped = 0
    if cfg.variant == "nce":
        contrast = nce_loss(q, kp, kn, cfg.tau)
    elif cfg.flipping_enabled:
        contrast, flipped = flipped_bce_loss(q, kp, kn, cfg.tau, cfg.threshold)
    else:
        contrast = bce_logits_loss(q, kp, kn, cfg.tau)
    if cfg.domination_enabled:
        domination = domination_loss(q, kp)
    else:
        domination = torch.zeros((), dtype=contrast.dtype)
    total = contrast + cfg.lam * domination
    c, dm = float(contrast.detach()), float(domination.detach())
    report = LossReport(
        total=c + cfg.lam * dm,
        contrastive_part=c,
        domination_part=dm,
        flipped_count=flipped,
        lam=cfg.lam,
    )
    return total, report


def total_loss(batch, cfg: LossConfig) -> LossReport:
    return objective(batch, cfg)[1]
