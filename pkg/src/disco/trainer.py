"""Joint optimization of the navigator and the encoder against a frozen generator."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional

import numpy as np
import torch
from torch import nn

from . import checkpoint as ckpt_io
from .backend import GeneratorHandle
from .config import RunConfig
from .contrastor import Encoder, build_encoder
from .errors import ConfigError, TrainingError
from .losses import LossReport, objective
from .navigator import Navigator, init_navigator
from .sampler import draw_spec, realize_batch

log = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class TrainState:
    config: RunConfig
    navigator: Navigator
    encoder: Encoder
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    head: Optional[nn.Linear] = None
    step: int = 0
    resampled: int = 0

    @property
    def classify(self) -> bool:
        return self.config.trainer.ablation_mode.startswith("classify")

    @property
    def variation_mode(self) -> str:
        return "concat" if self.config.trainer.ablation_mode.endswith("concat") else "variation"

    def modules(self) -> Dict[str, nn.Module]:
        out = {"navigator": self.navigator, "encoder": self.encoder}
        if self.head is not None:
            out["head"] = self.head
        return out

    def parameter_hash(self) -> str:
        return ckpt_io.tensor_hash(self.named_tensors(include_optimizer=False))

    def named_tensors(self, include_optimizer: bool = True) -> Dict[str, np.ndarray]:
        tensors = {}
        for prefix, module in self.modules().items():
            for name, t in module.state_dict().items():
                tensors[f"{prefix}/{name}"] = t.detach().cpu().numpy().copy()
        if include_optimizer:
            params = self._param_names()
            for p, st in self.optimizer.state.items():
                for key, value in st.items():
                    if torch.is_tensor(value):
                        tensors[f"optim/{params[id(p)]}/{key}"] = value.detach().cpu().numpy().copy()
        return tensors

    def _param_names(self):
        names = {}
        for prefix, module in self.modules().items():
            for name, p in module.named_parameters():
                names[id(p)] = f"{prefix}/{name}"
        return names


def _make_optimizer(cfg: RunConfig, params):
    t = cfg.trainer
    if t.optimizer == "adaptive_moment":
        return torch.optim.Adam(params, lr=t.learning_rate)
    if t.optimizer == "sgd_momentum":
        return torch.optim.SGD(params, lr=t.learning_rate, momentum=0.9)
    raise ConfigError(f"unknown optimizer {t.optimizer!r}")


def init_state(config: RunConfig, gen: GeneratorHandle) -> TrainState:
    """Fresh parameters and rng stream derived from ``config.trainer.seed``."""
    cfg = config.resolved()
    if cfg.backend.kind != gen.kind:
        raise ConfigError(f"config expects a {cfg.backend.kind} generator, got {gen.kind}")
    dtype = _DTYPES[cfg.trainer.dtype]
    seed = cfg.trainer.seed
    gtorch = torch.Generator().manual_seed(seed)
    nav = init_navigator(cfg.navigator.kind, cfg.navigator.num_directions, gen.latent_dim, gtorch, dtype)
    enc = build_encoder(
        gen.image_shape, cfg.encoder.output_dim, cfg.encoder.preset, seed=seed + 1, dtype=dtype,
        hidden=cfg.encoder.hidden,
    )
    head = None
    if cfg.trainer.ablation_mode.startswith("classify"):
        width = cfg.encoder.output_dim * (2 if cfg.trainer.ablation_mode.endswith("concat") else 1)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed + 2)
            head = nn.Linear(width, cfg.navigator.num_directions).to(dtype)
    params = list(nav.parameters()) + list(enc.parameters())
    if head is not None:
        params += list(head.parameters())
    return TrainState(
        config=cfg,
        navigator=nav,
        encoder=enc,
        optimizer=_make_optimizer(cfg, params),
        rng=np.random.default_rng(seed),
        head=head,
    )


def _apply_update(state: TrainState, loss: torch.Tensor):
    nav = state.navigator
    before = nav.matrix.detach().clone() if nav.is_linear else None
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    state.optimizer.step()
    if before is not None and not torch.equal(before, nav.matrix.detach()):
        nav.project_()
    state.step += 1


def _draw_and_realize(state: TrainState, gen: GeneratorHandle):
    cfg = state.config
    s = cfg.sampler
    spec = draw_spec(state.rng, gen, cfg.navigator.num_directions, s.B, s.N, s.M, s.eps_max)
    batch = realize_batch(spec, state.encoder, gen, state.navigator, state.rng, mode=state.variation_mode)
    state.resampled += batch.resampled
    return batch


def _abort(state: TrainState, batch, report):
    dump = json.dumps(batch.spec.to_dict())
    log.error("non-finite loss at step %d; batch spec: %s", state.step, dump)
    err = TrainingError(f"non-finite loss at step {state.step}: {report}")
    err.batch_spec = batch.spec.to_dict()
    raise err


def train_step(state: TrainState, gen: GeneratorHandle):
    """One sampled batch, one loss evaluation, one update of navigator and encoder."""
    if state.classify:
        return classification_head_step(state, gen)
    batch = _draw_and_realize(state, gen)
    total, report = objective(batch, state.config.loss.to_loss_config())
    if not math.isfinite(report.total):
        _abort(state, batch, report)
    _apply_update(state, total)
    return state, report


def classification_head_step(state: TrainState, gen: GeneratorHandle):
    """Ablation: a linear head predicts the direction index from each variation.

    The contrastive term is replaced by cross-entropy over all B+N+M slots and
    the domination loss is dropped.
    """
    if not state.classify or state.head is None:
        raise ConfigError("classification step requires a classify_* ablation mode")
    batch = _draw_and_realize(state, gen)
    rows = torch.cat([batch.queries, batch.positives, batch.negatives])
    target = torch.as_tensor(batch.directions, dtype=torch.long)
    loss = nn.functional.cross_entropy(state.head(rows), target)
    value = float(loss.detach())
    report = LossReport(total=value, contrastive_part=value, domination_part=0.0, flipped_count=0, lam=0.0)
    if not math.isfinite(value):
        _abort(state, batch, report)
    _apply_update(state, loss)
    return state, report


@dataclass
class Checkpoint:
    """Serializable training snapshot (see ``checkpoint`` module for the format)."""

    tensors: Dict[str, np.ndarray]
    step: int
    rng_state: dict
    config: dict
    generator: dict = field(default_factory=dict)

    def parameter_hash(self) -> str:
        return ckpt_io.tensor_hash({k: v for k, v in self.tensors.items() if not k.startswith("optim/")})

    def save(self, directory) -> Path:
        return ckpt_io.save(directory, self)

    @classmethod
    def load(cls, directory) -> "Checkpoint":
        return ckpt_io.load(directory, cls)


def to_checkpoint(state: TrainState, gen: GeneratorHandle) -> Checkpoint:
    return Checkpoint(
        tensors=state.named_tensors(),
        step=state.step,
        rng_state=state.rng.bit_generator.state,
        config=state.config.to_dict(),
        generator=gen.describe(),
    )


def restore_state(checkpoint: Checkpoint, gen: GeneratorHandle) -> TrainState:
    """Rebuild a ``TrainState`` that continues exactly where ``checkpoint`` stopped."""
    cfg = RunConfig.from_dict(checkpoint.config)
    state = init_state(cfg, gen)
    for prefix, module in state.modules().items():
        sd = {}
        for name, ref in module.state_dict().items():
            key = f"{prefix}/{name}"
            if key not in checkpoint.tensors:
                raise ConfigError(f"checkpoint is missing tensor {key}")
            sd[name] = torch.as_tensor(checkpoint.tensors[key]).to(ref.dtype)
        module.load_state_dict(sd)
    names = state._param_names()
    for group in state.optimizer.param_groups:
        for p in group["params"]:
            prefix = f"optim/{names[id(p)]}/"
            entries = {k[len(prefix):]: v for k, v in checkpoint.tensors.items() if k.startswith(prefix)}
            if entries:
                state.optimizer.state[p] = {k: torch.as_tensor(v).clone() for k, v in entries.items()}
    state.step = checkpoint.step
    state.rng.bit_generator.state = checkpoint.rng_state
    return state


def parameter_fingerprint(module: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, t in module.state_dict().items():
        digest.update(name.encode())
        digest.update(t.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def fit(
    config: RunConfig,
    gen: GeneratorHandle,
    out_dir=None,
    log_path=None,
    callback: Optional[Callable[[TrainState, LossReport], None]] = None,
    state: Optional[TrainState] = None,
) -> Checkpoint:
    """Run ``config.trainer.steps`` steps and return the final checkpoint.

    When ``out_dir`` is given the final checkpoint is written there, plus
    ``step_XXXXXX`` snapshots every ``trainer.checkpoint_every`` steps.
    ``log_path`` receives one JSON line per step.
    """
    state = state or init_state(config, gen)
    cfg = state.config
    every = cfg.trainer.checkpoint_every
    log_file = open(log_path, "a") if log_path else None
    try:
        while state.step < cfg.trainer.steps:
            state, report = train_step(state, gen)
            if log_file:
                log_file.write(json.dumps({"step": state.step, **report.to_dict()}) + "\n")
            if callback is not None:
                callback(state, report)
            if out_dir and every and state.step % every == 0 and state.step < cfg.trainer.steps:
                to_checkpoint(state, gen).save(Path(out_dir) / f"step_{state.step:06d}")
    finally:
        if log_file:
            log_file.close()
    if state.resampled:
        log.info("resampled %d degenerate slots during training", state.resampled)
    final = to_checkpoint(state, gen)
    if out_dir:
        final.save(out_dir)
    return final
