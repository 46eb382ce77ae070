"""Run configuration: one JSON document, strictly validated.

Unknown keys are rejected. ``RunConfig.resolved()`` fills every
backend-dependent default so the snapshot stored with a checkpoint never
depends on the defaults of a later toolkit version.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from .backend import HANDLE_KINDS, ORACLE_KINDS
from .contrastor import ENCODER_PRESETS
from .errors import ConfigError
from .losses import LOSS_VARIANTS, LossConfig
from .navigator import NAVIGATOR_KINDS

OPTIMIZERS = ("sgd_momentum", "adaptive_moment")
ABLATION_MODES = ("contrast_variation", "contrast_concat", "classify_variation", "classify_concat")
METRICS = ("mig", "dci")
DTYPES = ("float32", "float64")


@dataclass
class BackendSection:
    kind: str = "oracle_linear"
    num_factors: int = 4
    mixing_seed: int = 0
    entangle: bool = True
    image_shape: Optional[List[int]] = None
    checkpoint: Optional[str] = None
    latent_space_tag: str = "Z"


@dataclass
class NavigatorSection:
    kind: str = "unit_columns"
    num_directions: Optional[int] = None


@dataclass
class EncoderSection:
    preset: Optional[str] = None
    output_dim: Optional[int] = None
    hidden: int = 128


@dataclass
class SamplerSection:
    B: int = 32
    N: int = 32
    M: int = 64
    eps_max: Optional[float] = None


@dataclass
class LossSection:
    variant: str = "bce_logits"
    tau: float = 0.1
    lam: float = 1.0
    threshold: Optional[float] = None
    flipping_enabled: bool = True
    domination_enabled: bool = True

    def to_loss_config(self) -> LossConfig:
        if not self.tau > 0:
            raise ConfigError(f"loss.tau must be positive, got {self.tau}")
        threshold = self.threshold if self.threshold is not None else 0.9 / self.tau
        return LossConfig(
            tau=self.tau,
            lam=self.lam,
            threshold=threshold,
            flipping_enabled=self.flipping_enabled,
            domination_enabled=self.domination_enabled,
            variant=self.variant,
        )


@dataclass
class TrainerSection:
    steps: int = 3000
    learning_rate: float = 1e-4
    optimizer: str = "adaptive_moment"
    seed: int = 0
    ablation_mode: str = "contrast_variation"
    dtype: str = "float32"
    checkpoint_every: int = 0


@dataclass
class EvalSection:
    metrics: List[str] = field(default_factory=lambda: ["mig", "dci"])
    bins: int = 20
    samples: int = 10000
    seed: int = 0
    dci_trees: int = 10
    dci_depth: int = 8
    factors_csv: Optional[str] = None
    image_list: Optional[str] = None


@dataclass
class RunConfig:
    backend: BackendSection = field(default_factory=BackendSection)
    navigator: NavigatorSection = field(default_factory=NavigatorSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    loss: LossSection = field(default_factory=LossSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    eval: EvalSection = field(default_factory=EvalSection)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return _build(cls, data, "config")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "RunConfig":
        b, nav, enc, s, lo, t, ev = (
            self.backend, self.navigator, self.encoder, self.sampler, self.loss, self.trainer, self.eval
        )
        _choice("backend.kind", b.kind, HANDLE_KINDS)
        _choice("backend.latent_space_tag", b.latent_space_tag, ("Z", "W"))
        if b.kind in ORACLE_KINDS and not 2 <= b.num_factors <= 8:
            raise ConfigError("backend.num_factors must be in [2, 8]")
        if b.kind == "external_adapter" and not b.checkpoint:
            raise ConfigError("backend.checkpoint is required for external adapters")
        _choice("navigator.kind", nav.kind, NAVIGATOR_KINDS)
        if nav.num_directions is not None and nav.num_directions < 2:
            raise ConfigError("navigator.num_directions must be >= 2")
        if enc.preset is not None:
            _choice("encoder.preset", enc.preset, ENCODER_PRESETS)
        if enc.output_dim is not None and enc.output_dim < 2:
            raise ConfigError("encoder.output_dim must be >= 2")
        if min(s.B, s.N, s.M) < 1:
            raise ConfigError("sampler sizes B, N, M must be >= 1")
        if s.eps_max is not None and not s.eps_max > 0:
            raise ConfigError("sampler.eps_max must be positive")
        _choice("loss.variant", lo.variant, LOSS_VARIANTS)
        lo.to_loss_config()
        if t.steps < 1:
            raise ConfigError("trainer.steps must be >= 1")
        if t.learning_rate < 0:
            raise ConfigError("trainer.learning_rate must be non-negative")
        _choice("trainer.optimizer", t.optimizer, OPTIMIZERS)
        _choice("trainer.ablation_mode", t.ablation_mode, ABLATION_MODES)
        _choice("trainer.dtype", t.dtype, DTYPES)
        for m in ev.metrics:
            _choice("eval.metrics", m, METRICS)
        if ev.bins < 2 or ev.samples < 2:
            raise ConfigError("eval.bins and eval.samples must be >= 2")
        return self

    def resolved(self) -> "RunConfig":
        """Copy with every ``None`` default filled in."""
        cfg = RunConfig.from_dict(self.to_dict()).validate()
        oracle = cfg.backend.kind in ORACLE_KINDS
        if cfg.navigator.num_directions is None:
            cfg.navigator.num_directions = 2 * cfg.backend.num_factors if oracle else 64
        if cfg.encoder.preset is None:
            cfg.encoder.preset = "mlp" if cfg.backend.kind == "oracle_linear" else "conv4"
        if cfg.encoder.output_dim is None:
            cfg.encoder.output_dim = cfg.navigator.num_directions
        if cfg.sampler.eps_max is None:
            cfg.sampler.eps_max = 3.0 if oracle else 6.0
        if cfg.loss.threshold is None:
            cfg.loss.threshold = 0.9 / cfg.loss.tau
        if oracle and cfg.backend.image_shape is None:
            cfg.backend.image_shape = [16, 16, 1] if cfg.backend.kind == "oracle_linear" else [64, 64, 3]
        return cfg


def _choice(name, value, allowed):
    if value not in allowed:
        raise ConfigError(f"{name} must be one of {list(allowed)}, got {value!r}")


def _build(cls, data: dict, where: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {unknown}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(sub):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}.{name} must be an object")
            kwargs[name] = _build(sub, value, f"{where}.{name}")
        else:
            kwargs[name] = _coerce(value, f, f"{where}.{name}")
    return cls(**kwargs)


def _coerce(value, f, where):
    default = f.default if f.default is not dataclasses.MISSING else None
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float) or f.type in ("Optional[float]", "float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str) or f.type == "Optional[str]":
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if f.type == "Optional[int]":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(value, list):
        return list(value)
    raise ConfigError(f"{where} has an unsupported value {value!r}")
