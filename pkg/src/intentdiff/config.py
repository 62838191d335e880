"""Experiment configuration.

Config files are flat YAML mappings whose keys are :class:`ExperimentConfig`
field names.  Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from .losses import LossWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    # data
    dataset: str = "synthetic"  # ethucy | sdd | synthetic
    data_dir: str = ""
    split: str = ""  # held-out scene for leave-one-out
    synthetic_count: int = 500
    synthetic_test_count: int = 100
    synthetic_kinds: str = "straight,turning,stopping"
    synthetic_noise: float = 0.02
    t_obs: int = 8
    t_pred: int = 12
    stride: int = 1
    dt: float = 0.4
    data_scale: float = 0.0  # 0 -> std of training futures

    # diffusion
    K: int = 100
    gamma: int = 20
    beta_start: float = 1e-4
    beta_end: float = 5e-2
    n_samples: int = 20
    endpoint_mode: str = "top1"  # top1 | cycle

    # networks
    L: int = 5
    d: int = 256
    encoder_depth: int = 2
    intent_depth: int = 4
    endpoint_depth: int = 4
    heads: int = 4
    denoiser_width: int = 512
    denoiser_depth: int = 4
    denoiser_heads: int = 4
    refine_hidden: int = 256
    ff_mult: int = 2
    dropout: float = 0.0
    detach_guidance: bool = True

    # optimisation
    lr: float = 1e-3
    batch_size: int = 256
    epochs: int = 100
    max_steps: int = 0  # 0 -> no step cap
    time_budget: float = 0.0  # seconds, 0 -> none
    grad_clip: float = 1.0
    warmup_steps: int = 0
    seed: int = 0
    val_fraction: float = 0.1
    val_every: int = 100  # optimizer steps between validation passes
    val_max_windows: int = 256
    patience: int = 10  # validation passes without improvement
    checkpoint_every: int = 0
    out_dir: str = ""

    # loss
    lambda_theta: float = 0.5
    lambda_r: float = 0.25
    lambda_e: float = 1.0
    lambda_p: float = 0.5
    lambda_dif: float = 1.0
    p_min: float = 1e-6
    polar_eps: float = 1e-6

    # ablation switches
    enable_long: bool = True
    enable_short: bool = True
    enable_softmask: bool = True
    enable_refine: bool = True
    refine_in: str = "eps"  # eps | y
    refine_out: str = "eps"  # eps | y0

    def __post_init__(self):
        for name in (
            "t_obs", "t_pred", "stride", "K", "gamma", "n_samples", "L", "d", "encoder_depth",
            "intent_depth", "endpoint_depth", "heads", "denoiser_width", "denoiser_depth",
            "denoiser_heads", "refine_hidden", "ff_mult", "batch_size", "epochs", "val_every",
            "synthetic_count", "synthetic_test_count",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.t_obs < 3:
            raise ConfigError("t_obs must be >= 3 for acceleration estimates")
        if self.K % self.gamma:
            raise ConfigError(f"gamma={self.gamma} must divide K={self.K}")
        choices = {
            "dataset": ("ethucy", "sdd", "synthetic"),
            "endpoint_mode": ("top1", "cycle"),
            "refine_in": ("eps", "y"),
            "refine_out": ("eps", "y0"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        # validates the weights
        self.loss_weights

    @property
    def loss_weights(self) -> LossWeights:
        try:
            return LossWeights(self.lambda_theta, self.lambda_r, self.lambda_e, self.lambda_p, self.lambda_dif)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        # where a run is written does not change what it computes
        d = {k: v for k, v in self.to_dict().items() if k != "out_dir"}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: coerce(known[k], v) for k, v in d.items()})


def coerce(f: dataclasses.Field, value):
    """Convert ``value`` (possibly a string from the command line) to the field's type."""
    kind = f.type if isinstance(f.type, str) else f.type.__name__
    try:
        if kind == "bool":
            if isinstance(value, str):
                low = value.strip().lower()
                if low in ("1", "true", "yes", "on"):
                    return True
                if low in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind == "float":
            return float(value)
        return "" if value is None else str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{f.name}: cannot interpret {value!r} as {kind}") from None


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    data = {}
    if path:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        data = yaml.safe_load(path.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a flat key-value mapping")
        nested = [k for k, v in data.items() if isinstance(v, (dict, list))]
        if nested:
            raise ConfigError(f"{path}: nested values not allowed for {', '.join(map(str, nested))}")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_dict(data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
