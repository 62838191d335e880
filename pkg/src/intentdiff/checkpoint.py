"""Checkpoint archive: named parameter arrays, config, config digest, step.

A checkpoint is a single ``torch.save`` file holding a dict::

    {
        "format": "intentdiff-checkpoint/1",
        "kind": "diffusion" | "constant_velocity",
        "config": {...ExperimentConfig fields...},
        "config_digest": "<16 hex chars>",
        "step": <int>,
        "state_dict": {"encoder.input.weight": Tensor, ...},
    }
"""

from __future__ import annotations

from pathlib import Path

import torch

from .config import ExperimentConfig
from .model import ConstantVelocity, IntentDiffusion

FORMAT = "intentdiff-checkpoint/1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model, cfg: ExperimentConfig, step: int = 0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kind = "constant_velocity" if isinstance(model, ConstantVelocity) else "diffusion"
    state = {} if kind == "constant_velocity" else {k: v.detach().clone() for k, v in model.state_dict().items()}
    torch.save(
        {
            "format": FORMAT,
            "kind": kind,
            "config": cfg.to_dict(),
            "config_digest": cfg.digest(),
            "step": int(step),
            "state_dict": state,
        },
        path,
    )
    return path


def load_checkpoint(path):
    """Rebuild the predictor stored at ``path``.

    Returns:
        ``(predictor, config, meta)`` where ``meta`` has ``step`` and ``config_digest``.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} not found")
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:  # torch raises several unrelated types for bad files
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc.__class__.__name__})") from None
    if not isinstance(blob, dict) or blob.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not an intentdiff checkpoint")
    cfg = ExperimentConfig.from_dict(blob["config"])
    if cfg.digest() != blob["config_digest"]:
        raise CheckpointError(f"{path}: config digest mismatch")
    if blob["kind"] == "constant_velocity":
        model = ConstantVelocity(cfg.t_pred)
    else:
        model = IntentDiffusion(cfg)
        model.load_state_dict(blob["state_dict"])
        model.eval()
    return model, cfg, {"step": blob["step"], "config_digest": blob["config_digest"]}
