"""Condition networks: motion encoder, intent predictor, endpoint predictor."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn


def init_weights(module: nn.Module, std: float | None = None) -> None:
    """Truncated-normal weights and zero biases for every Linear below ``module``.

    With ``std=None`` the scale is ``1/sqrt(fan_in)``, which keeps narrow
    coordinate projections (fan-in 2 or 4) from being drowned out by the
    positional and context terms they are summed with.
    """
    for m in module.modules():
        if isinstance(m, nn.Linear):
            s = std if std is not None else m.in_features ** -0.5
            nn.init.trunc_normal_(m.weight, std=s, a=-2 * s, b=2 * s)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def sinusoidal_embedding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Standard transformer sin/cos table for (possibly fractional) positions."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = positions.to(torch.float64).unsqueeze(-1) * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


def encoder_stack(width: int, depth: int, heads: int, ff_mult: int, dropout: float) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        width, heads, ff_mult * width, dropout=dropout, activation="gelu", batch_first=True, norm_first=True
    )
    return nn.TransformerEncoder(layer, depth, norm=nn.LayerNorm(width), enable_nested_tensor=False)


def mlp(d_in: int, d_hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, d_hidden), nn.GELU(), nn.Linear(d_hidden, d_out))


class MotionEncoder(nn.Module):
    """Temporal transformer over per-step position and velocity.

    Produces features of shape ``(B, t_obs, d)``.
    """

    def __init__(self, t_obs: int = 8, d: int = 256, depth: int = 2, heads: int = 4, ff_mult: int = 2, dropout: float = 0.0):
        super().__init__()
        self.t_obs = t_obs
        self.d = d
        self.input = nn.Linear(4, d)
        self.register_buffer("pos", sinusoidal_embedding(torch.arange(t_obs), d).float(), persistent=False)
        self.blocks = encoder_stack(d, depth, heads, ff_mult, dropout)
        init_weights(self)

    def forward(self, obs: torch.Tensor, neighbors: torch.Tensor | None = None) -> torch.Tensor:
        if neighbors is not None:
            raise NotImplementedError("social pooling over neighbours is not implemented")
        vel = torch.diff(obs, dim=1, prepend=obs[:, :1])
        x = self.input(torch.cat([obs, vel], dim=-1)) + self.pos.to(obs.dtype)
        return self.blocks(x)


class IntentPredictor(nn.Module):
    """Self-attention over observation features plus ``t_pred`` learned slots.

    Each slot is decoded to ``(d_cos, d_sin, d_r_raw)``.
    """

    def __init__(self, t_pred: int = 12, d: int = 256, depth: int = 4, heads: int = 4, ff_mult: int = 2, dropout: float = 0.0):
        super().__init__()
        self.t_pred = t_pred
        self.slots = nn.Parameter(torch.empty(t_pred, d))
        self.blocks = encoder_stack(d, depth, heads, ff_mult, dropout)
        self.head = nn.Linear(d, 3)
        init_weights(self)
        nn.init.trunc_normal_(self.slots, std=0.02)

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        b = feats.shape[0]
        x = torch.cat([feats, self.slots.to(feats.dtype).expand(b, -1, -1)], dim=1)
        x = self.blocks(x)[:, -self.t_pred :]
        return self.head(x)


@dataclass
class EndpointHypotheses:
    points: torch.Tensor  # (B, L, 2)
    probs: torch.Tensor  # (B, L)
    logits: torch.Tensor | None = None

    def top1(self) -> torch.Tensor:
        idx = self.probs.argmax(dim=-1)
        return self.points[torch.arange(len(idx)), idx]


class EndpointPredictor(nn.Module):
    """Learnable goal queries refined by cross-attention to motion features."""

    def __init__(self, L: int = 5, d: int = 256, depth: int = 4, heads: int = 4, ff_mult: int = 2, dropout: float = 0.0):
        super().__init__()
        if L < 1:
            raise ValueError("L must be >= 1")
        self.L = L
        self.queries = nn.Parameter(torch.empty(L, d))
        layer = nn.TransformerDecoderLayer(
            d, heads, ff_mult * d, dropout=dropout, activation="gelu", batch_first=True, norm_first=True
        )
        self.blocks = nn.TransformerDecoder(layer, depth, norm=nn.LayerNorm(d))
        self.point_head = mlp(d, d, 2)
        self.score_head = mlp(d, d, 1)
        init_weights(self)
        # queries are the mode anchors; keep them well separated
        nn.init.normal_(self.queries, std=1.0)

    def forward(self, feats: torch.Tensor) -> EndpointHypotheses:
        b = feats.shape[0]
        q = self.queries.to(feats.dtype).expand(b, -1, -1)
        h = self.blocks(q, feats)
        logits = self.score_head(h).squeeze(-1)
        return EndpointHypotheses(points=self.point_head(h), probs=torch.softmax(logits, dim=-1), logits=logits)
