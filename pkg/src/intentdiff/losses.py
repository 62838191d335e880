"""Training objective: intent, endpoint, confidence and noise losses."""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass(frozen=True)
class LossWeights:
    lambda_theta: float = 0.5
    lambda_r: float = 0.25
    lambda_e: float = 1.0
    lambda_p: float = 0.5
    lambda_dif: float = 1.0

    def __post_init__(self):
        for name, v in vars(self).items():
            if v < 0:
                raise ValueError(f"{name} must be non-negative, got {v}")


def _check(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_angle(pred_theta: torch.Tensor, true_theta: torch.Tensor) -> torch.Tensor:
    """Mean cosine distance ``1 - cos(pred - true)``, in ``[0, 2]``."""
    _check(pred_theta, true_theta)
    return (1 - torch.cos(pred_theta - true_theta)).mean()


def loss_radius(pred_r: torch.Tensor, true_r: torch.Tensor) -> torch.Tensor:
    _check(pred_r, true_r)
    return ((pred_r - true_r) ** 2).mean()


def loss_short(l_theta, l_r, w: LossWeights = LossWeights()):
    return w.lambda_theta * l_theta + w.lambda_r * l_r


def loss_endpoint(candidates: torch.Tensor, gt_endpoint: torch.Tensor):
    """Winner-take-all endpoint regression.

    Args:
        candidates: ``(N, L, 2)`` predicted endpoints.
        gt_endpoint: ``(N, 2)`` true endpoints.

    Returns:
        The mean over pedestrians of the smallest per-candidate MSE, and the
        ``(N,)`` index of the winning candidate.
    """
    if candidates.dim() != 3 or candidates.shape[-1] != 2 or candidates.shape[1] < 1:
        raise ValueError(f"candidates must be (N, L>=1, 2), got {tuple(candidates.shape)}")
    if gt_endpoint.shape != (candidates.shape[0], 2):
        raise ValueError(f"gt_endpoint must be ({candidates.shape[0]}, 2), got {tuple(gt_endpoint.shape)}")
    per = ((candidates - gt_endpoint.unsqueeze(1)) ** 2).mean(dim=-1)
    best, winner = per.min(dim=1)
    return best.mean(), winner


def loss_prob(probs: torch.Tensor, winner: torch.Tensor, p_min: float = 1e-6, logits: torch.Tensor | None = None) -> torch.Tensor:
    """``-log p_winner + sum of log p_other``.

    The non-winner probabilities are clamped to ``[p_min, 1]`` so the sum is
    bounded below.  When ``logits`` are given the winner term is the exact
    ``-log_softmax``, which stays finite and keeps its gradient after the
    winner's probability underflows; otherwise it is clamped like the rest.
    """
    logp = torch.log(probs.clamp(min=p_min, max=1.0))
    is_winner = torch.nn.functional.one_hot(winner, probs.shape[-1]).to(dtype=torch.bool)
    others = torch.where(is_winner, torch.zeros_like(logp), logp).sum(dim=-1)
    if logits is not None:
        win = torch.log_softmax(logits, dim=-1).gather(-1, winner.unsqueeze(-1)).squeeze(-1)
    else:
        win = logp.gather(-1, winner.unsqueeze(-1)).squeeze(-1)
    return (others - win).mean()


def loss_long(l_e, l_p, w: LossWeights = LossWeights()):
    return w.lambda_e * l_e + w.lambda_p * l_p


def loss_diffusion(true_noise: torch.Tensor, refined_noise: torch.Tensor) -> torch.Tensor:
    _check(true_noise, refined_noise)
    return ((true_noise - refined_noise) ** 2).mean()


def total_loss(l_short, l_long, l_dif, w: LossWeights = LossWeights()):
    return l_short + l_long + w.lambda_dif * l_dif
