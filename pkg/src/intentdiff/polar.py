"""Polar representation of short-term motion intent.

Intent at each future step is the acceleration of the pedestrian expressed as
an angle and magnitude.  The network predicts per-step residuals which are
turned into increments and accumulated from the last observed state.

All functions accept numpy arrays or torch tensors and return tensors; leading
batch dimensions are carried through.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

DEFAULT_EPS = 1e-6


@dataclass
class PolarIntentSequence:
    theta: torch.Tensor  # (..., T)
    radius: torch.Tensor  # (..., T)
    origin: torch.Tensor | None = None  # (..., 2)

    def as_features(self) -> torch.Tensor:
        """``(..., T, 3)`` stack of ``cos(theta), sin(theta), radius``."""
        return torch.stack([torch.cos(self.theta), torch.sin(self.theta), self.radius], dim=-1)


@dataclass
class PolarResiduals:
    d_cos: torch.Tensor
    d_sin: torch.Tensor
    d_r_raw: torch.Tensor

    @classmethod
    def from_channels(cls, x: torch.Tensor) -> "PolarResiduals":
        return cls(x[..., 0], x[..., 1], x[..., 2])


def _t(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(x, dtype=torch.float64)


def wrap_angle(a):
    """Map angles into ``(-pi, pi]``."""
    a = _t(a)
    two_pi = 2 * math.pi
    return a - two_pi * torch.ceil((a - math.pi) / two_pi)


def second_derivative(positions, dt: float) -> torch.Tensor:
    """Second time derivative of a ``(..., T, 2)`` path, same length as the input.

    Interior points use the central stencil.  The two endpoints use the
    second-order one-sided stencil ``2p0 - 5p1 + 4p2 - p3`` (first-order
    ``p0 - 2p1 + p2`` when only three points exist).
    """
    p = _t(positions)
    n = p.shape[-2]
    if n < 3:
        raise ValueError(f"second_derivative needs at least 3 positions, got {n}")
    inner = p[..., 2:, :] - 2 * p[..., 1:-1, :] + p[..., :-2, :]
    if n >= 4:
        first = 2 * p[..., :1, :] - 5 * p[..., 1:2, :] + 4 * p[..., 2:3, :] - p[..., 3:4, :]
        last = 2 * p[..., -1:, :] - 5 * p[..., -2:-1, :] + 4 * p[..., -3:-2, :] - p[..., -4:-3, :]
    else:
        first, last = inner[..., :1, :], inner[..., -1:, :]
    return torch.cat([first, inner, last], dim=-2) / (dt * dt)


def accel_to_polar(ax, ay, eps: float = DEFAULT_EPS):
    """Angle and stabilised magnitude of an acceleration vector."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    ax, ay = _t(ax), _t(ay)
    theta = wrap_angle(torch.atan2(ay, ax))
    r = torch.sqrt(ax * ax + ay * ay + eps)
    return theta, r


def residuals_to_increments(res: PolarResiduals):
    d_theta = wrap_angle(torch.atan2(_t(res.d_sin), _t(res.d_cos)))
    d_r = F.softplus(_t(res.d_r_raw))
    return d_theta, d_r


def accumulate_polar(theta0, r0, d_theta, d_r) -> PolarIntentSequence:
    """Running sums of increments starting from ``(theta0, r0)``.

    ``theta0``/``r0`` have the batch shape of the increments minus the last
    (time) axis.
    """
    d_theta, d_r = _t(d_theta), _t(d_r)
    if d_theta.shape != d_r.shape:
        raise ValueError(f"increment shapes differ: {tuple(d_theta.shape)} vs {tuple(d_r.shape)}")
    theta0 = _t(theta0).to(d_theta)
    r0 = _t(r0).to(d_r)
    theta = wrap_angle(theta0.unsqueeze(-1) + torch.cumsum(d_theta, dim=-1))
    radius = r0.unsqueeze(-1) + torch.cumsum(d_r, dim=-1)
    return PolarIntentSequence(theta=theta, radius=radius)


def polar_init_from_obs(obs, dt: float, eps: float = DEFAULT_EPS):
    """Polar state at the final observed frame."""
    acc = second_derivative(obs, dt)[..., -1, :]
    return accel_to_polar(acc[..., 0], acc[..., 1], eps)


def ground_truth_intent(obs, fut, dt: float, eps: float = DEFAULT_EPS) -> PolarIntentSequence:
    """Target intent for every future step.

    The derivative runs over ``obs + fut`` so the first future step has a
    left neighbour.
    """
    obs, fut = _t(obs), _t(fut)
    path = torch.cat([obs, fut.to(obs)], dim=-2)
    acc = second_derivative(path, dt)[..., -fut.shape[-2] :, :]
    theta, r = accel_to_polar(acc[..., 0], acc[..., 1], eps)
    return PolarIntentSequence(theta=theta, radius=r, origin=obs[..., -1, :])


def polar_to_cartesian(theta, r):
    theta, r = _t(theta), _t(r)
    return r * torch.cos(theta), r * torch.sin(theta)
