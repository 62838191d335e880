"""Noise schedule, forward noising, guidance fusion, noise estimation and DDIM."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .predictors import encoder_stack, init_weights, mlp, sinusoidal_embedding


@dataclass(frozen=True)
class DiffusionSchedule:
    """Linear variance schedule over steps ``1..K``.

    Arrays are stored 0-based, so ``beta[k - 1]`` is the variance of step ``k``.
    """

    K: int
    beta: torch.Tensor
    alpha: torch.Tensor
    alpha_bar: torch.Tensor
    gamma: int

    def abar(self, k) -> torch.Tensor:
        """Cumulative signal retention at step ``k`` with ``abar(0) == 1``."""
        k = torch.as_tensor(k, dtype=torch.long)
        padded = torch.cat([torch.ones(1, dtype=self.alpha_bar.dtype), self.alpha_bar])
        return padded[k]

    def sampling_steps(self) -> list[int]:
        """Visited steps from ``K`` down to 0, e.g. ``[100, 80, ..., 0]``."""
        return list(range(self.K, -1, -self.gamma))


def make_schedule(K: int = 100, beta_start: float = 1e-4, beta_end: float = 5e-2, gamma: int = 20) -> DiffusionSchedule:
    if K < 1:
        raise ValueError("K must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if gamma < 1 or K % gamma:
        raise ValueError(f"DDIM stride {gamma} must divide K={K}")
    beta = torch.linspace(beta_start, beta_end, K, dtype=torch.float64)
    alpha = 1.0 - beta
    alpha_bar = torch.cumprod(alpha, dim=0)
    return DiffusionSchedule(K=K, beta=beta, alpha=alpha, alpha_bar=alpha_bar, gamma=gamma)


def _bcast(v: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    v = v.to(like.dtype)
    return v.reshape(v.shape + (1,) * (like.dim() - v.dim()))


def forward_sample(y0: torch.Tensor, k, noise: torch.Tensor, s: DiffusionSchedule) -> torch.Tensor:
    """Noised state ``sqrt(abar_k) y0 + sqrt(1 - abar_k) noise``.

    ``k`` is a scalar or one step per leading batch element.
    """
    ab = _bcast(s.abar(k), y0)
    return ab.sqrt() * y0 + (1 - ab).sqrt() * noise


def predict_x0(y_k: torch.Tensor, k, eps: torch.Tensor, s: DiffusionSchedule) -> torch.Tensor:
    ab = _bcast(s.abar(k), y_k)
    return (y_k - (1 - ab).sqrt() * eps) / ab.sqrt()


def ddim_step(y_k: torch.Tensor, k: int, eps: torch.Tensor, s: DiffusionSchedule, stride: int | None = None) -> torch.Tensor:
    """Deterministic jump from step ``k`` to ``k - stride``."""
    stride = s.gamma if stride is None else stride
    if k < stride:
        raise ValueError(f"cannot step from k={k} with stride {stride}")
    x0 = predict_x0(y_k, k, eps, s)
    ab_prev = _bcast(s.abar(k - stride), y_k)
    return ab_prev.sqrt() * x0 + (1 - ab_prev).sqrt() * eps


class SoftMask(nn.Module):
    """Blend a condition feature toward a learned null token.

    ``M = sigmoid(MLP(g))``; output ``(1 - M) * g + M * psi``.
    """

    def __init__(self, d: int):
        super().__init__()
        self.mlp = mlp(d, d, d)
        self.psi = nn.Parameter(torch.zeros(d))
        init_weights(self)
        nn.init.trunc_normal_(self.psi, std=0.02)

    def mask(self, g: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.mlp(g))

    def forward(self, g: torch.Tensor) -> torch.Tensor:
        m = self.mask(g)
        return (1 - m) * g + m * self.psi


class StepEmbedding(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.d = d
        self.proj = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        init_weights(self)

    def forward(self, k: torch.Tensor) -> torch.Tensor:
        emb = sinusoidal_embedding(k, self.d).to(self.proj[0].weight.dtype)
        return self.proj(emb)


@dataclass
class GuidanceBundle:
    g_obs: torch.Tensor
    g_short: torch.Tensor
    g_long: torch.Tensor
    step_embed: torch.Tensor

    def context(self) -> torch.Tensor:
        return torch.cat([self.g_obs, self.g_short, self.g_long, self.step_embed], dim=-1)


class GuidanceFusion(nn.Module):
    """Per-modality soft masks for the observation, intent and endpoint features.

    A disabled modality contributes its null token; with soft masking off the
    raw features pass straight through.
    """

    MODALITIES = ("o", "s", "l")

    def __init__(self, d: int):
        super().__init__()
        self.masks = nn.ModuleDict({m: SoftMask(d) for m in self.MODALITIES})

    def fuse(self, g: torch.Tensor | None, modality: str, softmask: bool = True, batch: int | None = None) -> torch.Tensor:
        sm = self.masks[modality]
        if g is None:
            return sm.psi.expand(batch, -1)
        return sm(g) if softmask else g

    def forward(self, g_obs, g_short, g_long, step_embed, softmask: bool = True) -> GuidanceBundle:
        b = g_obs.shape[0]
        return GuidanceBundle(
            g_obs=self.fuse(g_obs, "o", softmask, b),
            g_short=self.fuse(g_short, "s", softmask, b),
            g_long=self.fuse(g_long, "l", softmask, b),
            step_embed=step_embed,
        )


class NoiseEstimator(nn.Module):
    """Transformer denoiser over the ``t_pred`` points of the noised future.

    Every point token sees the concatenated guidance context and step embedding.
    """

    def __init__(self, t_pred: int = 12, d_cond: int = 256, width: int = 512, depth: int = 4, heads: int = 4, ff_mult: int = 2, dropout: float = 0.0):
        super().__init__()
        # one linear map over concat(y_k, context), split so the shared
        # context is projected once per sample rather than once per point
        self.input = nn.Linear(2, width)
        self.context = nn.Linear(4 * d_cond, width, bias=False)
        self.register_buffer("pos", sinusoidal_embedding(torch.arange(t_pred), width).float(), persistent=False)
        self.blocks = encoder_stack(width, depth, heads, ff_mult, dropout)
        self.out = nn.Linear(width, 2)
        init_weights(self)

    def forward(self, bundle: GuidanceBundle, y_k: torch.Tensor) -> torch.Tensor:
        x = self.input(y_k) + self.context(bundle.context()).unsqueeze(1) + self.pos.to(y_k.dtype)
        return self.out(self.blocks(x))


class RefineNet(nn.Module):
    """Per-step residual correction of the predicted noise.

    The output layer starts at zero, so the refiner is an exact identity at
    initialisation.
    """

    def __init__(self, t_pred: int = 12, d_cond: int = 256, hidden: int = 256):
        super().__init__()
        self.input = nn.Linear(2, hidden)
        self.context = nn.Linear(4 * d_cond, hidden, bias=False)
        self.pos = nn.Parameter(torch.zeros(t_pred, hidden))
        self.body = nn.Sequential(nn.GELU(), nn.Linear(hidden, hidden), nn.GELU())
        self.out = nn.Linear(hidden, 2)
        init_weights(self)
        nn.init.trunc_normal_(self.pos, std=0.02)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, bundle: GuidanceBundle, inp: torch.Tensor) -> torch.Tensor:
        h = self.input(inp) + self.context(bundle.context()).unsqueeze(1) + self.pos.to(inp.dtype)
        return self.out(self.body(h))


def refine_noise(eps_hat: torch.Tensor, delta: torch.Tensor) -> torch.Tensor:
    return eps_hat + delta


def data_residual_to_noise(eps_hat: torch.Tensor, delta_y0: torch.Tensor, k, s: DiffusionSchedule) -> torch.Tensor:
    """Noise consistent with shifting the clean-data estimate by ``delta_y0``."""
    ab = _bcast(s.abar(k), eps_hat)
    return eps_hat - (ab / (1 - ab)).sqrt() * delta_y0
