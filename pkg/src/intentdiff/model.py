"""The full intention-guided diffusion predictor."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from . import losses as L
from .config import ExperimentConfig
from .data import TrajectoryWindow, stack_windows
from .diffusion import (
    GuidanceFusion,
    NoiseEstimator,
    RefineNet,
    StepEmbedding,
    data_residual_to_noise,
    ddim_step,
    forward_sample,
    make_schedule,
    refine_noise,
)
from .polar import (
    PolarIntentSequence,
    PolarResiduals,
    accumulate_polar,
    ground_truth_intent,
    polar_init_from_obs,
    residuals_to_increments,
)
from .predictors import EndpointHypotheses, EndpointPredictor, IntentPredictor, MotionEncoder, init_weights, mlp


@dataclass
class Conditions:
    """Per-window guidance features before soft masking."""

    feats: torch.Tensor
    g_obs: torch.Tensor
    g_short: torch.Tensor | None = None
    g_long: torch.Tensor | None = None
    intent: PolarIntentSequence | None = None
    endpoints: EndpointHypotheses | None = None

    def repeat(self, n: int, g_long: torch.Tensor | None = None) -> "Conditions":
        rep = lambda t: None if t is None else t.repeat_interleave(n, dim=0)
        return Conditions(
            feats=rep(self.feats),
            g_obs=rep(self.g_obs),
            g_short=rep(self.g_short),
            g_long=g_long if g_long is not None else rep(self.g_long),
        )


def allocate_candidates(probs: np.ndarray, n: int) -> np.ndarray:
    """Spread ``n`` samples over candidates in proportion to ``probs``.

    Uses largest-remainder rounding; ties go to the lower index.
    """
    raw = probs * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return np.repeat(np.arange(len(probs)), counts)


class IntentDiffusion(nn.Module):
    def __init__(self, cfg: ExperimentConfig):
        super().__init__()
        self.cfg = cfg
        self.schedule = make_schedule(cfg.K, cfg.beta_start, cfg.beta_end, cfg.gamma)
        d = cfg.d
        self.encoder = MotionEncoder(cfg.t_obs, d, cfg.encoder_depth, cfg.heads, cfg.ff_mult, cfg.dropout)
        self.obs_pool = nn.Linear(2 * d, d)
        self.intent = IntentPredictor(cfg.t_pred, d, cfg.intent_depth, cfg.heads, cfg.ff_mult, cfg.dropout)
        self.intent_embed = mlp(3 * cfg.t_pred, d, d)
        self.endpoint = EndpointPredictor(cfg.L, d, cfg.endpoint_depth, cfg.heads, cfg.ff_mult, cfg.dropout)
        self.endpoint_embed = mlp(2, d, d)
        self.fusion = GuidanceFusion(d)
        self.step_embed = StepEmbedding(d)
        self.estimator = NoiseEstimator(
            cfg.t_pred, d, cfg.denoiser_width, cfg.denoiser_depth, cfg.denoiser_heads, cfg.ff_mult, cfg.dropout
        )
        self.refiner = RefineNet(cfg.t_pred, d, cfg.refine_hidden)
        init_weights(self.obs_pool)
        init_weights(self.intent_embed)
        init_weights(self.endpoint_embed)
        self.register_buffer("data_scale", torch.tensor(1.0))

    # -- condition networks -------------------------------------------------

    @property
    def scale(self) -> float:
        return float(self.data_scale)

    def predict_intent(self, feats: torch.Tensor, obs: torch.Tensor) -> PolarIntentSequence:
        res = PolarResiduals.from_channels(self.intent(feats))
        d_theta, d_r = residuals_to_increments(res)
        theta0, r0 = polar_init_from_obs(obs * self.data_scale, self.cfg.dt, self.cfg.polar_eps)
        seq = accumulate_polar(theta0, r0, d_theta, d_r)
        seq.origin = obs[:, -1]
        return seq

    def embed_intent(self, intent: PolarIntentSequence) -> torch.Tensor:
        f = intent.as_features()
        if self.cfg.detach_guidance:
            f = f.detach()
        return self.intent_embed(f.flatten(1))

    def embed_endpoint(self, point: torch.Tensor) -> torch.Tensor:
        if self.cfg.detach_guidance:
            point = point.detach()
        return self.endpoint_embed(point)

    def encode(self, obs: torch.Tensor) -> Conditions:
        feats = self.encoder(obs)
        g_obs = self.obs_pool(torch.cat([feats.mean(dim=1), feats[:, -1]], dim=-1))
        return Conditions(feats=feats, g_obs=g_obs)

    def conditions(self, obs: torch.Tensor) -> Conditions:
        """Encoder features, intent and endpoint hypotheses for normalized ``obs``.

        ``g_long`` is filled with the most confident endpoint.
        """
        cond = self.encode(obs)
        feats = cond.feats
        if self.cfg.enable_short:
            cond.intent = self.predict_intent(feats, obs)
            cond.g_short = self.embed_intent(cond.intent)
        if self.cfg.enable_long:
            cond.endpoints = self.endpoint(feats)
            cond.g_long = self.embed_endpoint(cond.endpoints.top1())
        return cond

    # -- denoiser -----------------------------------------------------------

    def estimate(self, cond: Conditions, y_k: torch.Tensor, k: torch.Tensor, return_parts: bool = False):
        """Refined noise prediction for a batch of noised futures at steps ``k``."""
        cfg = self.cfg
        e_k = self.step_embed(k)
        bundle = self.fusion(cond.g_obs, cond.g_short, cond.g_long, e_k, softmask=cfg.enable_softmask)
        eps_hat = self.estimator(bundle, y_k)
        eps = eps_hat
        if cfg.enable_refine:
            delta = self.refiner(bundle, eps_hat if cfg.refine_in == "eps" else y_k)
            if cfg.refine_out == "eps":
                eps = refine_noise(eps_hat, delta)
            else:
                eps = data_residual_to_noise(eps_hat, delta, k, self.schedule)
        if return_parts:
            return eps, eps_hat, bundle
        return eps

    # -- training -----------------------------------------------------------

    def compute_losses(self, obs: torch.Tensor, fut: torch.Tensor, k: torch.Tensor, noise: torch.Tensor) -> dict:
        """Loss parts and weighted total for one batch of normalized windows.

        Disabled branches are absent from the returned dict.
        """
        cfg = self.cfg
        w = cfg.loss_weights
        cond = self.encode(obs)
        feats = cond.feats
        out = {}
        zero = obs.new_zeros(())
        l_short = l_long = zero
        if cfg.enable_short:
            intent = self.predict_intent(feats, obs)
            with torch.no_grad():
                target = ground_truth_intent(obs * self.data_scale, fut * self.data_scale, cfg.dt, cfg.polar_eps)
            out["L_theta"] = L.loss_angle(intent.theta, target.theta)
            out["L_r"] = L.loss_radius(intent.radius, target.radius)
            l_short = L.loss_short(out["L_theta"], out["L_r"], w)
            cond.g_short = self.embed_intent(intent)
        if cfg.enable_long:
            hyp = self.endpoint(feats)
            out["L_e"], winner = L.loss_endpoint(hyp.points, fut[:, -1])
            out["L_p"] = L.loss_prob(hyp.probs, winner, cfg.p_min, hyp.logits)
            l_long = L.loss_long(out["L_e"], out["L_p"], w)
            cond.g_long = self.embed_endpoint(hyp.points[torch.arange(len(winner)), winner])
        y_k = forward_sample(fut, k, noise, self.schedule)
        eps = self.estimate(cond, y_k, k)
        out["L_dif"] = L.loss_diffusion(noise, eps)
        out["total"] = L.total_loss(l_short, l_long, out["L_dif"], w)
        return out

    # -- sampling -----------------------------------------------------------

    @torch.no_grad()
    def sample(self, obs: torch.Tensor, y_init: torch.Tensor) -> torch.Tensor:
        """Run the DDIM chain from ``y_init`` of shape ``(B, n, t_pred, 2)``.

        Returns normalized futures of the same shape.
        """
        b, n = y_init.shape[:2]
        cond = self.conditions(obs)
        g_long = None
        if cond.endpoints is not None and self.cfg.endpoint_mode == "cycle":
            probs = cond.endpoints.probs.cpu().numpy()
            idx = np.stack([allocate_candidates(p, n) for p in probs])
            pts = cond.endpoints.points[torch.arange(b).unsqueeze(1), torch.as_tensor(idx)]
            g_long = self.embed_endpoint(pts.reshape(b * n, 2))
        cond = cond.repeat(n, g_long)
        y = y_init.reshape(b * n, *y_init.shape[2:]).to(obs.dtype)
        for k in self.schedule.sampling_steps()[:-1]:
            kk = torch.full((b * n,), k, dtype=torch.long)
            y = ddim_step(y, k, self.estimate(cond, y, kk), self.schedule)
        return y.reshape(y_init.shape)

    def predict(self, windows: Sequence[TrajectoryWindow], n: int, seed: int, window_ids=None) -> np.ndarray:
        return sample_trajectories(self, windows, n, seed, window_ids)


def initial_noise(seed: int, window_ids: Sequence[int], n: int, t_pred: int) -> np.ndarray:
    """Independent standard-normal start states, one stream per (window, sample)."""
    out = np.empty((len(window_ids), n, t_pred, 2))
    for i, wid in enumerate(window_ids):
        for j in range(n):
            out[i, j] = np.random.default_rng([seed, int(wid), j]).standard_normal((t_pred, 2))
    return out


def sample_trajectories(
    model: IntentDiffusion,
    windows: Sequence[TrajectoryWindow],
    n: int = 20,
    seed: int = 0,
    window_ids: Sequence[int] | None = None,
    chunk: int = 64,
) -> np.ndarray:
    """Draw ``n`` futures per window, in world coordinates, shape ``(W, n, t_pred, 2)``.

    ``window_ids`` keys the noise streams (defaults to list position), so a
    window's samples do not depend on which other windows share its batch.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if window_ids is None:
        window_ids = range(len(windows))
    window_ids = list(window_ids)
    obs, _, offsets = stack_windows(windows)
    scale = model.scale
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    try:
        for s in range(0, len(windows), chunk):
            sl = slice(s, s + chunk)
            y0 = initial_noise(seed, window_ids[sl], n, model.cfg.t_pred)
            o = torch.as_tensor(obs[sl] / scale, dtype=dtype)
            y = model.sample(o, torch.as_tensor(y0, dtype=dtype))
            out.append(y.double().numpy() * scale + offsets[sl, None, None, :])
    finally:
        model.train(was_training)
    return np.concatenate(out)


class ConstantVelocity:
    """Baseline that extrapolates the last observed velocity; ``n`` identical samples."""

    def __init__(self, t_pred: int = 12):
        self.t_pred = t_pred

    def predict(self, windows, n, seed=0, window_ids=None) -> np.ndarray:
        preds = []
        for w in windows:
            v = w.obs[-1] - w.obs[-2]
            steps = np.arange(1, self.t_pred + 1)[:, None]
            preds.append(np.broadcast_to(w.obs[-1] + steps * v, (n, self.t_pred, 2)))
        return np.stack(preds)
