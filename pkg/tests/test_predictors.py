import numpy as np
import pytest
import torch

from intentdiff.config import ExperimentConfig
from intentdiff.model import IntentDiffusion
from intentdiff.predictors import EndpointPredictor, IntentPredictor, MotionEncoder
from probes import finite_difference_check


def small(cls, **kw):
    torch.manual_seed(0)
    return cls(d=16, depth=1, heads=2, **kw)


def test_encoder_shape():
    enc = small(MotionEncoder, t_obs=8)
    assert enc(torch.randn(5, 8, 2)).shape == (5, 8, 16)


def test_encoder_rejects_neighbors():
    with pytest.raises(NotImplementedError):
        small(MotionEncoder)(torch.randn(1, 8, 2), neighbors=torch.randn(1, 3, 8, 2))


def test_intent_predictor_shape():
    assert small(IntentPredictor, t_pred=12)(torch.randn(4, 8, 16)).shape == (4, 12, 3)


def test_endpoint_shapes_and_simplex():
    hyp = small(EndpointPredictor, L=5)(torch.randn(7, 8, 16))
    assert hyp.points.shape == (7, 5, 2) and hyp.probs.shape == (7, 5)
    assert torch.all(hyp.probs >= 0)
    assert torch.allclose(hyp.probs.sum(-1), torch.ones(7))
    assert hyp.top1().shape == (7, 2)


def test_uniform_logits_give_uniform_probs():
    ep = small(EndpointPredictor, L=4)
    with torch.no_grad():
        ep.score_head[-1].weight.zero_()
        ep.score_head[-1].bias.fill_(0.7)
    hyp = ep(torch.randn(3, 8, 16))
    assert torch.allclose(hyp.probs, torch.full((3, 4), 0.25))


def test_endpoint_candidates_are_distinct():
    ep = small(EndpointPredictor, L=5)
    pts = ep(torch.randn(100, 8, 16)).points
    gaps = torch.cdist(pts, pts)
    off_diag = gaps[:, ~torch.eye(5, dtype=torch.bool)]
    assert off_diag.min() > 1e-4


def test_rejects_zero_candidates():
    with pytest.raises(ValueError):
        small(EndpointPredictor, L=0)


@pytest.mark.parametrize("cls", [MotionEncoder, IntentPredictor, EndpointPredictor])
def test_batch_permutation_equivariance(cls):
    net = small(cls).eval()
    x = torch.randn(6, 8, 2 if cls is MotionEncoder else 16)
    perm = torch.randperm(6)
    out = net(x)
    out_p = net(x[perm])
    a = out.points if cls is EndpointPredictor else out
    b = out_p.points if cls is EndpointPredictor else out_p
    assert torch.allclose(a[perm], b, atol=1e-5)


def test_forward_is_deterministic():
    net = small(IntentPredictor).eval()
    x = torch.randn(3, 8, 16)
    assert torch.equal(net(x), net(x))


class _IntentProbe(torch.nn.Module):
    """Intent predictor whose only trainable parameters are three head weights."""

    def __init__(self):
        super().__init__()
        self.net = small(IntentPredictor, t_pred=4).double()
        for p in self.net.parameters():
            p.requires_grad_(False)
        self.theta = torch.nn.Parameter(self.net.head.bias.detach().clone() + 0.3)
        self.feats = torch.randn(2, 8, 16, dtype=torch.float64, generator=torch.Generator().manual_seed(5))

    def forward(self):
        h = self.net.blocks(torch.cat([self.feats, self.net.slots.expand(2, -1, -1)], dim=1))[:, -4:]
        return h @ self.net.head.weight.T + self.theta


def test_intent_gradient_matches_finite_differences():
    probe = _IntentProbe()
    target = torch.randn(2, 4, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(6))
    assert finite_difference_check(lambda y: ((y - target) ** 2).mean(), probe) < 1e-4


def test_full_model_outputs_finite():
    cfg = ExperimentConfig(d=16, encoder_depth=1, intent_depth=1, endpoint_depth=1, heads=2,
                           denoiser_width=16, denoiser_depth=1, denoiser_heads=2, refine_hidden=8, L=3)
    torch.manual_seed(0)
    m = IntentDiffusion(cfg)
    cond = m.conditions(torch.randn(4, 8, 2))
    assert cond.intent.theta.shape == (4, 12)
    assert torch.all(cond.intent.radius > 0)
    assert cond.endpoints.points.shape == (4, 3, 2)
    parts = m.compute_losses(torch.randn(4, 8, 2), torch.randn(4, 12, 2), torch.tensor([1, 2, 50, 100]),
                             torch.randn(4, 12, 2))
    assert set(parts) == {"L_theta", "L_r", "L_e", "L_p", "L_dif", "total"}
    assert all(np.isfinite(float(v.detach())) for v in parts.values())
