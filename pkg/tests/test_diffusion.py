import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from intentdiff.config import ExperimentConfig
from intentdiff.diffusion import (
    GuidanceBundle,
    GuidanceFusion,
    NoiseEstimator,
    RefineNet,
    SoftMask,
    data_residual_to_noise,
    ddim_step,
    forward_sample,
    make_schedule,
    predict_x0,
    refine_noise,
)
from intentdiff.model import IntentDiffusion

S = make_schedule()


def test_default_schedule_matches_cumprod():
    beta = np.linspace(1e-4, 5e-2, 100)
    np.testing.assert_allclose(S.alpha_bar.numpy(), np.cumprod(1 - beta), rtol=1e-12)
    assert float(S.abar(0)) == 1.0
    # only about 8% of the signal is left at the last step
    assert 0.07 < float(S.abar(100)) < 0.09


def test_single_step_schedule():
    s = make_schedule(K=1, gamma=1)
    assert s.beta.tolist() == [1e-4]
    assert float(s.abar(1)) == pytest.approx(0.9999)
    assert s.sampling_steps() == [1, 0]


def test_constant_schedule_power():
    s = make_schedule(K=10, beta_start=0.01, beta_end=0.01, gamma=10)
    assert float(s.abar(10)) == pytest.approx(0.99**10)
    assert float(s.abar(10)) == pytest.approx(0.90438, abs=1e-5)


def test_sampling_steps_stride_20():
    assert S.sampling_steps() == [100, 80, 60, 40, 20, 0]


@pytest.mark.parametrize("kw", [dict(K=0), dict(beta_start=0.0), dict(beta_start=0.1, beta_end=0.01), dict(gamma=30)])
def test_schedule_validation(kw):
    with pytest.raises(ValueError):
        make_schedule(**kw)


def test_forward_sample_limits():
    y0 = torch.randn(4, 12, 2, dtype=torch.float64)
    eps = torch.randn_like(y0)
    assert torch.equal(forward_sample(y0, 0, eps, S), y0)
    s = make_schedule(K=10, beta_start=0.999, beta_end=0.999, gamma=10)
    assert torch.allclose(forward_sample(y0, 10, eps, s), eps, atol=1e-12)


def test_forward_sample_per_item_steps():
    y0 = torch.randn(3, 12, 2, dtype=torch.float64)
    eps = torch.randn_like(y0)
    k = torch.tensor([1, 50, 100])
    batched = forward_sample(y0, k, eps, S)
    for i in range(3):
        assert torch.allclose(batched[i], forward_sample(y0[i], int(k[i]), eps[i], S))


def test_forward_moments_monte_carlo():
    gen = torch.Generator().manual_seed(0)
    n = 100_000
    y0 = torch.tensor([1.5, -0.7], dtype=torch.float64)
    for k in (1, 50, 100):
        eps = torch.randn(n, 2, generator=gen, dtype=torch.float64)
        y = forward_sample(y0.expand(n, 2), k, eps, S)
        ab = float(S.abar(k))
        se_mean = math.sqrt((1 - ab) / n)
        se_var = (1 - ab) * math.sqrt(2 / (n - 1))
        assert torch.all((y.mean(0) - math.sqrt(ab) * y0).abs() < 3 * se_mean)
        assert torch.all((y.var(0) - (1 - ab)).abs() < 3 * se_var)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 100), st.integers(0, 2**31 - 1))
def test_x0_oracle(k, seed):
    g = torch.Generator().manual_seed(seed)
    y0 = torch.randn(12, 2, generator=g, dtype=torch.float64) * 3
    eps = torch.randn(12, 2, generator=g, dtype=torch.float64)
    yk = forward_sample(y0, k, eps, S)
    assert (predict_x0(yk, k, eps, S) - y0).abs().max() < 1e-8


def oracle_chain(y0, eps, s):
    y = forward_sample(y0, s.K, eps, s)
    for k in s.sampling_steps()[:-1]:
        ab = s.abar(k)
        true_eps = (y - ab.sqrt() * y0) / (1 - ab).sqrt()
        y = ddim_step(y, k, true_eps, s)
    return y


def test_ddim_chain_with_oracle_noise():
    g = torch.Generator().manual_seed(1)
    y0 = torch.randn(20, 12, 2, generator=g, dtype=torch.float64)
    eps = torch.randn_like(y0)
    assert (oracle_chain(y0, eps, S) - y0).abs().max() < 1e-10


def test_ddim_stride_one_chain():
    s = make_schedule(K=10, gamma=1)
    y0 = torch.randn(5, 12, 2, dtype=torch.float64)
    assert (oracle_chain(y0, torch.randn_like(y0), s) - y0).abs().max() < 1e-6


def test_ddim_step_preserves_noise_direction():
    # with the true noise a jump lands exactly on the forward sample at k - stride
    y0 = torch.randn(12, 2, dtype=torch.float64)
    eps = torch.randn_like(y0)
    out = ddim_step(forward_sample(y0, 60, eps, S), 60, eps, S)
    assert torch.allclose(out, forward_sample(y0, 40, eps, S), atol=1e-12)


def test_ddim_rejects_overshoot():
    with pytest.raises(ValueError):
        ddim_step(torch.zeros(12, 2), 10, torch.zeros(12, 2), S)


def test_soft_mask_limits_and_convexity():
    torch.manual_seed(0)
    sm = SoftMask(8).double()
    g = torch.randn(5, 8, dtype=torch.float64)
    with torch.no_grad():
        sm.psi.copy_(torch.randn(8))
        last = sm.mlp[-1]
        last.weight.zero_()
        last.bias.fill_(1e4)
        assert torch.allclose(sm(g), sm.psi.expand(5, 8))
        last.bias.fill_(-1e4)
        assert torch.allclose(sm(g), g)
        last.bias.zero_()
        torch.nn.init.normal_(last.weight)
        out = sm(g)
    lo, hi = torch.minimum(g, sm.psi), torch.maximum(g, sm.psi)
    assert torch.all(out >= lo - 1e-12) and torch.all(out <= hi + 1e-12)


def test_fusion_disabled_modality_and_no_softmask():
    f = GuidanceFusion(6)
    g = torch.randn(3, 6)
    assert torch.equal(f.fuse(None, "s", batch=3), f.masks["s"].psi.expand(3, 6))
    assert torch.equal(f.fuse(g, "o", softmask=False), g)
    assert not torch.equal(f.fuse(g, "o", softmask=True), g)


def bundle(b, d, dtype=torch.float32, seed=0):
    g = torch.Generator().manual_seed(seed)
    return GuidanceBundle(*(torch.randn(b, d, generator=g, dtype=dtype) for _ in range(4)))


def test_estimator_shape():
    est = NoiseEstimator(t_pred=12, d_cond=16, width=32, depth=2, heads=4)
    out = est(bundle(3, 16), torch.randn(3, 12, 2))
    assert out.shape == (3, 12, 2)


def test_estimator_gradient_matches_finite_differences():
    torch.manual_seed(0)
    est = NoiseEstimator(t_pred=4, d_cond=4, width=8, depth=1, heads=2).double()
    b = bundle(2, 4, torch.float64)
    y = torch.randn(2, 4, 2, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(lambda y_: est(b, y_), (y,), eps=1e-6, atol=1e-6, rtol=1e-4)


def test_refiner_is_identity_at_init():
    ref = RefineNet(t_pred=12, d_cond=16, hidden=32)
    eps_hat = torch.randn(3, 12, 2)
    delta = ref(bundle(3, 16), eps_hat)
    assert torch.equal(delta, torch.zeros_like(delta))
    assert torch.equal(refine_noise(eps_hat, delta), eps_hat)


def test_data_residual_moves_x0_estimate():
    k = torch.tensor([5, 60])
    yk, eps_hat, dy = (torch.randn(2, 12, 2, dtype=torch.float64) for _ in range(3))
    eps2 = data_residual_to_noise(eps_hat, dy, k, S)
    assert torch.allclose(predict_x0(yk, k, eps2, S), predict_x0(yk, k, eps_hat, S) + dy, atol=1e-10)


def tiny_cfg(**kw):
    base = dict(d=16, encoder_depth=1, intent_depth=1, endpoint_depth=1, heads=2, denoiser_width=16,
                denoiser_depth=1, denoiser_heads=2, refine_hidden=8, L=3)
    base.update(kw)
    return ExperimentConfig(**base)


def test_refine_disabled_path_is_raw_estimate():
    torch.manual_seed(0)
    m = IntentDiffusion(tiny_cfg(enable_refine=False))
    cond = m.conditions(torch.randn(2, 8, 2))
    y, k = torch.randn(2, 12, 2), torch.tensor([10, 90])
    eps, eps_hat, _ = m.estimate(cond, y, k, return_parts=True)
    assert torch.equal(eps, eps_hat)


def test_sampling_is_deterministic_and_spread():
    torch.manual_seed(0)
    m = IntentDiffusion(tiny_cfg()).eval()
    obs = torch.randn(2, 8, 2)
    init = torch.randn(2, 6, 12, 2)
    a, b = m.sample(obs, init), m.sample(obs, init)
    assert torch.equal(a, b)
    assert a.shape == (2, 6, 12, 2)
    # distinct starting noise gives distinct futures
    assert a[0].std(dim=0).mean() > 1e-3
