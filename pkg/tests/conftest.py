import pytest

from intentdiff.config import ExperimentConfig

TINY = dict(
    d=16, encoder_depth=1, intent_depth=1, endpoint_depth=1, heads=2, denoiser_width=16, denoiser_depth=1,
    denoiser_heads=2, refine_hidden=8, L=3, synthetic_count=40, synthetic_test_count=8, batch_size=16,
    n_samples=4, val_fraction=0.0,
)


@pytest.fixture
def tiny_cfg():
    def make(**kw):
        return ExperimentConfig(**{**TINY, **kw})

    return make
