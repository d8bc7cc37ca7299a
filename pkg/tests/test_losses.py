import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_difference_check
from semhide.codec import LatentDistribution
from semhide.errors import ConfigError, ShapeError
from semhide.losses import (
    CHARB_EPS,
    TERMS,
    LossWeights,
    ModelOutputs,
    RandomConvFeatures,
    SampleKind,
    charbonnier,
    combine,
    embedding_constraint,
    feature_distance,
    kl_standard,
    null_loss,
    total_loss,
)


def _dist(mu, var, shape=(4, 3)):
    return LatentDistribution(torch.full(shape, float(mu), dtype=torch.float64), torch.full(shape, float(var), dtype=torch.float64).log())


def test_charbonnier_identity_is_eps():
    x = torch.rand(3, 5, 8, 8, dtype=torch.float64)
    assert abs(charbonnier(x, x).item() - CHARB_EPS) < 1e-12


def test_charbonnier_known_value():
    x, y = torch.zeros(4, dtype=torch.float64), torch.full((4,), 0.5, dtype=torch.float64)
    assert charbonnier(x, y).item() == pytest.approx((0.25 + 1e-6) ** 0.5, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_charbonnier_symmetric(seed):
    g = torch.Generator().manual_seed(seed)
    x, y = torch.randn(20, generator=g, dtype=torch.float64), torch.randn(20, generator=g, dtype=torch.float64)
    assert charbonnier(x, y).item() == charbonnier(y, x).item()
    assert charbonnier(x, y).item() >= CHARB_EPS


def test_charbonnier_errors():
    with pytest.raises(ShapeError):
        charbonnier(torch.zeros(3), torch.zeros(4))
    with pytest.raises(ConfigError):
        charbonnier(torch.zeros(3), torch.zeros(3), epsilon=0.0)


def test_kl_analytic():
    assert abs(kl_standard(_dist(0, 1)).item()) < 1e-6
    assert abs(kl_standard(_dist(1, 1)).item() - 1.0) < 1e-6


@settings(max_examples=30, deadline=None)
@given(mu=st.floats(-3, 3), var=st.floats(0.05, 5))
def test_kl_is_twice_textbook(mu, var):
    d = _dist(mu, var, shape=(1,))
    ref = torch.distributions.kl_divergence(
        torch.distributions.Normal(d.mean, d.var.sqrt()), torch.distributions.Normal(0.0, 1.0)
    ).mean()
    assert kl_standard(d).item() == pytest.approx(2 * ref.item(), rel=1e-9, abs=1e-12)


def test_embedding_analytic():
    assert abs(embedding_constraint(_dist(0.3, 2.0), _dist(0.3, 2.0)).item()) < 1e-6
    assert abs(embedding_constraint(_dist(1, 1), _dist(0, 1)).item() - 1.0) < 1e-6


def test_embedding_is_nonnegative():
    g = torch.Generator().manual_seed(0)
    a = LatentDistribution(torch.randn(500, generator=g), torch.randn(500, generator=g))
    b = LatentDistribution(torch.randn(500, generator=g), torch.randn(500, generator=g))
    assert embedding_constraint(a, b).item() >= 0


def test_null_loss_matches_charbonnier_to_zero():
    x = torch.rand(3, 5, 8, 8)
    assert null_loss(x).item() == charbonnier(x, torch.zeros_like(x)).item()
    assert abs(null_loss(torch.zeros(10)).item() - CHARB_EPS) < 1e-9


def test_gradients():
    g = torch.Generator().manual_seed(0)
    y = torch.rand(3, 5, 8, 8, generator=g, dtype=torch.float64)
    x0 = torch.rand(3, 5, 8, 8, generator=g, dtype=torch.float64)
    assert central_difference_check(lambda x: charbonnier(x, y), x0) < 1e-3

    lv = torch.randn(2, 16, 2, 4, generator=g, dtype=torch.float64)
    mu = torch.randn(2, 16, 2, 4, generator=g, dtype=torch.float64)
    assert central_difference_check(lambda m: kl_standard(LatentDistribution(m, lv)), mu) < 1e-3
    assert central_difference_check(lambda v: kl_standard(LatentDistribution(mu, v)), lv, seed=1) < 1e-3

    cover = LatentDistribution(mu.flip(0), lv.flip(0))
    assert central_difference_check(lambda m: embedding_constraint(LatentDistribution(m, lv), cover), mu) < 1e-3
    assert central_difference_check(lambda v: embedding_constraint(LatentDistribution(mu, v), cover), lv, seed=2) < 1e-3

    phi = RandomConvFeatures().double()
    assert central_difference_check(lambda x: feature_distance(x, y, phi), x0, seed=3) < 1e-3


def test_random_features_frozen_and_seeded():
    a, b = RandomConvFeatures(), RandomConvFeatures()
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))
    assert not any(p.requires_grad for p in a.parameters())


def _outputs(kind, seed=0):
    g = torch.Generator().manual_seed(seed)
    r = lambda *s: torch.rand(*s, generator=g)
    lat = lambda: LatentDistribution(torch.randn(1, 16, 2, 2, 2, generator=g), torch.randn(1, 16, 2, 2, 2, generator=g))
    out = ModelOutputs(cover=r(1, 3, 5, 16, 16), cover_hat=r(1, 3, 5, 16, 16), cover_dist=lat(), secret_hat=r(1, 3, 5, 16, 16))
    if kind is SampleKind.PAIR:
        out.secret, out.secret_dist, out.fused_dist = r(1, 3, 5, 16, 16), lat(), lat()
    return out


def test_secret_free_terms_are_exact_zero():
    phi = RandomConvFeatures()
    _, terms = total_loss(SampleKind.SECRET_FREE, _outputs(SampleKind.SECRET_FREE), LossWeights(), phi)
    for k in ("secret", "kl_secret", "embedding"):
        assert terms[k].item() == 0.0
    assert terms["null"].item() > 0
    _, terms = total_loss(SampleKind.PAIR, _outputs(SampleKind.PAIR), LossWeights(), phi)
    assert terms["null"].item() == 0.0


def test_linear_in_weights():
    phi = RandomConvFeatures()
    out = _outputs(SampleKind.PAIR)
    _, terms = total_loss(SampleKind.PAIR, out, LossWeights(), phi)
    w1 = LossWeights(cover=0.5, secret=2.0, perceptual=0.3, kl_cover=1.0, kl_secret=0.0, embedding=0.7, null=3.0)
    w2 = LossWeights(cover=1.5, secret=0.0, perceptual=0.2, kl_cover=0.0, kl_secret=4.0, embedding=0.1, null=1.0)
    both = LossWeights(**{k: getattr(w1, k) + getattr(w2, k) for k in TERMS})
    assert combine(terms, both).item() == pytest.approx(combine(terms, w1).item() + combine(terms, w2).item(), rel=1e-6)
    assert combine(terms, LossWeights.zeros()).item() == 0.0


def test_negative_weight_rejected():
    with pytest.raises(ConfigError):
        LossWeights(cover=-1.0)


def test_pair_requires_secret():
    with pytest.raises(ConfigError):
        total_loss(SampleKind.PAIR, _outputs(SampleKind.SECRET_FREE), LossWeights(), RandomConvFeatures())
