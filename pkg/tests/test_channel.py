import math

import numpy as np
import pytest
import torch
from scipy import stats

from semhide.channel import (
    ChannelConfig,
    awgn,
    denormalize,
    dump_trace,
    empirical_snr_db,
    load_trace,
    noise_variance,
    power_normalize,
    power_normalize_batch,
    transmit,
)
from semhide.errors import ChannelError, ShapeError


def test_constant_latent():
    x, s = power_normalize(torch.full((10,), 2.0))
    assert s.item() == pytest.approx(2.0)
    assert torch.allclose(x, torch.ones(10))


def test_unit_power_output():
    z = torch.randn(16, 2, 8, 8, generator=torch.Generator().manual_seed(0)) * 7.3 + 1.1
    x, _ = power_normalize(z)
    assert abs(x.double().pow(2).mean().item() - 1.0) < 1e-6


def test_zero_latent_rejected():
    with pytest.raises(ChannelError):
        power_normalize(torch.zeros(16))
    with pytest.raises(ChannelError):
        power_normalize_batch(torch.zeros(2, 16))


def test_infinite_snr_is_identity():
    x = torch.randn(100)
    assert awgn(x, math.inf) is x
    assert torch.equal(transmit(x, ChannelConfig(snr_db=math.inf)), x)


def test_noise_variance_at_0db():
    assert noise_variance(0.0) == 1.0
    assert noise_variance(10.0) == pytest.approx(0.1)


def test_invalid_snr():
    with pytest.raises(ChannelError):
        ChannelConfig(snr_db=float("nan"))


@pytest.mark.parametrize("snr", [0.0, 10.0, 20.0])
def test_empirical_snr(snr):
    z = torch.randn(1_000_000, generator=torch.Generator().manual_seed(1), dtype=torch.float64)
    x, _ = power_normalize(z)
    y = transmit(x, ChannelConfig(snr_db=snr, seed=7))
    assert abs(empirical_snr_db(x.numpy(), y.numpy()) - snr) < 0.2


def test_per_row_snr_tensor():
    x = torch.ones(2, 200_000, dtype=torch.float64)
    y = awgn(x, torch.tensor([0.0, 20.0]), torch.Generator().manual_seed(0))
    v = (y - x).var(dim=1)
    assert v[0].item() == pytest.approx(1.0, rel=0.02)
    assert v[1].item() == pytest.approx(0.01, rel=0.02)


def test_transmit_seeded():
    x = torch.ones(1000)
    a = transmit(x, ChannelConfig(10, seed=3))
    assert torch.equal(a, transmit(x, ChannelConfig(10, seed=3)))
    assert not torch.equal(a, transmit(x, ChannelConfig(10, seed=4)))


def _corr_pvalue(a, b):
    # under independence n * r^2 is approximately chi-square with one dof
    r = np.corrcoef(a, b)[0, 1]
    return stats.chi2.sf(len(a) * r * r, df=1)


def test_noise_independence():
    n = 100_000
    x = torch.zeros(n, dtype=torch.float64)
    n1 = transmit(x, ChannelConfig(0.0, seed=11)).numpy()
    n2 = transmit(x, ChannelConfig(0.0, seed=12)).numpy()
    assert _corr_pvalue(n1, n2) > 0.01
    assert _corr_pvalue(n1[:-1], n1[1:]) > 0.01


def test_denormalize_roundtrip():
    z = torch.randn(16, 2, 4, 4)
    x, s = power_normalize(z)
    assert torch.allclose(denormalize(x, s, z.shape), z, atol=1e-6)


def test_denormalize_errors():
    with pytest.raises(ChannelError):
        denormalize(torch.ones(2048), 0.0, (16, 2, 8, 8))
    with pytest.raises(ShapeError):
        denormalize(torch.ones(2047), 1.0, (16, 2, 8, 8))
    assert denormalize(torch.ones(2048), 1.0, (16, 2, 8, 8)).shape == (16, 2, 8, 8)


def test_trace_roundtrip(tmp_path):
    sig = torch.randn(2048)
    dump_trace(tmp_path / "t.f32", sig, snr_db=10.0)
    arr, meta = load_trace(tmp_path / "t.f32")
    assert meta["snr_db"] == 10.0 and meta["dtype"] == "float32"
    assert np.array_equal(arr, sig.numpy())
