import itertools
import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linear_sum_assignment
from skimage.metrics import structural_similarity

from semhide import _accel, kernels
from semhide.errors import ConfigError, ShapeError
from semhide.metrics import (
    MetricReport,
    cosine_similarity,
    frechet_distance,
    fvd_lite,
    mse,
    psnr,
    report,
    ssim,
    wasserstein_1d,
)

finite = st.floats(-100, 100, allow_nan=False, width=64)


def test_psnr_cases():
    x = np.zeros((3, 5, 16, 16))
    assert psnr(x, x) == 100.0
    assert psnr(x, x + 0.1) == pytest.approx(20.0)
    assert psnr(x, x + 1.0) == pytest.approx(0.0)
    with pytest.raises(ShapeError):
        psnr(x, x[:, :4])


def test_mse_torch_and_numpy_agree():
    a = torch.rand(3, 5, 8, 8)
    b = torch.rand(3, 5, 8, 8)
    assert mse(a, b) == pytest.approx(mse(a.numpy(), b.numpy()))


def test_ssim_identity_and_inverse():
    rng = np.random.default_rng(0)
    x = rng.random((3, 5, 32, 32))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    assert ssim(x, 1.0 - x) < 0


def test_ssim_constant_closed_form():
    a, b = 0.2, 0.7
    x, y = np.full((32, 32), a), np.full((32, 32), b)
    c1 = 0.01**2
    assert ssim(x, y) == pytest.approx((2 * a * b + c1) / (a * a + b * b + c1), rel=1e-9)


def test_ssim_matches_reference_implementation():
    rng = np.random.default_rng(1)
    x = rng.random((40, 36))
    y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
    ref = structural_similarity(
        x, y, data_range=1.0, gaussian_weights=True, sigma=1.5, use_sample_covariance=False
    )
    assert ssim(x, y) == pytest.approx(ref, abs=1e-9)


def test_ssim_window_too_large():
    with pytest.raises(ShapeError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_cosine():
    a = np.array([1.0, 0.0])
    assert cosine_similarity(a, a) == pytest.approx(1.0)
    assert cosine_similarity(a, -a) == pytest.approx(-1.0)
    assert cosine_similarity(a, np.array([0.0, 2.0])) == pytest.approx(0.0)
    with pytest.raises(ConfigError):
        cosine_similarity(a, np.zeros(2))


def _brute_w1(a, b):
    return min(np.mean(np.abs(a - b[list(p)])) for p in itertools.permutations(range(len(b))))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8).flatmap(lambda n: st.tuples(arrays(np.float64, n, elements=finite), arrays(np.float64, n, elements=finite))))
def test_w1_equals_brute_force_assignment(pair):
    a, b = pair
    expected = _brute_w1(a, b) if len(a) <= 7 else None
    rows, cols = linear_sum_assignment(np.abs(a[:, None] - b[None, :]))
    lsa = np.abs(a[rows] - b[cols]).mean()
    got = wasserstein_1d(a, b)
    assert got == pytest.approx(lsa, rel=1e-9, abs=1e-9)
    if expected is not None:
        assert got == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_w1_size_8_exhaustive():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=8), rng.normal(size=8)
    assert wasserstein_1d(a, b) == pytest.approx(_brute_w1(a, b), rel=1e-12)


def test_w1_errors():
    with pytest.raises(ShapeError):
        wasserstein_1d(np.zeros(3), np.zeros(4))


def test_frechet_identical_is_zero():
    f = np.random.default_rng(0).normal(size=(200, 8))
    assert abs(frechet_distance(f, f)) < 1e-8


def test_frechet_mean_shift_closed_form():
    rng = np.random.default_rng(0)
    n, d = 20_000, 8
    a = rng.normal(size=(n, d))
    v = rng.normal(size=d)
    b = rng.normal(size=(n, d)) + v
    assert frechet_distance(a, b) == pytest.approx(float(v @ v), rel=0.05)


def test_frechet_symmetric_and_needs_samples():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(50, 4)), rng.normal(1.0, 2.0, size=(60, 4))
    assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), rel=1e-8)
    with pytest.raises(ShapeError):
        frechet_distance(a[:1], b)


def test_fvd_lite_identity():
    vids = [np.random.default_rng(i).random((3, 5, 16, 16)).astype(np.float32) for i in range(4)]
    assert abs(fvd_lite(vids, vids)) < 1e-6


def test_report_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    pairs = [(rng.random((3, 5, 16, 16)), rng.random((3, 5, 16, 16))) for _ in range(3)]
    lat = [(rng.normal(size=(16, 2, 2, 2)), rng.normal(size=(16, 2, 2, 2)))]
    rep = report(pairs, pairs, lat)
    assert math.isfinite(rep.secret_fvd_lite) and math.isfinite(rep.latent_wasserstein)
    text = rep.to_csv(tmp_path / "m.csv", comment="seed=0")
    assert text.startswith("# seed=0")
    back = MetricReport.from_csv(tmp_path / "m.csv")
    assert back.cover_psnr == pytest.approx(rep.cover_psnr, abs=1e-6)
    assert "kernel_backend" in rep.to_json()


def test_report_needs_cover():
    with pytest.raises(ConfigError):
        report([])


# numba and numpy paths must agree


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")
def test_kernel_backends_agree():
    rng = np.random.default_rng(0)
    fx, fy = rng.random((4, 24, 20)), rng.random((4, 24, 20))
    taps = kernels.gaussian_window()
    assert np.allclose(kernels.ssim_frames_nb(fx, fy, taps, 1e-4, 9e-4), kernels.ssim_frames_np(fx, fy, taps, 1e-4, 9e-4))
    scores = np.round(rng.random(300), 2)
    labels = (rng.random(300) < 0.4).astype(np.int64)
    for u, v in zip(kernels.roc_sweep_nb(scores, labels), kernels.roc_sweep_np(scores, labels)):
        assert np.allclose(u, v)
    x, y = np.sort(rng.random(50)), rng.random(50)
    assert kernels.trapezoid_nb(y, x) == pytest.approx(kernels.trapezoid_np(y, x))
    a, b = np.sort(rng.random(64)), np.sort(rng.random(64))
    assert kernels.w1_sorted_nb(a, b) == pytest.approx(kernels.w1_sorted_np(a, b))


def test_report_json_is_strict_when_secret_absent():
    import json

    text = MetricReport(cover_psnr=20.0).to_json()
    # strict parsers reject NaN tokens
    parsed = json.loads(text, parse_constant=lambda c: pytest.fail(f"non-standard token {c}"))
    assert parsed["metrics"]["cover_psnr"] == 20.0
    assert parsed["metrics"]["secret_psnr"] is None
