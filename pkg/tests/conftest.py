import numpy as np
import pytest
import torch

from semhide.data import SyntheticSceneConfig, chunk_video, generate_synthetic
from semhide.hiding import HidingNetConfig

TINY_HIDING = HidingNetConfig(latent_dim=16, depth=1, attention_heads=8)
TINY_WIDTHS = (8, 8, 8)


def central_difference_check(f, x, n_coords=20, h=1e-6, seed=0):
    """Compare autograd d f / d x with central differences at random coordinates.

    Returns the worst relative error. ``f`` maps a float64 tensor to a scalar.
    """
    x = x.detach().clone().double().requires_grad_(True)
    (g,) = torch.autograd.grad(f(x), x)
    flat = x.detach().reshape(-1)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in rng.choice(flat.numel(), size=min(n_coords, flat.numel()), replace=False):
        xp, xm = flat.clone(), flat.clone()
        xp[i] += h
        xm[i] -= h
        with torch.no_grad():
            num = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))).item() / (2 * h)
        ana = g.reshape(-1)[i].item()
        worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-6))
    return worst


@pytest.fixture(scope="session")
def small_chunks():
    vids = [generate_synthetic(SyntheticSceneConfig(resolution=(16, 16), length=10, seed=s)) for s in range(4)]
    return np.stack([c for v in vids for c in chunk_video(v, 5)])


@pytest.fixture
def tiny_train_config():
    from semhide.trainer import TrainConfig

    def make(**kw):
        base = dict(steps=4, pretrain_steps=2, batch_size=2, seed=3, codec_widths=TINY_WIDTHS, hiding=TINY_HIDING)
        base.update(kw)
        return TrainConfig(**base)

    return make


# acceptance results, printed once at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, name, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}")
