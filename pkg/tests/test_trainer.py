import numpy as np
import pytest
import torch

from semhide.checkpoint import Checkpoint, build_codec, build_hiding, collect_tensors, strip
from semhide.errors import CheckpointError, ConfigError, TrainingDivergedError
from semhide.pipeline import channel_pass, regular_receive, send
from semhide.scheduler import HidingSchedule
from semhide.trainer import TrainConfig, Trainer, build_models, resume, train


def _probe_output(ckpt, chunks):
    codec, hider = build_codec(ckpt), build_hiding(ckpt, "hider")
    extractor = build_hiding(ckpt, "extractor")
    x = torch.from_numpy(chunks[:2])
    with torch.no_grad():
        tx = send(codec, hider, x, x.flip(0), HidingSchedule(2, indices=(1,)))
        rx = channel_pass(tx.latents, 20.0, torch.Generator().manual_seed(0))
        return regular_receive(codec, rx, 5), extractor(rx)


def test_zero_steps_equals_init(small_chunks, tiny_train_config):
    cfg = tiny_train_config(steps=0, pretrain_steps=0)
    ckpt = train(cfg, small_chunks)
    init = collect_tensors(**dict(zip(("codec", "hider", "extractor"), build_models(cfg))))
    assert ckpt.step == 0
    assert init.keys() == ckpt.tensors.keys()
    assert all(torch.equal(init[k], ckpt.tensors[k]) for k in init)


def test_determinism(small_chunks, tiny_train_config):
    cfg = tiny_train_config()
    a, b = Trainer(cfg, small_chunks), Trainer(cfg, small_chunks)
    a.run(), b.run()
    assert a.loss_rows == b.loss_rows
    ta, tb = a.checkpoint().tensors, b.checkpoint().tensors
    assert all(torch.equal(ta[k], tb[k]) for k in ta)


def test_resume_equivalence(small_chunks, tiny_train_config, tmp_path):
    cfg = tiny_train_config(steps=5, pretrain_steps=3)
    full = train(cfg, small_chunks)
    half = Trainer(cfg, small_chunks)
    half.run(4)
    path = half.checkpoint().save(tmp_path / "half.pt")
    resumed = resume(Checkpoint.load(path), 4, small_chunks)
    assert resumed.step == full.step == 8
    assert all(torch.equal(full.tensors[k], resumed.tensors[k]) for k in full.tensors)
    for u, v in zip(_probe_output(full, small_chunks), _probe_output(resumed, small_chunks)):
        assert torch.equal(u, v)


def test_resume_zero_steps_is_identity(small_chunks, tiny_train_config):
    ckpt = train(tiny_train_config(steps=1, pretrain_steps=0), small_chunks)
    again = resume(ckpt, 0, small_chunks)
    assert again is not ckpt
    assert all(torch.equal(again.tensors[k], ckpt.tensors[k]) for k in ckpt.tensors)


def _max_delta(before, after, prefix):
    return max((after[k] - before[k]).abs().max().item() for k in before if k.startswith(prefix))


def test_learning_rate_groups(small_chunks, tiny_train_config):
    cfg = tiny_train_config(steps=1, pretrain_steps=0, capacity_ratio_train=0.5, grad_clip=0.0)
    t = Trainer(cfg, small_chunks)
    before = {k: v.clone() for k, v in t.checkpoint().tensors.items()}
    t.run(1)
    after = t.checkpoint().tensors
    # Adam's first step moves each parameter by at most lr (up to float32 rounding of the weights)
    dc, dh = _max_delta(before, after, "codec."), _max_delta(before, after, "hider.")
    assert cfg.lr_codec * 0.5 < dc <= cfg.lr_codec * 1.01
    assert cfg.lr_hiding * 0.5 < dh <= cfg.lr_hiding * 1.01
    assert dh / dc == pytest.approx(cfg.lr_hiding / cfg.lr_codec, rel=0.5)


def test_secret_free_batch_leaves_hider_untouched(small_chunks, tiny_train_config):
    t = Trainer(tiny_train_config(steps=1, pretrain_steps=0, capacity_ratio_train=0.0), small_chunks)
    t.optimizer.zero_grad(set_to_none=True)
    t.joint_step().backward()
    assert all(p.grad is None or not p.grad.any() for p in t.hider.parameters())
    assert any(p.grad is not None and p.grad.any() for p in t.extractor.parameters())
    kinds = {row[3] for row in t.loss_rows}
    assert kinds == {"secret_free"}


def test_checkpoint_roundtrip_bitwise(small_chunks, tiny_train_config, tmp_path):
    ckpt = train(tiny_train_config(steps=1, pretrain_steps=1), small_chunks)
    back = Checkpoint.load(ckpt.save(tmp_path / "c.pt"))
    assert back.meta == ckpt.meta
    for u, v in zip(_probe_output(ckpt, small_chunks), _probe_output(back, small_chunks)):
        assert torch.equal(u, v)


def test_corrupted_tensor_name(small_chunks, tiny_train_config, tmp_path):
    ckpt = train(tiny_train_config(steps=0, pretrain_steps=0), small_chunks)
    name = next(k for k in ckpt.tensors if k.startswith("codec."))
    ckpt.tensors[name + "_bad"] = ckpt.tensors.pop(name)
    with pytest.raises(CheckpointError, match=name.removeprefix("codec.")):
        build_codec(ckpt)
    with pytest.raises(CheckpointError):
        Checkpoint.load(tmp_path / "missing.pt")


def test_regular_receiver_needs_no_extractor(small_chunks, tiny_train_config):
    ckpt = strip(train(tiny_train_config(steps=0, pretrain_steps=0), small_chunks), "extractor")
    assert not any(k.startswith("extractor.") for k in ckpt.tensors)
    codec = build_codec(ckpt)
    with torch.no_grad():
        z = codec.encode(torch.from_numpy(small_chunks[:1])).mean
        assert regular_receive(codec, z, 5).shape == (1, 3, 5, 16, 16)
    with pytest.raises(CheckpointError):
        build_hiding(ckpt, "extractor")


def test_nan_aborts_with_term(tiny_train_config, small_chunks):
    bad = small_chunks.copy()
    bad[:] = np.nan
    with pytest.raises(TrainingDivergedError, match="cover") as info:
        train(tiny_train_config(steps=1, pretrain_steps=0), bad)
    assert info.value.step == 0


def test_loss_log_format(small_chunks, tiny_train_config, tmp_path):
    train(tiny_train_config(steps=2, pretrain_steps=1), small_chunks, out_dir=tmp_path)
    lines = (tmp_path / "loss_log.csv").read_text().splitlines()
    assert lines[0].startswith("# seed=3")
    assert lines[1] == "step,term,value,sample_kind"
    assert {ln.split(",")[3] for ln in lines[2:]} >= {"pretrain"}


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(steps=-1)
    with pytest.raises(ConfigError):
        TrainConfig(chunk_frames=6)
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()
