"""Command-line entry point: ``semhide <command> [options]``.

Configuration is a flat JSON object with dotted keys (``"trainer.steps"``);
command-line flags override file values. Exit codes: 0 ok, 2 configuration
or usage error, 3 runtime failure. ``SEMHIDE_OUTPUT_ROOT`` prefixes relative
output directories.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CheckpointError, ConfigError, IngestionError, ScheduleError, SemHideError, ShapeError

logger = logging.getLogger("semhide")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUTPUT_ROOT_ENV = "SEMHIDE_OUTPUT_ROOT"

DEFAULTS = {
    "seed": 0,
    "output_dir": "runs/default",
    "data.resolution": [64, 64],
    "data.length": 21,
    "data.num_videos": 4,
    "data.num_shapes": 3,
    "data.chunk_frames": 5,
    "trainer.steps": 2000,
    "trainer.pretrain_steps": 1500,
    "trainer.batch_size": 4,
    "trainer.lr_codec": 2e-5,
    "trainer.lr_hiding": 4e-4,
    "trainer.snr_db_train": [5.0, 30.0],
    "trainer.eval_every": 0,
    "trainer.checkpoint_every": 0,
    "scheduler.capacity_ratio": 0.5,
    "channel.snr_db": 25.0,
    "sweep.snr_grid": [5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
    "sweep.ratio_grid": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
    "adversary.ratios": [0.2, 1.0],
    "adversary.snr_grid": [30.0],
    "adversary.size": 2000,
    "adversary.epochs": 10,
    "adversary.epsilon": 0.01,
    "adversary.pgd_steps": 10,
    "adversary.step_size": None,
    "adversary.beta": 1.0,
    "adversary.num_chunks": 8,
}


def _snr(text) -> float:
    return math.inf if str(text).lower() in ("inf", "+inf", "infinity") else float(text)


def load_config(path, overrides: dict) -> dict:
    cfg = dict(DEFAULTS)
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        data = json.loads(p.read_text())
        unknown = sorted(set(data) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        cfg.update(data)
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def output_dir(cfg) -> Path:
    out = Path(cfg["output_dir"])
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _meta_comment(cfg) -> str:
    return f"seed={cfg['seed']} version={__version__}"


def _write_manifest(out: Path, command: str, cfg: dict, **extra):
    from .metrics import json_safe

    manifest = {"command": command, "version": __version__, "config": cfg, **extra}
    (out / "run_manifest.json").write_text(json.dumps(json_safe(manifest), indent=2, default=str))


def _load_models(path):
    from .checkpoint import Checkpoint, build_codec, build_hiding

    if not path or not Path(path).exists():
        raise ConfigError(f"checkpoint not found: {path}")
    ckpt = Checkpoint.load(path)
    return ckpt, build_codec(ckpt), build_hiding(ckpt, "hider"), build_hiding(ckpt, "extractor")


def _synthetic_videos(cfg, n, seed_base):
    from .data import synthetic_corpus

    return synthetic_corpus(n, tuple(cfg["data.resolution"]), cfg["data.length"], seed=seed_base,
                            num_shapes=cfg["data.num_shapes"])


def _video_dirs(root) -> list[Path]:
    root = Path(root)
    if not root.exists():
        raise ConfigError(f"dataset path not found: {root}")
    if (root / "manifest.json").exists():
        return [root]
    dirs = sorted(p for p in root.iterdir() if (p / "manifest.json").exists())
    if not dirs:
        raise ConfigError(f"no frame directories with manifest.json under {root}")
    return dirs


def _load_videos(root):
    from .data import load_frames

    return [load_frames(d) for d in _video_dirs(root)]


# --------------------------------------------------------------------------
# commands


def cmd_gen_data(args, cfg) -> int:
    from .data import SyntheticSceneConfig, generate_synthetic, write_frames

    out = output_dir(cfg)
    for i in range(cfg["data.num_videos"]):
        sc = SyntheticSceneConfig(num_shapes=cfg["data.num_shapes"], resolution=tuple(cfg["data.resolution"]),
                                  length=cfg["data.length"], seed=cfg["seed"] + i)
        write_frames(generate_synthetic(sc), out / f"video_{i:03d}")
    _write_manifest(out, "gen-data", cfg)
    print(f"wrote {cfg['data.num_videos']} videos to {out}")
    return EXIT_OK


def cmd_train(args, cfg) -> int:
    from .checkpoint import Checkpoint
    from .experiments import chunks_from
    from .trainer import TrainConfig, Trainer, run_manifest, write_manifest

    if args.data:
        videos = _load_videos(args.data)
    else:
        videos = _synthetic_videos(cfg, cfg["data.num_videos"], cfg["seed"])
    chunks = chunks_from(videos, cfg["data.chunk_frames"])
    out = output_dir(cfg)
    tc = TrainConfig(
        steps=cfg["trainer.steps"], pretrain_steps=cfg["trainer.pretrain_steps"],
        batch_size=cfg["trainer.batch_size"], lr_codec=cfg["trainer.lr_codec"], lr_hiding=cfg["trainer.lr_hiding"],
        snr_db_train=tuple(cfg["trainer.snr_db_train"]), capacity_ratio_train=cfg["scheduler.capacity_ratio"],
        chunk_frames=cfg["data.chunk_frames"], seed=cfg["seed"], eval_every=cfg["trainer.eval_every"],
        checkpoint_every=cfg["trainer.checkpoint_every"],
    )
    ckpt = Checkpoint.load(args.resume) if args.resume else None
    if ckpt is not None:
        tc = TrainConfig.from_dict({**ckpt.meta["config"], "steps": tc.steps, "pretrain_steps": tc.pretrain_steps})
    trainer = Trainer(tc, chunks, checkpoint=ckpt, out_dir=out)
    trainer.run()
    trainer.save(out)
    write_manifest(out / "run_manifest.json", run_manifest(tc, extra={"command": "train", "cli_config": cfg,
                                                                      "final_step": trainer.step}))
    print(f"checkpoint: {out / 'checkpoint.pt'} (step {trainer.step})")
    return EXIT_OK


def cmd_transmit(args, cfg) -> int:
    from .data import load_frames, write_frames
    from .pipeline import transmit_video

    _, codec, hider, extractor = _load_models(args.checkpoint)
    cover = load_frames(args.cover) if args.cover else _synthetic_videos(cfg, 1, cfg["seed"])[0]
    secret = load_frames(args.secret) if args.secret else None
    out = output_dir(cfg)
    res = transmit_video(codec, hider, extractor, cover, secret, snr_db=cfg["channel.snr_db"],
                         r=cfg["scheduler.capacity_ratio"], T=cfg["data.chunk_frames"], seed=cfg["seed"])
    write_frames(np.clip(res.regular_cover, 0, 1), out / "regular_receiver")
    write_frames(np.clip(res.authorized_cover, 0, 1), out / "authorized_receiver" / "cover")
    if res.secret.shape[1]:
        write_frames(np.clip(res.secret, 0, 1), out / "authorized_receiver" / "secret")
    (out / "report.json").write_text(res.report.to_json())
    res.report.to_csv(out / "report.csv", comment=_meta_comment(cfg))
    (out / "schedule.json").write_text(res.schedule.to_json())
    _write_manifest(out, "transmit", cfg, null_mse_to_zero=res.null_mse_to_zero)
    print(res.report.to_json())
    return EXIT_OK


SWEEP_FIELDS = ["video", "snr_db", "capacity_ratio", "cover_psnr", "cover_ssim", "cover_fvd_lite",
                "secret_psnr", "secret_ssim", "secret_fvd_lite", "latent_mse", "latent_cosine", "latent_wasserstein",
                "compression_ratio"]


def cmd_sweep(args, cfg) -> int:
    from .pipeline import transmit_video
    from .scheduler import compression_ratio

    snrs = [_snr(s) for s in cfg["sweep.snr_grid"]]
    ratios = [float(r) for r in cfg["sweep.ratio_grid"]]
    if not snrs or not ratios:
        raise ConfigError("sweep grid is empty")
    _, codec, hider, extractor = _load_models(args.checkpoint)
    covers = _load_videos(args.covers) if args.covers else _synthetic_videos(cfg, cfg["data.num_videos"], 200_000)
    secrets = _load_videos(args.secrets) if args.secrets else _synthetic_videos(cfg, len(covers), 300_000)
    out = output_dir(cfg)
    T = cfg["data.chunk_frames"]
    h, w = covers[0].shape[-2:]
    rows = []
    for snr in snrs:
        for r in ratios:
            for vi, (cv, sv) in enumerate(zip(covers, secrets)):
                res = transmit_video(codec, hider, extractor, cv, sv, snr_db=snr, r=r, T=T,
                                     seed=cfg["seed"] + vi, truncate_secret=True)
                rep = res.report
                rows.append({"video": vi, "snr_db": snr, "capacity_ratio": r,
                             **{k: getattr(rep, k) for k in SWEEP_FIELDS[3:-1]},
                             "compression_ratio": compression_ratio(T, h, w, r)})
    path = out / "sweep.csv"
    with path.open("w", newline="") as fh:
        fh.write(f"# {_meta_comment(cfg)}\n")
        wr = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS)
        wr.writeheader()
        for row in rows:
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    render_sweep_plots(path, out / "plots")
    _write_manifest(out, "sweep", cfg, rows=len(rows))
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def read_csv(path) -> list[dict]:
    with Path(path).open() as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def render_sweep_plots(csv_path, plot_dir) -> list[Path]:
    """PSNR / SSIM / FVD-lite vs SNR, one line per capacity ratio and stream."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = read_csv(csv_path)
    plot_dir = Path(plot_dir)
    plot_dir.mkdir(parents=True, exist_ok=True)
    ratios = sorted({float(r["capacity_ratio"]) for r in rows})
    paths = []
    for metric in ("psnr", "ssim", "fvd_lite"):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for stream, style in (("cover", "-"), ("secret", "--")):
            for r in ratios:
                pts = {}
                for row in rows:
                    if float(row["capacity_ratio"]) != r:
                        continue
                    v = float(row[f"{stream}_{metric}"])
                    if math.isfinite(v):
                        pts.setdefault(float(row["snr_db"]), []).append(v)
                if pts:
                    xs = sorted(pts)
                    ax.plot(xs, [np.mean(pts[x]) for x in xs], style, marker="o", label=f"{stream} r={r:g}")
        ax.set_xlabel("SNR (dB)")
        ax.set_ylabel(metric.upper().replace("_", "-"))
        ax.legend(fontsize=6)
        fig.tight_layout()
        p = plot_dir / f"{metric}_vs_snr.png"
        fig.savefig(p, dpi=100, metadata={"Software": None})
        plt.close(fig)
        paths.append(p)
    return paths


def cmd_detect(args, cfg) -> int:
    from .adversary import DetectorConfig, auc_summary, build_detector_dataset, roc, train_detector
    from .experiments import chunks_from

    ckpt, codec, hider, _ = _load_models(args.checkpoint)
    pool = chunks_from(_synthetic_videos(cfg, max(8, cfg["data.num_videos"]), 400_000), cfg["data.chunk_frames"])
    out = output_dir(cfg)
    size = cfg["adversary.size"]
    summaries = []
    for snr in [_snr(s) for s in cfg["adversary.snr_grid"]]:
        for r in cfg["adversary.ratios"]:
            dcfg = DetectorConfig(epochs=cfg["adversary.epochs"], seed=cfg["seed"], train_snr_db=snr,
                                  capacity_ratio_of_traffic=r)
            train_set = build_detector_dataset(codec, hider, r, snr, size, pool, seed=cfg["seed"])
            test_set = build_detector_dataset(codec, hider, r, snr, size, pool, seed=cfg["seed"] + 1)
            det = train_detector(train_set, dcfg)
            curve = roc(det, test_set)
            tag = f"r{r:g}_snr{snr:g}"
            curve.to_csv(out / f"roc_{tag}.csv", comment=_meta_comment(cfg))
            control = roc(train_detector(train_set, dcfg, shuffle_labels=True), test_set)
            control.to_csv(out / f"roc_{tag}_control.csv", comment=_meta_comment(cfg))
            summary = json.loads(auc_summary(curve, r, snr, control_auc=control.auc,
                                             ground_truth_auc=roc(det, test_set, ground_truth=True).auc,
                                             label_noise=train_set.label_noise_rate()))
            (out / f"auc_{tag}.json").write_text(json.dumps(summary, indent=2))
            summaries.append(summary)
            print(json.dumps(summary))
    _write_manifest(out, "detect", cfg, results=summaries)
    return EXIT_OK


def cmd_attack(args, cfg) -> int:
    from .adversary import AttackConfig, attack, write_attack_table
    from .experiments import chunks_from

    eps = cfg["adversary.epsilon"]
    configs = [
        AttackConfig("fgsm", eps, cover_penalty_beta=cfg["adversary.beta"]),
        AttackConfig("pgd", eps, steps=cfg["adversary.pgd_steps"], step_size=cfg["adversary.step_size"],
                     cover_penalty_beta=cfg["adversary.beta"]),
    ]
    _, codec, hider, extractor = _load_models(args.checkpoint)
    n = cfg["adversary.num_chunks"]
    pool = chunks_from(_synthetic_videos(cfg, max(2, n // 2), 500_000), cfg["data.chunk_frames"])
    covers, secrets = pool[:n], pool[n : 2 * n] if len(pool) >= 2 * n else pool[::-1][:n]
    out = output_dir(cfg)
    rows = []
    for ac in configs:
        rows += attack(ac, codec, extractor, hider, covers, secrets, _snr(cfg["channel.snr_db"]), seed=cfg["seed"])
    write_attack_table(rows, out / "attack_table.csv", comment=_meta_comment(cfg))
    _write_manifest(out, "attack", cfg, rows=rows)
    for r in rows:
        print(f"{r['video']:>6} {r['method']:>4}  dPSNR={r['d_psnr']:.3f} dSSIM={r['d_ssim']:.4f} dFVD={r['d_fvd']:.3f}")
    return EXIT_OK


def cmd_report(args, cfg) -> int:
    src = Path(args.sweep_csv)
    if not src.exists():
        raise ConfigError(f"sweep CSV not found: {src}")
    out = output_dir(cfg)
    for p in render_sweep_plots(src, out / "plots"):
        print(p)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semhide", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat JSON config with dotted keys")
        sp.add_argument("--out", dest="output_dir")
        sp.add_argument("--seed", type=int)
        return sp

    g = common(sub.add_parser("gen-data", help="write synthetic videos as frame directories"))
    g.add_argument("--num-videos", type=int, dest="data.num_videos")
    g.add_argument("--resolution", type=int, nargs=2, dest="data.resolution", metavar=("H", "W"))
    g.add_argument("--length", type=int, dest="data.length")
    g.add_argument("--num-shapes", type=int, dest="data.num_shapes")

    t = common(sub.add_parser("train", help="train codec, hider and extractor"))
    t.add_argument("--data", help="frame directory or a directory of them (default: synthetic)")
    t.add_argument("--num-videos", type=int, dest="data.num_videos")
    t.add_argument("--resolution", type=int, nargs=2, dest="data.resolution", metavar=("H", "W"))
    t.add_argument("--steps", type=int, dest="trainer.steps")
    t.add_argument("--pretrain-steps", type=int, dest="trainer.pretrain_steps")
    t.add_argument("--batch-size", type=int, dest="trainer.batch_size")
    t.add_argument("--capacity-ratio", type=float, dest="scheduler.capacity_ratio")
    t.add_argument("--eval-every", type=int, dest="trainer.eval_every")
    t.add_argument("--resume", help="checkpoint to continue from")

    x = common(sub.add_parser("transmit", help="send one cover (and optional secret) video"))
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--cover", help="cover frame directory (default: synthetic)")
    x.add_argument("--secret", help="secret frame directory")
    x.add_argument("--snr-db", type=_snr, dest="channel.snr_db")
    x.add_argument("--capacity-ratio", type=float, dest="scheduler.capacity_ratio")

    s = common(sub.add_parser("sweep", help="SNR x capacity-ratio grid"))
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--covers")
    s.add_argument("--secrets")
    s.add_argument("--num-videos", type=int, dest="data.num_videos")
    s.add_argument("--snr-grid", type=_snr, nargs="*", dest="sweep.snr_grid")
    s.add_argument("--ratio-grid", type=float, nargs="*", dest="sweep.ratio_grid")

    d = common(sub.add_parser("detect", help="train the eavesdropper detector and emit ROC curves"))
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--ratios", type=float, nargs="+", dest="adversary.ratios")
    d.add_argument("--snr-grid", type=_snr, nargs="+", dest="adversary.snr_grid")
    d.add_argument("--size", type=int, dest="adversary.size")
    d.add_argument("--epochs", type=int, dest="adversary.epochs")

    a = common(sub.add_parser("attack", help="FGSM / PGD against secret recovery"))
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--epsilon", type=float, dest="adversary.epsilon")
    a.add_argument("--steps", type=int, dest="adversary.pgd_steps")
    a.add_argument("--step-size", type=float, dest="adversary.step_size")
    a.add_argument("--beta", type=float, dest="adversary.beta")
    a.add_argument("--snr-db", type=_snr, dest="channel.snr_db")
    a.add_argument("--num-chunks", type=int, dest="adversary.num_chunks")

    r = common(sub.add_parser("report", help="render plots from a sweep CSV"))
    r.add_argument("--sweep-csv", required=True)
    return p


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "transmit": cmd_transmit,
    "sweep": cmd_sweep,
    "detect": cmd_detect,
    "attack": cmd_attack,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k in DEFAULTS}
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](args, cfg)
    except (ConfigError, CheckpointError, IngestionError, ShapeError, ScheduleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SemHideError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        logger.exception("unexpected failure")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
