"""Command-line entry point.

Every subcommand accepts ``--config``, repeated ``--set key=value``, ``--out``
and ``--seed``, writes its artifacts under ``--out`` and finishes with a
``manifest.json`` listing each artifact's sha256 and the config hash.

Exit codes: 0 success, 1 usage, 2 data or checkpoint problem, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import checkpoint as ckpt
from .config import ConfigError, config_hash, dump, load_config
from .datamodel import DOWNSAMPLE, ImageFrame, load_annotations, load_clip, load_image
from .exceptions import DataError, NumericError
from .ffnet import ModelSpec, build_model
from .metrics import benchmark_inference, compute_metrics, format_metrics_table
from .postproc import extract_center
from .synthgen import generate_sequences, load_sequence, save_sequence
from .temporal import HeadKind, TemporalHeadSpec, build_head
from .trainer import (
    Stage,
    TrainConfig,
    evaluate_detector,
    make_real_sequences,
    predict_heatmaps,
    pretrain_temporal,
    train_image_stage,
    train_temporal,
)

log = logging.getLogger("ballseq")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class Run:
    """Per-invocation context: resolved config, output directory, artifact list."""

    def __init__(self, args):
        self.args = args
        self.cfg = load_config(args.config, args.set or (), seed=args.seed)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out / name
        self.artifacts.append(p)
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        return p

    def manifest(self) -> Path:
        entries = [
            {"path": str(p.relative_to(self.out)), "sha256": hashlib.sha256(p.read_bytes()).hexdigest()}
            for p in sorted(set(self.artifacts))
        ]
        doc = {"subcommand": self.args.command, "config_hash": config_hash(self.cfg), "artifacts": entries}
        p = self.out / "manifest.json"
        p.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return p


def _seed(cfg) -> int:
    torch.manual_seed(cfg["seed"])
    return cfg["seed"]


def _a_min(cfg, ck) -> float:
    if cfg["eval.a_min"] == "auto":
        return float(ck.meta.get("a_min", 0.0))
    return float(cfg["eval.a_min"])


def _head_spec(cfg, kind=None) -> TemporalHeadSpec:
    return TemporalHeadSpec(kind=kind or cfg["temporal.head"], history=cfg["temporal.history"],
                            horizon=cfg["temporal.horizon"], init=cfg["temporal.init"])


def _windows_per_seq(cfg) -> Optional[int]:
    return cfg["temporal.windows_per_sequence"] or None


# -- subcommands -------------------------------------------------------------

def cmd_train(run: Run) -> None:
    cfg = run.cfg
    train, test = load_annotations(run.args.annotations, cfg["data.split_ratio"], cfg["seed"])
    _seed(cfg)
    spec = ModelSpec(cfg["model.variant"], cfg["model.base_channels"], cfg["model.dropout_p"],
                     input_shape=train[0][0].shape)
    net = build_model(spec)
    tc = TrainConfig.for_stage(Stage.IMAGE, lr=cfg["train.lr"], batch_size=cfg["train.batch_size"],
                               max_epochs=cfg["train.max_epochs"], max_steps=cfg["train.max_steps"] or None,
                               dropout_p=cfg["model.dropout_p"], seed=cfg["seed"], gamma=cfg["eval.gamma"])
    a_min = None if cfg["eval.a_min"] == "auto" else float(cfg["eval.a_min"])
    try:
        best, report = train_image_stage(tc, net, train, test, a_min)
    except NumericError as exc:
        if getattr(exc, "checkpoint", None) is not None:
            ckpt.save_checkpoint(exc.checkpoint, run.path("last_good.ckpt"))
        raise
    ckpt.save_checkpoint(best, run.path("detector.ckpt"))
    run.write_text("train_log.csv", report.to_csv())
    run.write_text("summary.txt", report.summary())
    run.write_text("metrics.csv", format_metrics_table({spec.variant.value: report.metrics}))
    run.write_text("config.txt", dump(cfg))
    print(report.summary(), end="")


def _load_sequences(run: Run):
    cfg = run.cfg
    if run.args.sequences:
        files = sorted(Path(run.args.sequences).glob("*.seq"))
        if not files:
            raise DataError(f"no .seq files in {run.args.sequences}")
        return [load_sequence(f) for f in files]
    n = run.args.n or cfg["synth.n"]
    return generate_sequences(n, (cfg["synth.frame_w"], cfg["synth.frame_h"]), cfg["seed"])


def cmd_pretrain_temporal(run: Run) -> None:
    cfg = run.cfg
    seqs = _load_sequences(run)
    _seed(cfg)
    head = build_head(_head_spec(cfg, run.args.head))
    tc = TrainConfig.for_stage(Stage.TEMPORAL_PRETRAIN_SYNTH, lr=cfg["temporal.pretrain_lr"],
                               max_epochs=cfg["temporal.pretrain_epochs"], batch_size=cfg["temporal.batch_size"],
                               windows_per_sequence=_windows_per_seq(cfg), seed=cfg["seed"])
    ck, report = pretrain_temporal(tc, head, seqs)
    ckpt.save_checkpoint(ck, run.path(f"head_{head.spec.kind.value}.ckpt"))
    run.write_text("train_log.csv", report.to_csv())
    run.write_text("summary.txt", report.summary())
    run.write_text("config.txt", dump(cfg))
    print(report.summary(), end="")


def cmd_finetune_temporal(run: Run) -> None:
    cfg = run.cfg
    detector_ck = ckpt.load_checkpoint(run.args.ckpt)
    spec = _head_spec(cfg, run.args.head)
    _seed(cfg)
    if run.args.head_ckpt:
        head = ckpt.load_checkpoint(run.args.head_ckpt).head(spec.kind)
        if head.spec.history != spec.history or head.spec.horizon != spec.horizon:
            raise DataError("pretrained head was built for a different history or horizon")
    else:
        head = build_head(spec)
    samples = make_real_sequences(load_clip(run.args.annotations), spec.history, spec.horizon,
                                  cfg["temporal.history_source"])
    if not samples:
        raise DataError(f"{run.args.annotations}: no run of {spec.history + spec.horizon} consecutive ball frames")
    tc = TrainConfig.for_stage(Stage.TEMPORAL_FINETUNE_REAL, lr_detector=cfg["temporal.lr_detector"],
                               lr_temporal=cfg["temporal.lr_temporal"], max_epochs=cfg["temporal.finetune_epochs"],
                               batch_size=cfg["temporal.batch_size"], windows_per_sequence=_windows_per_seq(cfg),
                               seed=cfg["seed"], history_source=cfg["temporal.history_source"])
    ck, report = train_temporal(tc, detector_ck, head, samples)
    ck.meta.setdefault("a_min", detector_ck.meta.get("a_min", 0.0))
    ckpt.save_checkpoint(ck, run.path("temporal.ckpt"))
    run.write_text("train_log.csv", report.to_csv())
    run.write_text("summary.txt", report.summary())
    run.write_text("config.txt", dump(cfg))
    print(report.summary(), end="")


def cmd_eval(run: Run) -> None:
    cfg = run.cfg
    ck = ckpt.load_checkpoint(run.args.ckpt)
    net = ck.detector()
    train, test = load_annotations(run.args.annotations, cfg["data.split_ratio"], cfg["seed"])
    a_min = _a_min(cfg, ck)
    rows = {}
    for split, items in (("train", train), ("test", test)):
        if items:
            rows[split] = compute_metrics(evaluate_detector(net, items, a_min, cfg["eval.gamma"]))
    table = format_metrics_table({ck.model_spec.variant.value: rows})
    run.write_text("metrics.csv", table)
    print(table, end="")


def cmd_infer(run: Run) -> None:
    ck = ckpt.load_checkpoint(run.args.ckpt)
    net = ck.detector()
    a_min = _a_min(run.cfg, ck)
    frames = [ImageFrame(load_image(p), source_id=str(p)) for p in run.args.images]
    lines = ["image_path,c_x,c_y"]
    for path, m in zip(run.args.images, predict_heatmaps(net, frames)):
        c = extract_center(m, a_min)
        x, y = (c.c_x * DOWNSAMPLE, c.c_y * DOWNSAMPLE) if c.detected else (-1.0, -1.0)
        lines.append(f"{path},{x:.2f},{y:.2f}")
    text = "\n".join(lines) + "\n"
    run.write_text("centers.csv", text)
    print(text, end="")


def cmd_synth(run: Run) -> None:
    cfg = run.cfg
    n = run.args.n or cfg["synth.n"]
    for i, seq in enumerate(generate_sequences(n, (cfg["synth.frame_w"], cfg["synth.frame_h"]), cfg["seed"])):
        save_sequence(seq, run.path(f"seq_{i:04d}.seq"))
    print(f"wrote {n} sequences to {run.out}")


def cmd_bench(run: Run) -> None:
    cfg = run.cfg
    _seed(cfg)
    h, w = cfg["bench.frame_h"], cfg["bench.frame_w"]
    models = {k.value: build_head(_head_spec(cfg, k)) for k in (HeadKind.TCN, HeadKind.CONVGRU, HeadKind.CONVLSTM)}
    x = torch.rand(1, cfg["temporal.history"], h, w)
    report = benchmark_inference(models, x, trials=cfg["bench.trials"], warmup=cfg["bench.warmup"])
    run.write_text("latency.csv", report.to_csv())
    print(report.to_csv(), end="")


def cmd_plot(run: Run) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    seq = load_sequence(run.args.sequence)
    maps = seq.maps
    vmax = float(maps.max()) or 1.0
    for i, m in enumerate(maps):
        fig, ax = plt.subplots(figsize=(4, 3))
        im = ax.imshow(m, cmap="viridis", vmin=0.0, vmax=vmax)
        fig.colorbar(im, ax=ax)
        ax.set_title(f"frame {i}")
        fig.savefig(run.path(f"frame_{i:04d}.png"), dpi=60, metadata={"Software": None})
        plt.close(fig)
    pos = np.asarray(seq.positions)
    fig, ax = plt.subplots(figsize=(4, 3))
    im = ax.imshow(maps.max(axis=0), cmap="viridis", vmin=0.0, vmax=vmax)
    fig.colorbar(im, ax=ax)
    ax.plot(pos[:, 0], pos[:, 1], "w-", lw=0.8)
    ax.plot(*pos[0], "wo", ms=3)
    ax.set_title("trajectory")
    fig.savefig(run.path("trajectory.png"), dpi=80, metadata={"Software": None})
    plt.close(fig)
    print(f"wrote {len(maps) + 1} images to {run.out}")


COMMANDS = {
    "train": cmd_train,
    "pretrain-temporal": cmd_pretrain_temporal,
    "finetune-temporal": cmd_finetune_temporal,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "synth": cmd_synth,
    "bench": cmd_bench,
    "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")

    parser = _Parser(prog="ballseq", description="Ball detection and temporal prediction on heatmaps.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    heads = [k.value for k in HeadKind]

    p = sub.add_parser("train", parents=[common], help="train the single-frame detector")
    p.add_argument("--annotations", required=True, help="annotation index (CSV)")

    p = sub.add_parser("pretrain-temporal", parents=[common], help="pretrain a head on synthetic sequences")
    p.add_argument("--head", choices=heads)
    p.add_argument("--sequences", help="directory of .seq files (default: generate)")
    p.add_argument("--n", type=int, help="number of sequences to generate")

    p = sub.add_parser("finetune-temporal", parents=[common], help="train detector, gate and head on a clip")
    p.add_argument("--ckpt", required=True, help="detector checkpoint")
    p.add_argument("--head-ckpt", help="pretrained head checkpoint (omit to start from scratch)")
    p.add_argument("--head", choices=heads)
    p.add_argument("--annotations", required=True, help="time-ordered annotation index (CSV)")

    p = sub.add_parser("eval", parents=[common], help="detector metrics on the train/test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--annotations", required=True)

    p = sub.add_parser("infer", parents=[common], help="print ball centres for images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("images", nargs="+")

    p = sub.add_parser("synth", parents=[common], help="write synthetic heatmap sequences")
    p.add_argument("--n", type=int)

    sub.add_parser("bench", parents=[common], help="head-only latency benchmark")

    p = sub.add_parser("plot", parents=[common], help="render a sequence as heatmap images")
    p.add_argument("--sequence", required=True)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        ctx = Run(args)
        COMMANDS[args.command](ctx)
        ctx.manifest()
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"ballseq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"ballseq: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"ballseq: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
