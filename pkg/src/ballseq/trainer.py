"""Training loops for the single-frame detector and the temporal heads."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import Checkpoint, load_checkpoint, make_checkpoint, save_checkpoint
from .datamodel import (
    BoundingBoxAnnotation,
    Heatmap,
    ImageFrame,
    SequenceSample,
    as_array,
    teaching_signal,
)
from .exceptions import CheckpointError, NumericError
from .ffnet import SweatyNet, frames_to_tensor
from .metrics import GAMMA, ConfusionCounts, classify_frame, compute_metrics
from .postproc import estimate_a_min, extract_center
from .synthgen import SyntheticSequence, window_count
from .temporal import TemporalDetector, TemporalHead

log = logging.getLogger(__name__)


class Stage(str, Enum):
    IMAGE = "image"
    TEMPORAL_PRETRAIN_SYNTH = "temporal_pretrain_synth"
    TEMPORAL_FINETUNE_REAL = "temporal_finetune_real"


_STAGE_DEFAULTS = {
    Stage.IMAGE: dict(lr=1e-3, batch_size=4, max_epochs=100),
    Stage.TEMPORAL_PRETRAIN_SYNTH: dict(lr=1e-5, batch_size=1, max_epochs=20),
    Stage.TEMPORAL_FINETUNE_REAL: dict(lr_detector=1e-5, lr_temporal=1e-4, batch_size=1, max_epochs=30),
}


@dataclass
class TrainConfig:
    stage: Stage = Stage.IMAGE
    lr: float = 1e-3
    lr_detector: float = 1e-5
    lr_temporal: float = 1e-4
    batch_size: int = 4
    max_epochs: int = 100
    max_steps: Optional[int] = None
    dropout_p: float = 0.0
    seed: int = 0
    gamma: float = GAMMA
    windows_per_sequence: Optional[int] = None  # None: every stride-1 window each epoch
    history_source: str = "detector"  # or "teaching"

    def __post_init__(self):
        self.stage = Stage(self.stage)
        if self.stage is Stage.IMAGE and self.max_epochs > 100:
            raise ValueError("the image stage runs for at most 100 epochs")
        if self.history_source not in ("detector", "teaching"):
            raise ValueError(f"unknown history_source {self.history_source!r}")

    @classmethod
    def for_stage(cls, stage, **overrides) -> "TrainConfig":
        stage = Stage(stage)
        return cls(stage=stage, **{**_STAGE_DEFAULTS[stage], **overrides})


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    w: Optional[float] = None
    wall_clock_s: float = 0.0
    steps: int = 0
    best_epoch: Optional[int] = None
    optimizer: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["epoch,loss"] + [f"{i},{v:.8g}" for i, v in enumerate(self.epoch_losses)]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        out = [f"steps = {self.steps}", f"best_epoch = {self.best_epoch}", f"w = {self.w}",
               f"wall_clock_s = {self.wall_clock_s:.1f}"]
        out += [f"optimizer.{k} = {v}" for k, v in self.optimizer.items()]
        for split, m in self.metrics.items():
            out += [f"{split}.{k} = {v:.4f}" for k, v in m.items()]
        return "\n".join(out) + "\n"


def _seed_all(seed: int) -> np.random.Generator:
    torch.manual_seed(seed)
    return np.random.default_rng(seed)


def _adam_info(opt: torch.optim.Adam) -> dict:
    g = opt.defaults
    return {"name": "Adam", "betas": tuple(g["betas"]), "eps": g["eps"]}


def _check_finite(loss: torch.Tensor, where: str, last_good: Optional[Checkpoint]) -> None:
    if not torch.isfinite(loss):
        err = NumericError(f"non-finite loss at {where}")
        err.checkpoint = last_good
        raise err


# -- single-frame stage ------------------------------------------------------

def predict_heatmaps(net: SweatyNet, frames: Sequence, batch_size: int = 8) -> np.ndarray:
    net.eval()
    outs = []
    with torch.no_grad():
        for i in range(0, len(frames), batch_size):
            outs.append(net(frames_to_tensor(frames[i:i + batch_size]))[:, 0].double().numpy())
    return np.concatenate(outs) if outs else np.zeros((0, 0, 0))


def evaluate_detector(net: SweatyNet, items: Sequence, a_min: float = 0.0, gamma: float = GAMMA):
    """Confusion counts of the postprocessed detector output over (frame, box) items."""
    if not items:
        return ConfusionCounts()
    maps = predict_heatmaps(net, [f for f, _ in items])
    return ConfusionCounts.from_outcomes(
        classify_frame(extract_center(m, a_min), box, gamma) for m, (_, box) in zip(maps, items)
    )


def train_image_stage(config: TrainConfig, model: SweatyNet, train: Sequence, test: Sequence = (),
                      a_min: Optional[float] = None, checkpoint_path=None):
    """Fit the detector to Gaussian teaching signals with MSE and Adam.

    The checkpoint kept is the one with the best F1 on ``test`` (on
    ``train`` when no test split is given). Returns ``(checkpoint, report)``.
    """
    if not train:
        raise ValueError("empty training set")
    t0 = time.perf_counter()
    rng = _seed_all(config.seed)
    out_shape = train[0][0].output_shape
    if a_min is None:
        a_min = estimate_a_min([b for _, b in train], out_shape)
    x_all = frames_to_tensor([f for f, _ in train])
    y_all = torch.from_numpy(
        np.stack([teaching_signal(b, out_shape).values for _, b in train]).astype(np.float32)
    )
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    report = TrainReport(optimizer=_adam_info(opt))
    select_on = test if test else train
    best_f1, best = -1.0, None
    steps = 0
    for epoch in range(config.max_epochs):
        model.train()
        order = rng.permutation(len(train))
        losses = []
        for i in range(0, len(order), config.batch_size):
            idx = torch.from_numpy(order[i:i + config.batch_size])
            loss = F.mse_loss(model(x_all[idx])[:, 0], y_all[idx])
            _check_finite(loss, f"epoch {epoch} step {steps}", best)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            steps += 1
            if config.max_steps and steps >= config.max_steps:
                break
        report.epoch_losses.append(float(np.mean(losses)))
        f1 = compute_metrics(evaluate_detector(model, select_on, a_min, config.gamma))["F1"]
        if f1 > best_f1:
            best_f1, report.best_epoch = f1, epoch
            best = make_checkpoint(model, meta={"a_min": a_min, "epoch": epoch, "f1": f1})
            if checkpoint_path is not None:
                save_checkpoint(best, checkpoint_path)
        if config.max_steps and steps >= config.max_steps:
            break
    model.load_state_dict(best.detector_state)
    model.eval()
    report.steps = steps
    report.metrics["train"] = compute_metrics(evaluate_detector(model, train, a_min, config.gamma))
    if test:
        report.metrics["test"] = compute_metrics(evaluate_detector(model, test, a_min, config.gamma))
    report.wall_clock_s = time.perf_counter() - t0
    return best, report


# -- temporal heads on heatmap sequences -------------------------------------

def _window_plan(sequences: Sequence[SyntheticSequence], h: int, p: int, per_seq: Optional[int],
                 rng: np.random.Generator) -> list[tuple[int, int]]:
    plan = []
    for s, seq in enumerate(sequences):
        n = window_count(len(seq), h, p)
        if n == 0:
            continue
        starts = np.arange(h, h + n)
        if per_seq is not None and per_seq < n:
            starts = rng.choice(starts, size=per_seq, replace=False)
        plan += [(s, int(j)) for j in starts]
    return [plan[i] for i in rng.permutation(len(plan))]


def fit_head(head: TemporalHead, sequences: Sequence[SyntheticSequence], lr: float, epochs: int,
             batch_size: int = 1, windows_per_sequence: Optional[int] = None, seed: int = 0) -> TrainReport:
    """Train a head on rendered heatmap sequences with MSE over the horizon."""
    t0 = time.perf_counter()
    rng = _seed_all(seed)
    h, p = head.spec.history, head.spec.horizon
    opt = torch.optim.Adam(head.parameters(), lr=lr)
    report = TrainReport(optimizer=_adam_info(opt))
    for epoch in range(epochs):
        head.train()
        plan = _window_plan(sequences, h, p, windows_per_sequence, rng)
        losses = []
        for i in range(0, len(plan), batch_size):
            chunk = plan[i:i + batch_size]
            x = torch.from_numpy(np.stack([sequences[s].maps[j - h:j] for s, j in chunk]))
            y = torch.from_numpy(np.stack([sequences[s].maps[j:j + p] for s, j in chunk]))
            loss = F.mse_loss(head(x), y)
            _check_finite(loss, f"epoch {epoch}", None)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            report.steps += 1
        report.epoch_losses.append(float(np.mean(losses)) if losses else float("nan"))
    head.eval()
    report.wall_clock_s = time.perf_counter() - t0
    return report


def pretrain_temporal(config: TrainConfig, head: TemporalHead, sequences: Sequence[SyntheticSequence],
                      checkpoint_path=None):
    """Synthetic pretraining: rendered heatmaps go straight into the head."""
    report = fit_head(head, sequences, config.lr, config.max_epochs, config.batch_size,
                      config.windows_per_sequence, config.seed)
    ck = make_checkpoint(heads=[head], meta={"stage": config.stage.value})
    if checkpoint_path is not None:
        save_checkpoint(ck, checkpoint_path)
    return ck, report


def evaluate_head(head: TemporalHead, suite: Sequence, a_min: float = 0.0, gamma: float = GAMMA,
                  batch_size: int = 16):
    """Run a head over ``(history, target_center)`` pairs.

    Returns ``(counts, hit_rate)`` where a hit is a detection within
    ``gamma`` of the target centre.
    """
    head.eval()
    outcomes, hits = [], 0
    with torch.no_grad():
        for i in range(0, len(suite), batch_size):
            chunk = suite[i:i + batch_size]
            x = torch.from_numpy(np.stack([np.asarray(hist, dtype=np.float32) for hist, _ in chunk]))
            preds = head(x)[:, 0].double().numpy()
            for m, (_, (cx, cy)) in zip(preds, chunk):
                c = extract_center(m, a_min)
                truth = BoundingBoxAnnotation(cx - 1, cy - 1, cx + 1, cy + 1)
                o = classify_frame(c, truth, gamma)
                outcomes.append(o)
                hits += o.value == "TP"
    return ConfusionCounts.from_outcomes(outcomes), hits / max(len(suite), 1)


# -- temporal stage on real frames -------------------------------------------

def make_real_sequences(video: Sequence, h: int = 20, p: int = 1, history_source: str = "detector"):
    """Cut stride-1 windows from runs of consecutive ball-present frames.

    ``video`` is a time-ordered list of ``(ImageFrame, BoundingBoxAnnotation)``.
    Runs shorter than ``h + p`` are dropped. With ``history_source="detector"``
    the history holds raw frames for the detector to process on the fly;
    ``"teaching"`` substitutes the ground-truth teaching signals.
    """
    runs, cur = [], []
    prev_t = None
    for frame, box in video:
        t = frame.timestamp_index
        contiguous = prev_t is None or t == prev_t + 1
        if box.present and contiguous:
            cur.append((frame, box))
        else:
            if cur:
                runs.append(cur)
            cur = [(frame, box)] if box.present else []
        prev_t = t
    if cur:
        runs.append(cur)
    samples = []
    for run in runs:
        if len(run) < h + p:
            log.warning("skipping a run of %d frames (needs %d)", len(run), h + p)
            continue
        shape = run[0][0].output_shape
        targets = [teaching_signal(b, shape) for _, b in run]
        for j in range(h, len(run) - p + 1):
            hist = [f for f, _ in run[j - h:j]] if history_source == "detector" else targets[j - h:j]
            samples.append(SequenceSample(
                hist, targets[j:j + p],
                target_centers=[b.center for _, b in run[j:j + p]],
                start_index=run[j - h][0].timestamp_index,
            ))
    return samples


def _history_tensor(sample: SequenceSample) -> torch.Tensor:
    if isinstance(sample.history[0], ImageFrame):
        return frames_to_tensor(sample.history)
    return torch.from_numpy(np.stack([as_array(m) for m in sample.history]).astype(np.float32))


def train_temporal(config: TrainConfig, detector_ckpt, head: TemporalHead, samples: Sequence[SequenceSample],
                   checkpoint_path=None):
    """Jointly finetune detector, fusion gate and head on real windows.

    The detector's batch-norm statistics stay frozen; a zero detector
    learning rate freezes its weights as well.
    """
    t0 = time.perf_counter()
    if isinstance(detector_ckpt, (str, Path)):
        detector_ckpt = load_checkpoint(detector_ckpt)
    if detector_ckpt is None:
        raise CheckpointError("a detector checkpoint is required")
    detector = detector_ckpt.detector()
    gate = detector_ckpt.gate(detector)
    model = TemporalDetector(detector, head, gate)
    rng = _seed_all(config.seed)
    h, p = head.spec.history, head.spec.horizon
    usable = [s for s in samples if s.h == h and s.p == p]
    if len(usable) < len(samples):
        log.warning("skipping %d windows that do not match h=%d, p=%d", len(samples) - len(usable), h, p)

    groups = []
    if config.lr_detector > 0:
        groups.append({"params": list(detector.parameters()), "lr": config.lr_detector})
    else:
        detector.requires_grad_(False)
    groups.append({"params": list(gate.parameters()) + list(head.parameters()), "lr": config.lr_temporal})
    opt = torch.optim.Adam(groups)
    report = TrainReport(optimizer=_adam_info(opt))
    last_good = make_checkpoint(detector, gate, [head])
    for epoch in range(config.max_epochs):
        head.train()
        gate.train()
        detector.eval()
        order = rng.permutation(len(usable))
        if config.windows_per_sequence is not None:
            order = order[: config.windows_per_sequence]
        losses = []
        for i in range(0, len(order), config.batch_size):
            chunk = [usable[k] for k in order[i:i + config.batch_size]]
            x = torch.stack([_history_tensor(s) for s in chunk])
            y = torch.from_numpy(np.stack([[as_array(m) for m in s.targets] for s in chunk]).astype(np.float32))
            pred = model(x) if x.dim() == 5 else head(x)
            loss = F.mse_loss(pred, y)
            _check_finite(loss, f"epoch {epoch}", last_good)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            report.steps += 1
        report.epoch_losses.append(float(np.mean(losses)) if losses else float("nan"))
        last_good = make_checkpoint(detector, gate, [head])
    head.eval()
    report.w = float(gate.w.detach())
    ck = make_checkpoint(detector, gate, [head], meta={"stage": config.stage.value, "w": report.w})
    if checkpoint_path is not None:
        save_checkpoint(ck, checkpoint_path)
    report.wall_clock_s = time.perf_counter() - t0
    return ck, report


def predict_temporal(model: TemporalDetector, sample: SequenceSample) -> list[Heatmap]:
    model.eval()
    with torch.no_grad():
        x = _history_tensor(sample)[None]
        out = model(x) if x.dim() == 5 else model.head(x)
    return [Heatmap(o.double().numpy()) for o in out[0]]
