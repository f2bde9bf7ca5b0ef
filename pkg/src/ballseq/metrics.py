"""Detection metrics, the centre-distance match rule and a latency harness."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .datamodel import BallCenter, BoundingBoxAnnotation

GAMMA = 5.0


class Outcome(str, Enum):
    TP = "TP"
    FP = "FP"
    FN = "FN"
    TN = "TN"


@dataclass(frozen=True)
class ConfusionCounts:
    TP: int = 0
    FP: int = 0
    FN: int = 0
    TN: int = 0

    def __post_init__(self):
        if min(self.TP, self.FP, self.FN, self.TN) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.FN + self.TN

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.TP + other.TP, self.FP + other.FP, self.FN + other.FN, self.TN + other.TN)

    def add(self, outcome: Outcome) -> "ConfusionCounts":
        d = {k: getattr(self, k) for k in ("TP", "FP", "FN", "TN")}
        d[Outcome(outcome).value] += 1
        return ConfusionCounts(**d)

    @classmethod
    def from_outcomes(cls, outcomes: Iterable[Outcome]) -> "ConfusionCounts":
        tally = {"TP": 0, "FP": 0, "FN": 0, "TN": 0}
        for o in outcomes:
            tally[Outcome(o).value] += 1
        return cls(**tally)


def classify_frame(pred: BallCenter, truth: BoundingBoxAnnotation, gamma: float = GAMMA) -> Outcome:
    """Match one prediction against ground truth.

    A detection farther than ``gamma`` from a present ball counts as a false
    positive, not a miss.
    """
    if not truth.present:
        return Outcome.FP if pred.detected else Outcome.TN
    if not pred.detected:
        return Outcome.FN
    return Outcome.TP if pred.distance(truth.center) <= gamma else Outcome.FP


def compute_metrics(c: ConfusionCounts) -> dict[str, float]:
    """FDR, precision, recall, F1 and accuracy.

    Empty denominators resolve to PR=1/FDR=0, RC=1 and F1=0.
    """
    if c.TP + c.FP:
        pr = c.TP / (c.TP + c.FP)
        fdr = c.FP / (c.FP + c.TP)
    else:
        pr, fdr = 1.0, 0.0
    rc = c.TP / (c.TP + c.FN) if c.TP + c.FN else 1.0
    f1 = 2 * pr * rc / (pr + rc) if pr + rc else 0.0
    acc = (c.TP + c.TN) / c.total if c.total else 0.0
    return {"FDR": fdr, "PR": pr, "RC": rc, "F1": f1, "Acc": acc}


def evaluate_centers(preds: Iterable[BallCenter], truths: Iterable[BoundingBoxAnnotation],
                     gamma: float = GAMMA) -> ConfusionCounts:
    return ConfusionCounts.from_outcomes(classify_frame(p, t, gamma) for p, t in zip(preds, truths, strict=True))


def format_metrics_table(rows: Mapping[str, Mapping[str, Mapping[str, float]]]) -> str:
    """CSV table with train/test columns per metric, one line per model."""
    keys = ("FDR", "PR", "RC", "F1", "Acc")
    header = ["model"] + [f"{k}_{split}" for k in keys for split in ("train", "test")]
    lines = [",".join(header)]
    for name, by_split in rows.items():
        vals = [f"{by_split.get(split, {}).get(k, float('nan')):.3f}" for k in keys for split in ("train", "test")]
        lines.append(",".join([name] + vals))
    return "\n".join(lines) + "\n"


# -- latency ---------------------------------------------------------------

MIN_TRIALS = 30


@dataclass
class LatencyRow:
    name: str
    median_ms: float
    p95_ms: float
    n_trials: int


@dataclass
class LatencyReport:
    rows: list = field(default_factory=list)
    warmup_trials: int = 0

    def __getitem__(self, name: str) -> LatencyRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_csv(self) -> str:
        lines = ["method,median_ms,p95_ms,n_trials,warmup"]
        lines += [f"{r.name},{r.median_ms:.3f},{r.p95_ms:.3f},{r.n_trials},{self.warmup_trials}" for r in self.rows]
        return "\n".join(lines) + "\n"


class BenchmarkError(RuntimeError):
    pass


def benchmark_inference(models: Mapping[str, object], input_source, trials: int = MIN_TRIALS,
                        warmup: int = 10) -> LatencyReport:
    """Median and p95 wall-clock latency per model.

    ``input_source`` is either a fixed input or a callable returning one.
    Torch modules are timed in eval mode under ``torch.inference_mode``.
    """
    import torch

    if trials < MIN_TRIALS:
        raise ValueError(f"at least {MIN_TRIALS} trials are required")
    report = LatencyReport(warmup_trials=warmup)
    get_input = input_source if callable(input_source) else (lambda: input_source)
    for name, model in models.items():
        if isinstance(model, torch.nn.Module):
            model.eval()
        x = get_input()

        def call():
            with torch.inference_mode():
                return model(x)

        for _ in range(warmup):
            call()
        samples = []
        for _ in range(trials):
            t0 = time.perf_counter()
            try:
                call()
            except Exception:
                continue
            samples.append((time.perf_counter() - t0) * 1e3)
        if len(samples) < trials:
            raise BenchmarkError(f"{name}: only {len(samples)} of {trials} trials succeeded")
        report.rows.append(
            LatencyRow(name, statistics.median(samples), float(np.percentile(samples, 95)), len(samples))
        )
    return report
