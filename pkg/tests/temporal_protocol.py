"""Pretrain-then-finetune comparison for the temporal heads on synthetic data.

Shared by the acceptance suite and runnable on its own:

    python tests/temporal_protocol.py TCN ConvGRU ConvLSTM
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from ballseq.metrics import compute_metrics
from ballseq.synthgen import generate_sequences, occlusion_suite
from ballseq.temporal import TemporalHeadSpec, build_head
from ballseq.trainer import TrainConfig, evaluate_head, fit_head

FRAME = (24, 16)  # (W, H) heatmap size used at desk scale
N_PRETRAIN = 200
PRETRAIN_EPOCHS = 20
PRETRAIN_LR = 1e-5
N_FINETUNE = 20
FINETUNE_EPOCHS = 30
FINETUNE_LR = TrainConfig.for_stage("temporal_finetune_real").lr_temporal
N_SUITE = 200
OCCLUDED = 0.3
HIT_PX = 5.0

# disjoint seed streams per role
PRETRAIN_SEED, FINETUNE_SEED, SUITE_SEED = 1000, 2000, 3000


@dataclass
class RegimeResult:
    kind: str
    seed: int
    hit_ft: float
    hit_real: float
    recall_ft: float
    recall_real: float
    seconds: float
    baseline: float = float("nan")
    losses: dict = field(default_factory=dict)


def baseline_hit_rate(suite, hit_px=HIT_PX) -> float:
    """Hit rate of guessing the peak of the last non-blank history frame."""
    hits = 0
    for hist, (x, y) in suite:
        seen = [m for m in hist if m.max() > 0]
        if not seen:
            continue
        r, c = np.unravel_index(seen[-1].argmax(), seen[-1].shape)
        hits += np.hypot(c - x, r - y) <= hit_px
    return hits / len(suite)


def run_seed(kind: str, seed: int, frame=FRAME, log=print) -> RegimeResult:
    t0 = time.perf_counter()
    pre = generate_sequences(N_PRETRAIN, frame, PRETRAIN_SEED + seed)
    tune = generate_sequences(N_FINETUNE, frame, FINETUNE_SEED + seed)
    suite = occlusion_suite(N_SUITE, frame, SUITE_SEED + seed, OCCLUDED)

    torch.manual_seed(seed)
    ft = build_head(TemporalHeadSpec(kind=kind))
    rep_pre = fit_head(ft, pre, PRETRAIN_LR, PRETRAIN_EPOCHS, windows_per_sequence=1, seed=seed)
    rep_ft = fit_head(ft, tune, FINETUNE_LR, FINETUNE_EPOCHS, windows_per_sequence=1, seed=seed)

    torch.manual_seed(seed)
    real = build_head(TemporalHeadSpec(kind=kind))
    rep_real = fit_head(real, tune, FINETUNE_LR, FINETUNE_EPOCHS, windows_per_sequence=1, seed=seed)

    c_ft, hit_ft = evaluate_head(ft, suite, a_min=0.0, gamma=HIT_PX)
    c_real, hit_real = evaluate_head(real, suite, a_min=0.0, gamma=HIT_PX)
    res = RegimeResult(kind, seed, hit_ft, hit_real, compute_metrics(c_ft)["RC"], compute_metrics(c_real)["RC"],
                       time.perf_counter() - t0, baseline_hit_rate(suite),
                       {"pretrain": rep_pre.epoch_losses, "ft": rep_ft.epoch_losses, "real": rep_real.epoch_losses})
    log(f"{kind} seed={seed} hit_ft={hit_ft:.3f} hit_real={hit_real:.3f} "
        f"RC_ft={res.recall_ft:.3f} RC_real={res.recall_real:.3f} "
        f"baseline={res.baseline:.3f} t={res.seconds:.0f}s")
    return res


def run_protocol(kinds, seeds=(0, 1, 2), frame=FRAME, log=print) -> dict:
    return {k: [run_seed(k, s, frame, log) for s in seeds] for k in kinds}


if __name__ == "__main__":
    torch.set_num_threads(1)
    kinds = sys.argv[1:] or ["TCN"]
    out = run_protocol(kinds, log=lambda s: print(s, flush=True))
    for k, rs in out.items():
        print(k, "median RC ft", np.median([r.recall_ft for r in rs]),
              "real", np.median([r.recall_real for r in rs]),
              "best hit", max(r.hit_ft for r in rs), flush=True)
