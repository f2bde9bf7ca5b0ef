"""scikit-learn style wrappers around the detector, the heads and postprocessing.

Centres are returned as an ``(n, 2)`` array of ``(x, y)`` in heatmap pixels,
with ``(-1, -1)`` for frames without a detection.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .datamodel import BallCenter, BoundingBoxAnnotation
from .ffnet import ModelSpec, build_model
from .metrics import GAMMA, compute_metrics, evaluate_centers
from .postproc import THRESHOLD, estimate_a_min, extract_center
from .synthgen import SyntheticSequence
from .temporal import TemporalHeadSpec, build_head
from .trainer import TrainConfig, fit_head, predict_heatmaps, train_image_stage
from .validation import check_boxes, check_centers, check_frames, check_heatmaps, check_histories


def _centers(maps: np.ndarray, a_min: float, threshold: float = THRESHOLD) -> np.ndarray:
    return np.array([tuple(extract_center(m, a_min, threshold)) for m in maps], dtype=np.float64).reshape(-1, 2)


def _truth_boxes(centers: np.ndarray) -> list[BoundingBoxAnnotation]:
    return [
        BoundingBoxAnnotation.absent() if x < 0 else BoundingBoxAnnotation(x - 1, y - 1, x + 1, y + 1)
        for x, y in centers
    ]


class HeatmapCenterExtractor(TransformerMixin, BaseEstimator):
    """Turn heatmaps into ball centres.

    With ``a_min="auto"``, ``fit`` sets the area gate from the smallest
    thresholded teaching signal among the boxes in ``y``.
    """

    def __init__(self, a_min="auto", threshold: float = THRESHOLD):
        self.a_min = a_min
        self.threshold = threshold

    def fit(self, X, y=None):
        maps = check_heatmaps(X)
        if self.a_min == "auto":
            if y is None:
                raise ValueError("a_min='auto' needs boxes to estimate the area gate")
            self.a_min_ = estimate_a_min(check_boxes(y, len(maps)), maps.shape[1:], self.threshold)
        else:
            if float(self.a_min) < 0:
                raise ValueError("a_min must be >= 0")
            self.a_min_ = float(self.a_min)
        self.map_shape_ = maps.shape[1:]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "a_min_")
        return _centers(check_heatmaps(X), self.a_min_, self.threshold)

    predict = transform


class BallDetector(BaseEstimator):
    """Single-frame detector trained on Gaussian teaching signals."""

    def __init__(self, variant: str = "SweatyNet1", base_channels: int = 8, dropout_p: float = 0.0,
                 lr: float = 1e-3, batch_size: int = 4, max_epochs: int = 100, max_steps: Optional[int] = None,
                 a_min="auto", gamma: float = GAMMA, random_state: int = 0):
        self.variant = variant
        self.base_channels = base_channels
        self.dropout_p = dropout_p
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.max_steps = max_steps
        self.a_min = a_min
        self.gamma = gamma
        self.random_state = random_state

    def fit(self, X, y, X_val=None, y_val=None):
        frames = check_frames(X)
        boxes = check_boxes(y, len(frames))
        test = []
        if X_val is not None:
            vf = check_frames(X_val)
            test = list(zip(vf, check_boxes(y_val, len(vf))))
        torch.manual_seed(self.random_state)
        spec = ModelSpec(self.variant, self.base_channels, self.dropout_p, input_shape=frames[0].shape)
        net = build_model(spec)
        a_min = None if self.a_min == "auto" else float(self.a_min)
        cfg = TrainConfig.for_stage("image", lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                                    max_steps=self.max_steps, dropout_p=self.dropout_p, seed=self.random_state,
                                    gamma=self.gamma)
        self.checkpoint_, self.report_ = train_image_stage(cfg, net, list(zip(frames, boxes)), test, a_min)
        self.detector_ = net
        self.a_min_ = self.checkpoint_.meta["a_min"]
        return self

    def predict_heatmaps(self, X) -> np.ndarray:
        check_is_fitted(self, "detector_")
        return predict_heatmaps(self.detector_, check_frames(X))

    def predict(self, X) -> np.ndarray:
        return _centers(self.predict_heatmaps(X), self.a_min_)

    def score(self, X, y) -> float:
        """F1 at the centre-distance threshold ``gamma``."""
        preds = [BallCenter(*c) for c in self.predict(X)]
        counts = evaluate_centers(preds, check_boxes(y, len(preds)), self.gamma)
        return compute_metrics(counts)["F1"]


class _ArraySequence:
    """Minimal stand-in for a rendered sequence backed by an (n, H, W) array."""

    def __init__(self, maps):
        self.maps = np.ascontiguousarray(maps, dtype=np.float32)

    def __len__(self):
        return len(self.maps)


class TemporalBallPredictor(BaseEstimator):
    """A temporal head fitted on heatmap sequences.

    ``fit`` takes rendered sequences or ``(n_frames, H, W)`` arrays;
    ``predict`` takes ``(n, h, H, W)`` histories and returns the centre
    of the first predicted heatmap.
    """

    def __init__(self, head: str = "TCN", history: int = 20, horizon: int = 1, init: str = "default",
                 lr: float = 1e-5, max_epochs: int = 20, batch_size: int = 1,
                 windows_per_sequence: Optional[int] = None, a_min: float = 0.0, gamma: float = GAMMA,
                 random_state: int = 0):
        self.head = head
        self.history = history
        self.horizon = horizon
        self.init = init
        self.lr = lr
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.windows_per_sequence = windows_per_sequence
        self.a_min = a_min
        self.gamma = gamma
        self.random_state = random_state

    def fit(self, sequences, y=None):
        seqs = [s if isinstance(s, SyntheticSequence) else _ArraySequence(check_heatmaps(s)) for s in sequences]
        if not seqs:
            raise ValueError("no sequences to fit on")
        torch.manual_seed(self.random_state)
        spec = TemporalHeadSpec(kind=self.head, history=self.history, horizon=self.horizon, init=self.init)
        self.head_ = build_head(spec)
        self.report_ = fit_head(self.head_, seqs, self.lr, self.max_epochs, self.batch_size,
                                self.windows_per_sequence, self.random_state)
        return self

    def predict_heatmaps(self, X) -> np.ndarray:
        check_is_fitted(self, "head_")
        x = torch.from_numpy(check_histories(X, self.history))
        self.head_.eval()
        with torch.no_grad():
            return self.head_(x).double().numpy()

    def predict(self, X) -> np.ndarray:
        return _centers(self.predict_heatmaps(X)[:, 0], self.a_min)

    def score(self, X, y) -> float:
        """Fraction of histories whose prediction lands within ``gamma`` of ``y``."""
        pred = self.predict(X)
        truth = check_centers(y, len(pred))
        counts = evaluate_centers([BallCenter(*c) for c in pred], _truth_boxes(truth), self.gamma)
        return counts.TP / len(pred)
